//! Transformer blocks whose attention projections and depthwise kernels may
//! come from a hyper-network.

use std::sync::Arc;

use hyperweather_tensor::{Real, Var};

use crate::error::Result;
use crate::hyper::{HyperBank, SlotInit};
use crate::nn::{image_to_tokens, msa, reduce_tokens, tokens_to_image, Activation, Ctx, LayerNorm, Linear};
use crate::params::{Builder, Slot};

/// Shape choices for one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub channels: usize,
    pub heads: usize,
    /// Spatial reduction applied to keys and values in grid layout.
    pub sr: usize,
    pub mlp_ratio: usize,
    pub adapt_global: bool,
    pub adapt_local: bool,
    pub activation: Activation,
}

/// How the rows of a token matrix map onto the image plane.
#[derive(Debug, Clone)]
pub enum TokenLayout {
    /// Row-major over an `h×w` grid; attention is global (with reduction).
    Grid,
    /// Groups of four consecutive rows are the 2×2 sub-patches of one parent
    /// patch; attention stays within a group and the feed-forward layer sees
    /// the rows rearranged onto the `h×w` sub-patch grid.
    Windows {
        to_spatial: Arc<Vec<usize>>,
        to_windows: Arc<Vec<usize>>,
    },
}

impl TokenLayout {
    /// Layout for the `2h×2w` sub-patch grid of an `h×w` patch grid with
    /// `channels` features per token.
    pub fn windows(h: usize, w: usize, channels: usize) -> Self {
        let (hs, ws) = (2 * h, 2 * w);
        let mut spatial_to_window = vec![0usize; hs * ws];
        for i in 0..h {
            for j in 0..w {
                for k in 0..4 {
                    let (di, dj) = (k / 2, k % 2);
                    let spatial = (2 * i + di) * ws + 2 * j + dj;
                    spatial_to_window[spatial] = (i * w + j) * 4 + k;
                }
            }
        }
        let mut window_to_spatial = vec![0usize; hs * ws];
        for (s, &win) in spatial_to_window.iter().enumerate() {
            window_to_spatial[win] = s;
        }
        let expand = |rows: &[usize]| -> Vec<usize> {
            rows.iter()
                .flat_map(|&r| (0..channels).map(move |c| r * channels + c))
                .collect()
        };
        TokenLayout::Windows {
            to_spatial: Arc::new(expand(&spatial_to_window)),
            to_windows: Arc::new(expand(&window_to_spatial)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub out: Linear,
    pub heads: usize,
    pub sr: usize,
}

impl Attention {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, bank: &mut HyperBank, name: &str, spec: &BlockSpec) -> Result<Self> {
        let c = spec.channels;
        let mut proj = |which: &str| {
            bank.slot(
                b,
                &format!("{name}.{which}"),
                &[c, c],
                SlotInit::projection(c, c),
                spec.adapt_global,
            )
        };
        let wq = proj("wq")?;
        let wk = proj("wk")?;
        let wv = proj("wv")?;
        let out = b.linear(&format!("{name}.wo"), c, c)?;
        Ok(Attention {
            wq,
            wk,
            wv,
            out,
            heads: spec.heads,
            sr: spec.sr,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        x: Var<'t, T>,
        hw: (usize, usize),
        window: Option<usize>,
    ) -> Result<Var<'t, T>> {
        let kv = match window {
            None => reduce_tokens(x, hw.0, hw.1, self.sr)?,
            Some(_) => x,
        };
        let a = msa(
            x,
            kv,
            ctx.slot(self.wq)?,
            ctx.slot(self.wk)?,
            ctx.slot(self.wv)?,
            self.heads,
            window,
        )?;
        self.out.forward(ctx.bound, a)
    }

    /// Cross-attention: queries from `q_src`, keys and values from `kv_src`.
    pub fn forward_cross<'t, T: Real>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        q_src: Var<'t, T>,
        kv_src: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let a = msa(
            q_src,
            kv_src,
            ctx.slot(self.wq)?,
            ctx.slot(self.wk)?,
            ctx.slot(self.wv)?,
            self.heads,
            None,
        )?;
        self.out.forward(ctx.bound, a)
    }
}

/// `MLP(σ(W_DWC ∗ X))`: expand, depthwise 3×3 on the token image, σ, contract.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub dwc: Slot,
    pub fc2: Linear,
    pub hidden: usize,
    pub activation: Activation,
}

impl FeedForward {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, bank: &mut HyperBank, name: &str, spec: &BlockSpec) -> Result<Self> {
        let hidden = spec.channels * spec.mlp_ratio;
        let fc1 = b.linear(&format!("{name}.fc1"), spec.channels, hidden)?;
        let dwc = bank.slot(
            b,
            &format!("{name}.dwc"),
            &[hidden, 1, 3, 3],
            SlotInit::delta_kernel(hidden, 3),
            spec.adapt_local,
        )?;
        let fc2 = b.linear(&format!("{name}.fc2"), hidden, spec.channels)?;
        Ok(FeedForward {
            fc1,
            dwc,
            fc2,
            hidden,
            activation: spec.activation,
        })
    }

    /// `x` holds `h·w` tokens in row-major spatial order.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>, hw: (usize, usize)) -> Result<Var<'t, T>> {
        let e = self.fc1.forward(ctx.bound, x)?;
        let img = tokens_to_image(e, hw.0, hw.1)?;
        let conv = img.depthwise_conv2d(ctx.slot(self.dwc)?)?;
        let act = self.activation.apply(conv)?;
        self.fc2.forward(ctx.bound, image_to_tokens(act)?)
    }
}

/// LayerNorm → attention → residual → LayerNorm → feed-forward → residual.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl Block {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, bank: &mut HyperBank, name: &str, spec: &BlockSpec) -> Result<Self> {
        Ok(Block {
            ln1: b.layer_norm(&format!("{name}.ln1"), spec.channels)?,
            attn: Attention::build(b, bank, &format!("{name}.attn"), spec)?,
            ln2: b.layer_norm(&format!("{name}.ln2"), spec.channels)?,
            ffn: FeedForward::build(b, bank, &format!("{name}.ffn"), spec)?,
        })
    }

    /// `hw` is the grid the tokens tile (the sub-patch grid for windows).
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        x: Var<'t, T>,
        hw: (usize, usize),
        layout: &TokenLayout,
    ) -> Result<Var<'t, T>> {
        let window = match layout {
            TokenLayout::Grid => None,
            TokenLayout::Windows { .. } => Some(4),
        };
        let a = self.attn.forward(ctx, self.ln1.forward(ctx.bound, x)?, hw, window)?;
        let x = x.add(a)?;
        let n = self.ln2.forward(ctx.bound, x)?;
        let f = match layout {
            TokenLayout::Grid => self.ffn.forward(ctx, n, hw)?,
            TokenLayout::Windows { to_spatial, to_windows } => {
                let shape = n.shape();
                let spatial = n.gather(Arc::clone(to_spatial), &shape)?;
                let f = self.ffn.forward(ctx, spatial, hw)?;
                f.gather(Arc::clone(to_windows), &shape)?
            }
        };
        Ok(x.add(f)?)
    }
}
