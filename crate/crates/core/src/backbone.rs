//! Hierarchical restoration transformer.
//!
//! Each encoder scale optionally modulates its input channels, embeds
//! patches with a stride-2 convolution, refines 2×2 sub-patches with
//! intra-patch blocks and then runs full transformer blocks. The decoder
//! lets a fixed set of learnable queries read the deepest tokens, writes
//! them back into those tokens, and climbs the skip pyramid with
//! convolutional tails to full resolution.

use hyperweather_tensor::{Real, Var};

use crate::blocks::{Attention, Block, BlockSpec, FeedForward, TokenLayout};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hyper::{film, split_film, HyperBank, SlotInit};
use crate::nn::{image_to_tokens, pixel_shuffle, tokens_to_image, Conv, Ctx, LayerNorm, Linear};
use crate::params::{Bound, Builder, ParamId, ParamRole, Slot};

/// Refines each patch token through its four sub-patches.
#[derive(Debug, Clone)]
pub struct IntraPatchBlock {
    pub split: Linear,
    pub block: Block,
    pub merge: Linear,
    pub sub_channels: usize,
}

impl IntraPatchBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, bank: &mut HyperBank, name: &str, spec: &BlockSpec) -> Result<Self> {
        let c = spec.channels;
        let sub = c / 2;
        let inner = BlockSpec {
            channels: sub,
            heads: 1,
            sr: 1,
            ..*spec
        };
        Ok(IntraPatchBlock {
            split: b.linear(&format!("{name}.split"), c, 4 * sub)?,
            block: Block::build(b, bank, &format!("{name}.block"), &inner)?,
            merge: b.linear(&format!("{name}.merge"), 4 * sub, c)?,
            sub_channels: sub,
        })
    }

    /// Number of sub-patch tokens produced for `patches` patch tokens.
    pub fn sub_patch_count(patches: usize) -> usize {
        4 * patches
    }

    /// `x` holds `h·w` patch tokens; returns `x + merge(block(split(x)))`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, x: Var<'t, T>, hw: (usize, usize)) -> Result<Var<'t, T>> {
        let n = x.shape()[0];
        if n != hw.0 * hw.1 {
            return Err(Error::Config(format!(
                "{n} tokens cannot be split as a {}x{} patch grid",
                hw.0, hw.1
            )));
        }
        let sub = self.sub_channels;
        let s = self.split.forward(ctx.bound, x)?.reshape(&[IntraPatchBlock::sub_patch_count(n), sub])?;
        let layout = TokenLayout::windows(hw.0, hw.1, sub);
        let s = self.block.forward(ctx, s, (2 * hw.0, 2 * hw.1), &layout)?;
        let merged = self.merge.forward(ctx.bound, s.reshape(&[n, 4 * sub])?)?;
        Ok(x.add(merged)?)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderStage {
    pub film: Option<Slot>,
    pub embed: Conv,
    pub norm_in: LayerNorm,
    pub intra: Vec<IntraPatchBlock>,
    pub blocks: Vec<Block>,
    pub norm_out: LayerNorm,
    pub channels: usize,
}

/// Per-scale encoder outputs fed to the decoder.
#[derive(Debug, Clone)]
pub struct EncoderState<'t, T: Real> {
    pub tokens: Vec<Var<'t, T>>,
    pub dims: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub queries: ParamId,
    pub q_norm: LayerNorm,
    pub kv_norm: LayerNorm,
    pub read: Attention,
    pub q_mlp_norm: LayerNorm,
    pub q_fc1: Linear,
    pub q_fc2: Linear,
    pub x_norm: LayerNorm,
    pub write_norm: LayerNorm,
    pub write: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    /// `ups[s]` maps scale `s+1` channels to scale `s` channels.
    pub ups: Vec<Conv>,
    pub head: Conv,
    pub input_conv: Conv,
    pub out_conv: Conv,
}

/// Restoration network `F_res`: stages, decoder and the generators for all
/// adaptive slots.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: ModelConfig,
    pub channels: Vec<usize>,
    pub stages: Vec<EncoderStage>,
    pub decoder: Decoder,
    pub bank: HyperBank,
}

impl Backbone {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let channels = cfg.scaled_channels();
        let mut bank = HyperBank::new(cfg.feature_dim, cfg.activation);
        let mut stages = Vec::with_capacity(channels.len());
        let mut cin = 3;
        for (s, &c) in channels.iter().enumerate() {
            let name = format!("enc{s}");
            let film = if cfg.adapt_channel {
                Some(bank.slot(b, &format!("{name}.film"), &[2 * cin], SlotInit::film(cin), true)?)
            } else {
                None
            };
            let spec = BlockSpec {
                channels: c,
                heads: cfg.heads[s],
                sr: cfg.sr_ratios[s],
                mlp_ratio: cfg.mlp_ratio,
                adapt_global: cfg.adapt_global,
                adapt_local: cfg.adapt_local,
                activation: cfg.activation,
            };
            let embed = b.conv(&format!("{name}.embed"), cin, c, 3, 2, 1.0)?;
            let norm_in = b.layer_norm(&format!("{name}.norm_in"), c)?;
            let intra = (0..cfg.intra_blocks)
                .map(|i| IntraPatchBlock::build(b, &mut bank, &format!("{name}.intra{i}"), &spec))
                .collect::<Result<Vec<_>>>()?;
            let blocks = (0..cfg.blocks)
                .map(|i| Block::build(b, &mut bank, &format!("{name}.block{i}"), &spec))
                .collect::<Result<Vec<_>>>()?;
            let norm_out = b.layer_norm(&format!("{name}.norm_out"), c)?;
            stages.push(EncoderStage {
                film,
                embed,
                norm_in,
                intra,
                blocks,
                norm_out,
                channels: c,
            });
            cin = c;
        }
        let decoder = Self::build_decoder(b, &mut bank, cfg, &channels)?;
        Ok(Backbone {
            config: cfg.clone(),
            channels,
            stages,
            decoder,
            bank,
        })
    }

    fn build_decoder<T: Real>(
        b: &mut Builder<'_, T>,
        bank: &mut HyperBank,
        cfg: &ModelConfig,
        channels: &[usize],
    ) -> Result<Decoder> {
        let last = channels.len() - 1;
        let c = channels[last];
        let spec = BlockSpec {
            channels: c,
            heads: cfg.heads[last],
            sr: 1,
            mlp_ratio: cfg.mlp_ratio,
            adapt_global: false,
            adapt_local: false,
            activation: cfg.activation,
        };
        let queries = b.uniform("dec.queries", &[cfg.queries, c], 1.0, ParamRole::Weight)?;
        let q_norm = b.layer_norm("dec.q_norm", c)?;
        let kv_norm = b.layer_norm("dec.kv_norm", c)?;
        let read = Attention::build(b, bank, "dec.read", &spec)?;
        let q_mlp_norm = b.layer_norm("dec.q_mlp_norm", c)?;
        let q_fc1 = b.linear("dec.q_fc1", c, cfg.mlp_ratio * c)?;
        let q_fc2 = b.linear("dec.q_fc2", cfg.mlp_ratio * c, c)?;
        let x_norm = b.layer_norm("dec.x_norm", c)?;
        let write_norm = b.layer_norm("dec.write_norm", c)?;
        let write = Attention::build(b, bank, "dec.write", &spec)?;
        let ffn_norm = b.layer_norm("dec.ffn_norm", c)?;
        let ffn = FeedForward::build(b, bank, "dec.ffn", &spec)?;
        let ups = (0..last)
            .map(|s| b.conv(&format!("dec.up{s}"), channels[s + 1], channels[s], 3, 1, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let tail = cfg.tail_channels;
        let head = b.conv("dec.head", channels[0], 4 * tail, 3, 1, 1.0)?;
        let input_conv = b.conv("dec.input", 3, tail, 3, 1, 1.0)?;
        let out_conv = b.conv("dec.out", tail, 3, 3, 1, 0.1)?;
        Ok(Decoder {
            queries,
            q_norm,
            kv_norm,
            read,
            q_mlp_norm,
            q_fc1,
            q_fc2,
            x_norm,
            write_norm,
            write,
            ffn_norm,
            ffn,
            ups,
            head,
            input_conv,
            out_conv,
        })
    }

    /// Evaluate every generator on `v` (empty when nothing is adaptive).
    pub fn generate<'t, T: Real>(&self, p: &Bound<'t, T>, v: Option<Var<'t, T>>) -> Result<Vec<Var<'t, T>>> {
        if let Some(v) = v {
            let d = v.shape().iter().product::<usize>();
            if d != self.config.feature_dim {
                return Err(Error::Config(format!(
                    "weather vector has {d} entries, model expects {}",
                    self.config.feature_dim
                )));
            }
        }
        self.bank.generate_all(p, v)
    }

    pub fn encode<'t, T: Real>(&self, ctx: &Ctx<'_, 't, T>, image: Var<'t, T>) -> Result<EncoderState<'t, T>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Contract(format!("expected a [3,H,W] image, got {shape:?}")));
        }
        self.config.check_input(shape[1], shape[2])?;
        let (mut h, mut w) = (shape[1], shape[2]);
        let mut x = image;
        let mut state = EncoderState {
            tokens: Vec::with_capacity(self.stages.len()),
            dims: Vec::with_capacity(self.stages.len()),
        };
        for stage in &self.stages {
            if let Some(slot) = stage.film {
                x = film(x, &split_film(ctx.slot(slot)?)?)?;
            }
            let e = stage.embed.forward(ctx.bound, x)?;
            h /= 2;
            w /= 2;
            let mut t = stage.norm_in.forward(ctx.bound, image_to_tokens(e)?)?;
            for intra in &stage.intra {
                t = intra.forward(ctx, t, (h, w))?;
            }
            for block in &stage.blocks {
                t = block.forward(ctx, t, (h, w), &TokenLayout::Grid)?;
            }
            let t = stage.norm_out.forward(ctx.bound, t)?;
            state.tokens.push(t);
            state.dims.push((h, w));
            x = tokens_to_image(t, h, w)?;
        }
        Ok(state)
    }

    /// Decode to a `[3×H×W]` image (unclamped). `image` is the network input
    /// used by the full-resolution branch and the global residual.
    pub fn decode<'t, T: Real>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        state: &EncoderState<'t, T>,
        image: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let n = self.stages.len();
        if state.tokens.len() != n || state.dims.len() != n {
            return Err(Error::Contract(format!(
                "decoder needs {n} scales, got {}",
                state.tokens.len()
            )));
        }
        let d = &self.decoder;
        let p = ctx.bound;
        let act = self.config.activation;
        let (hl, wl) = state.dims[n - 1];
        let x = state.tokens[n - 1];

        let q = p.var(d.queries);
        let kv = d.kv_norm.forward(p, x)?;
        let q = q.add(d.read.forward_cross(ctx, d.q_norm.forward(p, q)?, kv)?)?;
        let m = d.q_fc1.forward(p, d.q_mlp_norm.forward(p, q)?)?;
        let q = q.add(d.q_fc2.forward(p, act.apply(m)?)?)?;
        let x = x.add(d.write.forward_cross(ctx, d.x_norm.forward(p, x)?, d.write_norm.forward(p, q)?)?)?;
        let x = x.add(d.ffn.forward(ctx, d.ffn_norm.forward(p, x)?, (hl, wl))?)?;

        let mut img = tokens_to_image(x, hl, wl)?;
        for s in (0..n - 1).rev() {
            let (h, w) = state.dims[s];
            let up = d.ups[s].forward(p, img.upsample2x()?)?;
            let skip = tokens_to_image(state.tokens[s], h, w)?;
            img = act.apply(up.add(skip)?)?;
        }
        let full = pixel_shuffle(d.head.forward(p, img)?)?;
        let full = act.apply(full.add(d.input_conv.forward(p, image)?)?)?;
        let out = d.out_conv.forward(p, full)?;
        if self.config.global_residual {
            Ok(out.add(image)?)
        } else {
            Ok(out)
        }
    }

    /// Restore several images on one tape, generating all adaptive
    /// parameters in one pass. Output `b` equals `restore(images[b], vs[b])`.
    pub fn restore_batch<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        images: &[Var<'t, T>],
        vs: Option<&[Var<'t, T>]>,
    ) -> Result<Vec<Var<'t, T>>> {
        let generated = match vs {
            Some(vs) => {
                if vs.len() != images.len() {
                    return Err(Error::Contract(format!(
                        "{} images but {} weather vectors",
                        images.len(),
                        vs.len()
                    )));
                }
                for v in vs {
                    let d = v.shape().iter().product::<usize>();
                    if d != self.config.feature_dim {
                        return Err(Error::Config(format!(
                            "weather vector has {d} entries, model expects {}",
                            self.config.feature_dim
                        )));
                    }
                }
                self.bank.generate_batch(p, vs)?
            }
            None if self.bank.is_empty() => images.iter().map(|_| Vec::new()).collect(),
            None => return Err(Error::Contract("adaptive layers need a weather vector".into())),
        };
        images
            .iter()
            .zip(&generated)
            .map(|(&image, gen)| {
                let ctx = Ctx {
                    bound: p,
                    generated: gen,
                };
                let state = self.encode(&ctx, image)?;
                self.decode(&ctx, &state, image)
            })
            .collect()
    }

    /// `Y = F_res(I; θ_fix, θ_adap(v))` on an existing tape.
    pub fn restore<'t, T: Real>(&self, p: &Bound<'t, T>, image: Var<'t, T>, v: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let generated = self.generate(p, v)?;
        let ctx = Ctx {
            bound: p,
            generated: &generated,
        };
        let state = self.encode(&ctx, image)?;
        self.decode(&ctx, &state, image)
    }
}
