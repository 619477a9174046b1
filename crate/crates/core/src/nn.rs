//! Small layer building blocks shared by the feature extractor and backbone.

use hyperweather_tensor::{Real, Var};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, Slot};

pub const LN_EPS: f64 = 1e-5;

/// Nonlinearity used inside feed-forward layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(match self {
            Activation::Gelu => x.gelu()?,
            Activation::Relu => x.relu()?,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other}"))),
        }
    }
}

/// Parameters visible to a forward pass: stored tensors plus whatever the
/// hyper-networks generated for the current input.
pub struct Ctx<'a, 't, T: Real> {
    pub bound: &'a Bound<'t, T>,
    pub generated: &'a [Var<'t, T>],
}

impl<'t, T: Real> Ctx<'_, 't, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.bound.var(id)
    }

    pub fn slot(&self, slot: Slot) -> Result<Var<'t, T>> {
        match slot {
            Slot::Fixed(id) => Ok(self.bound.var(id)),
            Slot::Generated(i) => self.generated.get(i).copied().ok_or_else(|| {
                Error::Contract(format!("generated parameter #{i} requested but not produced"))
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.matmul(p.var(self.w))?.add_bias(p.var(self.b))?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.layer_norm(p.var(self.gamma), p.var(self.beta), LN_EPS)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(p.var(self.w), Some(p.var(self.b)), self.stride, self.pad)?)
    }
}

/// `[N×C]` tokens (row-major over an `h×w` grid) to a `[C×h×w]` map.
pub fn tokens_to_image<'t, T: Real>(x: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] != h * w {
        return Err(Error::Contract(format!("tokens {shape:?} do not tile a {h}x{w} grid")));
    }
    Ok(x.transpose()?.reshape(&[shape[1], h, w])?)
}

/// `[C×h×w]` map to `[h·w × C]` tokens.
pub fn image_to_tokens<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Contract(format!("expected [C,H,W], got {shape:?}")));
    }
    Ok(x.reshape(&[shape[0], shape[1] * shape[2]])?.transpose()?)
}

/// Multi-head scaled dot-product attention.
///
/// Queries come from `q_src [N×Cin]`, keys and values from `kv_src [M×Cin]`;
/// each head has width `d/heads` and logits are scaled by `1/√(d/heads)`.
/// With `window = Some(g)`, rows are split into consecutive groups of `g`
/// and attention stays inside each group (requires `M == N`).
#[allow(clippy::too_many_arguments)]
pub fn msa<'t, T: Real>(
    q_src: Var<'t, T>,
    kv_src: Var<'t, T>,
    wq: Var<'t, T>,
    wk: Var<'t, T>,
    wv: Var<'t, T>,
    heads: usize,
    window: Option<usize>,
) -> Result<Var<'t, T>> {
    let q = q_src.matmul(wq)?;
    let k = kv_src.matmul(wk)?;
    let v = kv_src.matmul(wv)?;
    let (n, d) = (q.shape()[0], q.shape()[1]);
    let m = k.shape()[0];
    if k.shape()[1] != d || v.shape()[1] != d {
        return Err(Error::Config(format!(
            "projection widths disagree: q {d}, k {}, v {}",
            k.shape()[1],
            v.shape()[1]
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    let (groups, nq, nk) = match window {
        None => (1, n, m),
        Some(g) => {
            if g == 0 || n % g != 0 || m != n {
                return Err(Error::Config(format!(
                    "window {g} does not tile {n} queries over {m} keys"
                )));
            }
            (n / g, g, g)
        }
    };
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let tape = q.tape();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let part = |x: Var<'t, T>, rows: usize| -> Result<Var<'t, T>> {
            Ok(x.narrow(1, h * dh, dh)?.reshape(&[groups, rows, dh])?)
        };
        let qh = part(q, nq)?;
        let kh = part(k, nk)?;
        let vh = part(v, nk)?;
        let attn = qh.bmm(kh.transpose()?)?.scale(scale)?.softmax(2)?;
        outs.push(attn.bmm(vh)?.reshape(&[n, dh])?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        Ok(tape.concat(&outs, 1)?)
    }
}

/// Gather indices for a depth-to-space rearrangement: `[4c×h×w]` becomes
/// `[c×2h×2w]` with `out[c, 2i+di, 2j+dj] = in[4c + 2di + dj, i, j]`.
pub fn pixel_shuffle_indices(c: usize, h: usize, w: usize) -> Vec<usize> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let sub = 2 * (y % 2) + x % 2;
                idx.push(((4 * ch + sub) * h + y / 2) * w + x / 2);
            }
        }
    }
    idx
}

pub fn pixel_shuffle<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[0] % 4 != 0 {
        return Err(Error::Contract(format!("pixel shuffle needs [4c,h,w], got {shape:?}")));
    }
    let (c, h, w) = (shape[0] / 4, shape[1], shape[2]);
    let idx = std::sync::Arc::new(pixel_shuffle_indices(c, h, w));
    Ok(x.gather(idx, &[c, 2 * h, 2 * w])?)
}

/// Average-pool a token grid by `sr` in each direction (`sr = 1` is a no-op).
pub fn reduce_tokens<'t, T: Real>(x: Var<'t, T>, h: usize, w: usize, sr: usize) -> Result<Var<'t, T>> {
    if sr <= 1 {
        return Ok(x);
    }
    if h % sr != 0 || w % sr != 0 {
        return Err(Error::Config(format!("reduction ratio {sr} does not tile a {h}x{w} grid")));
    }
    image_to_tokens(tokens_to_image(x, h, w)?.avg_pool2d(sr)?)
}
