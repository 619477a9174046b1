//! Restoration objective: smooth-L1 plus a feature-space term computed by a
//! frozen random convolution pyramid.

use std::sync::Arc;

use hyperweather_tensor::{Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default weight of the perceptual term.
pub const DEFAULT_LAMBDA: f64 = 0.04;

fn same_shape<T: Real>(y: Var<'_, T>, t: Var<'_, T>, what: &str) -> Result<()> {
    if y.shape() != t.shape() {
        return Err(hyperweather_tensor::TensorError::Dimension {
            op: "loss",
            detail: format!("{what}: {:?} vs {:?}", y.shape(), t.shape()),
        }
        .into());
    }
    Ok(())
}

/// Mean over elements of `0.5e²/β` for `|e| < β`, else `|e| − 0.5β`.
pub fn smooth_l1<'t, T: Real>(y: Var<'t, T>, t: Var<'t, T>, beta: f64) -> Result<Var<'t, T>> {
    same_shape(y, t, "smooth_l1")?;
    if beta <= 0.0 {
        return Err(Error::Config(format!("smooth-L1 threshold {beta} must be positive")));
    }
    Ok(y.smooth_l1(t, beta)?)
}

#[derive(Debug, Clone)]
struct ProxyStage {
    weight: Arc<Tensor<f64>>,
    bias: Arc<Tensor<f64>>,
    stride: usize,
}

/// Fixed three-stage conv pyramid (3→8 stride 1, 8→16 stride 2, 16→32
/// stride 2, ReLU after each) whose weights are a function of `seed` alone.
#[derive(Debug, Clone)]
pub struct PerceptualProxy {
    pub seed: u64,
    stages: Vec<ProxyStage>,
}

impl PerceptualProxy {
    pub const WIDTHS: [usize; 4] = [3, 8, 16, 32];
    pub const STRIDES: [usize; 3] = [1, 2, 2];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = (0..3)
            .map(|s| {
                let (cin, cout) = (Self::WIDTHS[s], Self::WIDTHS[s + 1]);
                let fan_in = (cin * 9) as f64;
                let weight = Tensor::uniform(&[cout, cin, 3, 3], (6.0 / fan_in).sqrt(), &mut rng);
                let bias = Tensor::uniform(&[cout], 0.1, &mut rng);
                ProxyStage {
                    weight: Arc::new(weight),
                    bias: Arc::new(bias),
                    stride: Self::STRIDES[s],
                }
            })
            .collect();
        PerceptualProxy { seed, stages }
    }

    /// Weights of stage `s` as `(weight, bias)` in `f64`.
    pub fn stage_weights(&self, s: usize) -> (&Tensor<f64>, &Tensor<f64>) {
        (&self.stages[s].weight, &self.stages[s].bias)
    }

    /// Feature maps after each stage.
    pub fn taps<'t, T: Real>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let tape = x.tape();
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for st in &self.stages {
            let w = tape.leaf_shared(Arc::new(st.weight.cast()), false)?;
            let b = tape.leaf_shared(Arc::new(st.bias.cast()), false)?;
            h = h.conv2d(w, Some(b), st.stride, 1)?.relu()?;
            out.push(h);
        }
        Ok(out)
    }

    /// Σ over taps of the mean squared feature difference.
    pub fn loss<'t, T: Real>(&self, y: Var<'t, T>, t: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape(y, t, "perceptual_loss")?;
        let fy = self.taps(y)?;
        let ft = self.taps(t)?;
        let mut total: Option<Var<'t, T>> = None;
        for (a, b) in fy.into_iter().zip(ft) {
            let d = a.sub(b)?;
            let term = d.mul(d)?.mean()?;
            total = Some(match total {
                None => term,
                Some(s) => s.add(term)?,
            });
        }
        Ok(total.expect("three stages"))
    }
}

pub fn perceptual_loss<'t, T: Real>(proxy: &PerceptualProxy, y: Var<'t, T>, t: Var<'t, T>) -> Result<Var<'t, T>> {
    proxy.loss(y, t)
}

/// `smooth_l1 + λ · perceptual`.
pub fn total_loss<'t, T: Real>(
    proxy: &PerceptualProxy,
    y: Var<'t, T>,
    t: Var<'t, T>,
    lambda: f64,
    beta: f64,
) -> Result<Var<'t, T>> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("loss weight {lambda} must be non-negative")));
    }
    let l1 = smooth_l1(y, t, beta)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    Ok(l1.add(proxy.loss(y, t)?.scale(T::of(lambda))?)?)
}
