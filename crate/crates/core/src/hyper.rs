//! Hyper-networks that turn a weather vector into layer parameters.
//!
//! Each [`HyperMlp`] is `Linear(D→2D) → σ → Linear(2D→numel)` followed by a
//! reshape to its target shape. Its own weights are ordinary fixed
//! parameters; only its outputs vary with the input image.

use hyperweather_tensor::{Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::params::{Bound, Builder, ParamId, ParamRole, Slot};

#[derive(Debug, Clone)]
pub struct HyperMlp {
    pub name: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub target_shape: Vec<usize>,
    pub activation: Activation,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Initial value of a layer parameter: `base` plus uniform noise of
/// half-width `noise`. A generator reproduces `base` through its output bias
/// and the noise through its second-layer weights.
#[derive(Debug, Clone)]
pub struct SlotInit {
    pub base: Vec<f64>,
    pub noise: f64,
}

impl SlotInit {
    /// One centered delta per channel for `[C×1×k×k]` depthwise kernels.
    pub fn delta_kernel(channels: usize, k: usize) -> Self {
        let mut base = vec![0.0; channels * k * k];
        for c in 0..channels {
            base[c * k * k + (k * k) / 2] = 1.0;
        }
        SlotInit { base, noise: 0.1 }
    }

    /// Identity for square projections, zeros otherwise.
    pub fn projection(din: usize, dout: usize) -> Self {
        let mut base = vec![0.0; din * dout];
        if din == dout {
            for i in 0..din {
                base[i * dout + i] = 1.0;
            }
        }
        SlotInit {
            base,
            noise: 1.0 / (din as f64).sqrt(),
        }
    }

    /// `γ = 1, β = 0` for a modulation over `channels` channels.
    pub fn film(channels: usize) -> Self {
        let mut base = vec![0.0; 2 * channels];
        base[..channels].iter_mut().for_each(|g| *g = 1.0);
        SlotInit { base, noise: 0.1 }
    }
}

impl HyperMlp {
    pub fn build<T: Real>(
        b: &mut Builder<'_, T>,
        name: &str,
        input_dim: usize,
        target_shape: &[usize],
        activation: Activation,
        init: &SlotInit,
    ) -> Result<Self> {
        let out: usize = target_shape.iter().product();
        if init.base.len() != out {
            return Err(Error::Config(format!(
                "{name}: init base has {} values for target {target_shape:?}",
                init.base.len()
            )));
        }
        let hidden = 2 * input_dim;
        let w1 = b.uniform(
            &format!("{name}.w1"),
            &[input_dim, hidden],
            1.0 / (input_dim as f64).sqrt(),
            ParamRole::Generator,
        )?;
        let b1 = b.tensor(&format!("{name}.b1"), Tensor::zeros(&[hidden]), ParamRole::Generator)?;
        let w2 = b.uniform(
            &format!("{name}.w2"),
            &[hidden, out],
            init.noise / (hidden as f64).sqrt(),
            ParamRole::Generator,
        )?;
        let b2 = b.tensor(
            &format!("{name}.b2"),
            Tensor::from_f64(&[out], &init.base)?,
            ParamRole::Generator,
        )?;
        Ok(HyperMlp {
            name: name.to_string(),
            input_dim,
            hidden,
            target_shape: target_shape.to_vec(),
            activation,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Generate for a batch of weather vectors stacked as `[B×D]`; row `b`
    /// of the `[B×numel]` result equals `generate` on vector `b`.
    pub fn generate_rows<'t, T: Real>(&self, p: &Bound<'t, T>, vs: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = vs.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Config(format!(
                "{}: weather vectors of shape {shape:?} for a {}-input generator",
                self.name, self.input_dim
            )));
        }
        let h = vs.matmul(p.var(self.w1))?.add_bias(p.var(self.b1))?;
        let h = self.activation.apply(h)?;
        Ok(h.matmul(p.var(self.w2))?.add_bias(p.var(self.b2))?)
    }

    pub fn output_len(&self) -> usize {
        self.target_shape.iter().product()
    }

    /// `Reshape(Proj(v))`.
    pub fn generate<'t, T: Real>(&self, p: &Bound<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = v.shape();
        if shape.iter().product::<usize>() != self.input_dim {
            return Err(Error::Config(format!(
                "{}: weather vector of shape {shape:?} for a {}-input generator",
                self.name, self.input_dim
            )));
        }
        let row = v.reshape(&[1, self.input_dim])?;
        let h = row.matmul(p.var(self.w1))?.add_bias(p.var(self.b1))?;
        let h = self.activation.apply(h)?;
        let out = h.matmul(p.var(self.w2))?.add_bias(p.var(self.b2))?;
        Ok(out.reshape(&self.target_shape)?)
    }
}

/// Collects the generators of one network so their outputs can be produced
/// together, once per forward pass.
#[derive(Debug, Clone)]
pub struct HyperBank {
    pub input_dim: usize,
    pub activation: Activation,
    pub mlps: Vec<HyperMlp>,
}

impl HyperBank {
    pub fn new(input_dim: usize, activation: Activation) -> Self {
        HyperBank {
            input_dim,
            activation,
            mlps: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mlps.is_empty()
    }

    /// Register a layer parameter as hyper-generated (`adaptive`) or as a
    /// stored tensor initialized from `init`.
    pub fn slot<T: Real>(
        &mut self,
        b: &mut Builder<'_, T>,
        name: &str,
        shape: &[usize],
        init: SlotInit,
        adaptive: bool,
    ) -> Result<Slot> {
        if adaptive {
            b.adaptive(name, shape)?;
            let mlp = HyperMlp::build(b, &format!("hyper.{name}"), self.input_dim, shape, self.activation, &init)?;
            self.mlps.push(mlp);
            Ok(Slot::Generated(self.mlps.len() - 1))
        } else {
            let noise = Tensor::<f64>::uniform(shape, init.noise, b.rng());
            let value: Vec<f64> = init.base.iter().zip(noise.data()).map(|(a, n)| a + n).collect();
            let id = b.tensor(name, Tensor::from_f64(shape, &value)?, ParamRole::Weight)?;
            Ok(Slot::Fixed(id))
        }
    }

    /// Evaluate every generator on `v`, in registration order.
    pub fn generate_all<'t, T: Real>(&self, p: &Bound<'t, T>, v: Option<Var<'t, T>>) -> Result<Vec<Var<'t, T>>> {
        if self.mlps.is_empty() {
            return Ok(Vec::new());
        }
        let v = v.ok_or_else(|| Error::Contract("adaptive layers need a weather vector".into()))?;
        self.mlps.iter().map(|m| m.generate(p, v)).collect()
    }

    /// Evaluate every generator once for a whole batch; entry `[b][i]` is
    /// generator `i`'s output for `vs[b]`.
    pub fn generate_batch<'t, T: Real>(&self, p: &Bound<'t, T>, vs: &[Var<'t, T>]) -> Result<Vec<Vec<Var<'t, T>>>> {
        let mut out: Vec<Vec<Var<'t, T>>> = vs.iter().map(|_| Vec::with_capacity(self.mlps.len())).collect();
        if self.mlps.is_empty() || vs.is_empty() {
            return Ok(out);
        }
        let d = self.input_dim;
        let rows = vs
            .iter()
            .map(|v| v.reshape(&[1, d]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let stacked = vs[0].tape().concat(&rows, 0)?;
        for m in &self.mlps {
            let all = m.generate_rows(p, stacked)?;
            let n = m.output_len();
            for (b, slot) in out.iter_mut().enumerate() {
                slot.push(all.narrow(0, b, 1)?.reshape(&m.target_shape)?);
            }
            debug_assert_eq!(all.shape(), [vs.len(), n]);
        }
        Ok(out)
    }
}

/// Per-channel modulation weights and biases.
#[derive(Debug, Clone, Copy)]
pub struct FilmParams<'t, T: Real> {
    pub gamma: Var<'t, T>,
    pub beta: Var<'t, T>,
}

fn expect_shape(mlp: &HyperMlp, shape: &[usize]) -> Result<()> {
    if mlp.target_shape != shape {
        return Err(Error::Config(format!(
            "{} generates {:?}, requested {shape:?}",
            mlp.name, mlp.target_shape
        )));
    }
    Ok(())
}

/// Depthwise kernels `[C×1×3×3]` for the adaptive feed-forward layer.
pub fn gen_dwc_kernel<'t, T: Real>(
    mlp: &HyperMlp,
    p: &Bound<'t, T>,
    v: Var<'t, T>,
    channels: usize,
) -> Result<Var<'t, T>> {
    expect_shape(mlp, &[channels, 1, 3, 3])?;
    mlp.generate(p, v)
}

/// Query, key and value projections, each `[d_in×d_out]`.
pub fn gen_qkv_proj<'t, T: Real>(
    mlps: [&HyperMlp; 3],
    p: &Bound<'t, T>,
    v: Var<'t, T>,
    d_in: usize,
    d_out: usize,
) -> Result<[Var<'t, T>; 3]> {
    for m in mlps {
        expect_shape(m, &[d_in, d_out])?;
    }
    Ok([
        mlps[0].generate(p, v)?,
        mlps[1].generate(p, v)?,
        mlps[2].generate(p, v)?,
    ])
}

/// Split a generated `[2C]` vector into modulation weights and biases.
pub fn split_film<'t, T: Real>(raw: Var<'t, T>) -> Result<FilmParams<'t, T>> {
    let n = raw.shape().iter().product::<usize>();
    if n % 2 != 0 || n == 0 {
        return Err(Error::Config(format!("film generator output of {n} values is not 2C")));
    }
    let c = n / 2;
    let raw = raw.reshape(&[n])?;
    Ok(FilmParams {
        gamma: raw.narrow(0, 0, c)?,
        beta: raw.narrow(0, c, c)?,
    })
}

pub fn gen_film_params<'t, T: Real>(
    mlp: &HyperMlp,
    p: &Bound<'t, T>,
    v: Var<'t, T>,
    channels: usize,
) -> Result<FilmParams<'t, T>> {
    expect_shape(mlp, &[2 * channels])?;
    split_film(mlp.generate(p, v)?)
}

/// `X'[c,h,w] = γ[c]·X[c,h,w] + β[c]`.
pub fn film<'t, T: Real>(x: Var<'t, T>, params: &FilmParams<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.film(params.gamma, params.beta)?)
}
