use super::{same_shape, same_tape, split_axis};
use crate::error::{Result, TensorError};
use crate::kernels::dot;
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Denominator floor for cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

impl<'t, T: Real> Var<'t, T> {
    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.numel();
        let out = Tensor::scalar(x.sum());
        self.tape.record("sum", &[self], out, move |args| {
            vec![Some(vec![args.grad[0]; n])]
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.numel();
        if n == 0 {
            return Err(TensorError::dim("mean", "empty tensor"));
        }
        let out = Tensor::scalar(x.sum() / T::of(n as f64));
        self.tape.record("mean", &[self], out, move |args| {
            vec![Some(vec![args.grad[0] / T::of(n as f64); n])]
        })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (outer, len, inner) = split_axis("softmax", x.shape(), axis)?;
        if len == 0 {
            return Err(TensorError::dim("softmax", "softmax over an empty axis"));
        }
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = T::neg_infinity();
                for l in 0..len {
                    max = max.max(xd[base + l * inner]);
                }
                let mut total = T::zero();
                for l in 0..len {
                    let e = (xd[base + l * inner] - max).exp();
                    out[base + l * inner] = e;
                    total += e;
                }
                for l in 0..len {
                    out[base + l * inner] = out[base + l * inner] / total;
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        self.tape.record("softmax", &[self], out, move |args| {
            let y = args.output.data();
            let g = args.grad;
            let mut d = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut s = T::zero();
                    for l in 0..len {
                        s += g[base + l * inner] * y[base + l * inner];
                    }
                    for l in 0..len {
                        let k = base + l * inner;
                        d[k] = y[k] * (g[k] - s);
                    }
                }
            }
            vec![Some(d)]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        same_tape("layer_norm", &self, &gamma)?;
        same_tape("layer_norm", &self, &beta)?;
        let x = self.value();
        let c = *x.shape().last().unwrap_or(&0);
        let g = gamma.value();
        let b = beta.value();
        if c == 0 || g.shape() != [c] || b.shape() != [c] {
            return Err(TensorError::dim(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", x.shape(), g.shape(), b.shape()),
            ));
        }
        let rows = x.numel() / c;
        let cn = T::of(c as f64);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mu = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cn;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mu) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        self.tape.record("layer_norm", &[self, gamma, beta], out, move |args| {
            let gm = args.inputs[1].data();
            let grad = args.grad;
            let dx = args.needs[0].then(|| {
                let mut d = vec![T::zero(); grad.len()];
                let mut dh = vec![T::zero(); c];
                for r in 0..rows {
                    let gr = &grad[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    for j in 0..c {
                        dh[j] = gr[j] * gm[j];
                    }
                    let m1 = dh.iter().copied().sum::<T>() / cn;
                    let m2 = dot(&dh, hr) / cn;
                    for j in 0..c {
                        d[r * c + j] = rstd[r] * (dh[j] - m1 - hr[j] * m2);
                    }
                }
                d
            });
            let dg = args.needs[1].then(|| {
                let mut d = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        d[j] += grad[r * c + j] * xhat[r * c + j];
                    }
                }
                d
            });
            let db = args.needs[2].then(|| {
                let mut d = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        d[j] += grad[r * c + j];
                    }
                }
                d
            });
            vec![dx, dg, db]
        })
    }

    /// `a·b / max(‖a‖‖b‖, 1e-12)` over all elements, as a scalar.
    pub fn cosine_similarity(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("cosine_similarity", &self, &rhs)?;
        let a = self.value();
        let b = rhs.value();
        same_shape("cosine_similarity", a.shape(), b.shape())?;
        if a.numel() == 0 {
            return Err(TensorError::dim("cosine_similarity", "empty vectors"));
        }
        let ab = dot(a.data(), b.data());
        let na = dot(a.data(), a.data()).sqrt();
        let nb = dot(b.data(), b.data()).sqrt();
        let raw = na * nb;
        let eps = T::of(COSINE_EPS);
        let clamped = raw < eps;
        let den = if clamped { eps } else { raw };
        let out = Tensor::scalar(ab / den);
        self.tape.record("cosine_similarity", &[self, rhs], out, move |args| {
            let g = args.grad[0];
            let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
            let s = ab / den;
            // With a clamped denominator only the numerator varies.
            let grad_for = |x: &[T], y: &[T], nx: T| -> Vec<T> {
                x.iter()
                    .zip(y)
                    .map(|(&xi, &yi)| {
                        if clamped {
                            g * yi / den
                        } else {
                            g * (yi / den - s * xi / (nx * nx))
                        }
                    })
                    .collect()
            };
            vec![
                args.needs[0].then(|| grad_for(a, b, na)),
                args.needs[1].then(|| grad_for(b, a, nb)),
            ]
        })
    }
}
