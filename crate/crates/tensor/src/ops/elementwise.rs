use super::{same_shape, same_tape};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU and its derivative.
#[inline]
fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let x2 = x * x;
    let t = (c * (x + a * x2 * x)).tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x2);
    (y, dy)
}

impl<'t, T: Real> Var<'t, T> {
    fn binary(
        self,
        rhs: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(std::sync::Arc<Tensor<T>>, std::sync::Arc<Tensor<T>>, Tensor<T>)> {
        same_tape(op, &self, &rhs)?;
        let a = self.value();
        let b = rhs.value();
        same_shape(op, a.shape(), b.shape())?;
        let out: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(a.shape(), out)?;
        Ok((a, b, t))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, _, out) = self.binary(rhs, "add", |x, y| x + y)?;
        self.tape.record("add", &[self, rhs], out, |args| {
            vec![
                args.needs[0].then(|| args.grad.to_vec()),
                args.needs[1].then(|| args.grad.to_vec()),
            ]
        })
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, _, out) = self.binary(rhs, "sub", |x, y| x - y)?;
        self.tape.record("sub", &[self, rhs], out, |args| {
            vec![
                args.needs[0].then(|| args.grad.to_vec()),
                args.needs[1].then(|| args.grad.iter().map(|&g| -g).collect()),
            ]
        })
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, _, out) = self.binary(rhs, "mul", |x, y| x * y)?;
        self.tape.record("mul", &[self, rhs], out, |args| {
            let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
            vec![
                args.needs[0].then(|| args.grad.iter().zip(b).map(|(&g, &y)| g * y).collect()),
                args.needs[1].then(|| args.grad.iter().zip(a).map(|(&g, &x)| g * x).collect()),
            ]
        })
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|x| x * c);
        self.tape.record("scale", &[self], out, move |args| {
            vec![Some(args.grad.iter().map(|&g| g * c).collect())]
        })
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|x| x + c);
        self.tape.record("add_scalar", &[self], out, |args| vec![Some(args.grad.to_vec())])
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let out = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape.record("relu", &[self], out, |args| {
            let x = args.inputs[0].data();
            vec![Some(
                args.grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
            )]
        })
    }

    pub fn gelu(self) -> Result<Var<'t, T>> {
        let out = self.value().map(|x| gelu(x).0);
        self.tape.record("gelu", &[self], out, |args| {
            let x = args.inputs[0].data();
            vec![Some(args.grad.iter().zip(x).map(|(&g, &x)| g * gelu(x).1).collect())]
        })
    }

    /// `x[…×C] + b[C]`, broadcasting the bias over every leading index.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("add_bias", &self, &bias)?;
        let x = self.value();
        let b = bias.value();
        let c = *x.shape().last().unwrap_or(&0);
        if b.ndim() != 1 || b.numel() != c || c == 0 {
            return Err(TensorError::dim(
                "add_bias",
                format!("bias {:?} does not match trailing dim of {:?}", b.shape(), x.shape()),
            ));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        self.tape.record("add_bias", &[self, bias], out, move |args| {
            let db = args.needs[1].then(|| {
                let mut d = vec![T::zero(); c];
                for row in args.grad.chunks_exact(c) {
                    for (dv, &g) in d.iter_mut().zip(row) {
                        *dv += g;
                    }
                }
                d
            });
            vec![args.needs[0].then(|| args.grad.to_vec()), db]
        })
    }

    /// Feature-wise affine modulation of a `[C×H×W]` map:
    /// `out[c,h,w] = gamma[c] * x[c,h,w] + beta[c]`.
    pub fn film(self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("film", &self, &gamma)?;
        same_tape("film", &self, &beta)?;
        let x = self.value();
        let g = gamma.value();
        let b = beta.value();
        if x.ndim() != 3 {
            return Err(TensorError::dim("film", format!("expected [C,H,W], got {:?}", x.shape())));
        }
        let c = x.shape()[0];
        if g.shape() != [c] || b.shape() != [c] {
            return Err(TensorError::dim(
                "film",
                format!("gamma {:?} / beta {:?} for {c} channels", g.shape(), b.shape()),
            ));
        }
        let plane = x.shape()[1] * x.shape()[2];
        let mut out = Vec::with_capacity(x.numel());
        for ch in 0..c {
            let (gv, bv) = (g.data()[ch], b.data()[ch]);
            out.extend(x.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| gv * v + bv));
        }
        let out = Tensor::new(x.shape(), out)?;
        self.tape.record("film", &[self, gamma, beta], out, move |args| {
            let (x, gm) = (args.inputs[0].data(), args.inputs[1].data());
            let grad = args.grad;
            let dx = args.needs[0].then(|| {
                let mut d = Vec::with_capacity(grad.len());
                for ch in 0..c {
                    d.extend(grad[ch * plane..(ch + 1) * plane].iter().map(|&v| v * gm[ch]));
                }
                d
            });
            let dg = args.needs[1].then(|| {
                (0..c)
                    .map(|ch| {
                        let r = ch * plane..(ch + 1) * plane;
                        grad[r.clone()].iter().zip(&x[r]).map(|(&d, &v)| d * v).sum()
                    })
                    .collect()
            });
            let db = args.needs[2].then(|| {
                (0..c)
                    .map(|ch| grad[ch * plane..(ch + 1) * plane].iter().copied().sum())
                    .collect()
            });
            vec![dx, dg, db]
        })
    }
}
