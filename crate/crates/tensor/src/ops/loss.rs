use super::{same_shape, same_tape};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// Mean Huber-style smooth L1 between `self` and `target`:
    /// `0.5 e²/β` where `|e| < β`, else `|e| − 0.5β`.
    pub fn smooth_l1(self, target: Var<'t, T>, beta: f64) -> Result<Var<'t, T>> {
        same_tape("smooth_l1", &self, &target)?;
        if beta <= 0.0 || !beta.is_finite() {
            return Err(TensorError::Contract(format!("smooth_l1 threshold must be > 0, got {beta}")));
        }
        let y = self.value();
        let t = target.value();
        same_shape("smooth_l1", y.shape(), t.shape())?;
        let n = y.numel();
        if n == 0 {
            return Err(TensorError::dim("smooth_l1", "empty tensors"));
        }
        let b = T::of(beta);
        let half = T::of(0.5);
        let total: T = y
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &c)| {
                let e = a - c;
                if e.abs() < b {
                    half * e * e / b
                } else {
                    e.abs() - half * b
                }
            })
            .sum();
        let inv_n = T::of(1.0 / n as f64);
        let out = Tensor::scalar(total * inv_n);
        self.tape.record("smooth_l1", &[self, target], out, move |args| {
            let g = args.grad[0] * inv_n;
            let d: Vec<T> = args.inputs[0]
                .data()
                .iter()
                .zip(args.inputs[1].data())
                .map(|(&a, &c)| {
                    let e = a - c;
                    if e.abs() < b {
                        g * e / b
                    } else {
                        g * e.signum()
                    }
                })
                .collect();
            let neg = args.needs[1].then(|| d.iter().map(|&v| -v).collect());
            vec![args.needs[0].then_some(d), neg]
        })
    }
}
