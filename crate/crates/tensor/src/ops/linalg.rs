use super::same_tape;
use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, transpose};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("matmul", &self, &rhs)?;
        let a = self.value();
        let b = rhs.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(a.data(), b.data(), &mut out, m, k, n);
        self.tape.add_macs((m * k * n) as u64);
        self.tape.record("matmul", &[self, rhs], Tensor::new(&[m, n], out)?, move |args| {
            let g = args.grad;
            let da = args.needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm_nt(g, args.inputs[1].data(), &mut d, m, n, k);
                d
            });
            let db = args.needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm_tn(args.inputs[0].data(), g, &mut d, m, k, n);
                d
            });
            vec![da, db]
        })
    }

    /// Batched product `[b×m×k] · [b×k×n] → [b×m×n]`.
    pub fn bmm(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("bmm", &self, &rhs)?;
        let a = self.value();
        let b = rhs.value();
        if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1] {
            return Err(TensorError::dim(
                "bmm",
                format!("cannot batch-multiply {:?} by {:?}", a.shape(), b.shape()),
            ));
        }
        let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            gemm_nn(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.tape.add_macs((bs * m * k * n) as u64);
        self.tape.record("bmm", &[self, rhs], Tensor::new(&[bs, m, n], out)?, move |args| {
            let g = args.grad;
            let (av, bv) = (args.inputs[0].data(), args.inputs[1].data());
            let da = args.needs[0].then(|| {
                let mut d = vec![T::zero(); bs * m * k];
                for i in 0..bs {
                    gemm_nt(
                        &g[i * m * n..(i + 1) * m * n],
                        &bv[i * k * n..(i + 1) * k * n],
                        &mut d[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                d
            });
            let db = args.needs[1].then(|| {
                let mut d = vec![T::zero(); bs * k * n];
                for i in 0..bs {
                    gemm_tn(
                        &av[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut d[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                d
            });
            vec![da, db]
        })
    }

    /// Swap the last two axes of a 2-D or 3-D tensor.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let (batch, rows, cols) = match shape.as_slice() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => {
                return Err(TensorError::dim(
                    "transpose",
                    format!("expected rank 2 or 3, got {shape:?}"),
                ))
            }
        };
        let mut out = Vec::with_capacity(a.numel());
        for i in 0..batch {
            out.extend(transpose(&a.data()[i * rows * cols..(i + 1) * rows * cols], rows, cols));
        }
        let mut out_shape = shape.clone();
        let nd = out_shape.len();
        out_shape.swap(nd - 2, nd - 1);
        self.tape.record("transpose", &[self], Tensor::new(&out_shape, out)?, move |args| {
            let mut d = Vec::with_capacity(args.grad.len());
            for i in 0..batch {
                d.extend(transpose(&args.grad[i * rows * cols..(i + 1) * rows * cols], cols, rows));
            }
            vec![Some(d)]
        })
    }
}
