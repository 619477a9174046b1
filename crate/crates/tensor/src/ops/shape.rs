use std::sync::Arc;

use super::{same_tape, split_axis};
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != x.numel() {
            return Err(TensorError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", x.shape()),
            ));
        }
        let out = Tensor::new(shape, x.data().to_vec())?;
        self.tape.record("reshape", &[self], out, |args| vec![Some(args.grad.to_vec())])
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (outer, full, inner) = split_axis("narrow", x.shape(), axis)?;
        if start + len > full {
            return Err(TensorError::dim(
                "narrow",
                format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let total = x.numel();
        self.tape.record("narrow", &[self], Tensor::new(&shape, out)?, move |args| {
            let mut d = vec![T::zero(); total];
            for o in 0..outer {
                let base = o * full * inner + start * inner;
                d[base..base + len * inner]
                    .copy_from_slice(&args.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(d)]
        })
    }

    /// Flat selection: `out[i] = x[indices[i]]`, viewed as `shape`.
    /// Indices may repeat; the backward pass scatter-adds.
    pub fn gather(self, indices: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != indices.len() {
            return Err(TensorError::dim(
                "gather",
                format!("{} indices cannot fill shape {shape:?}", indices.len()),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.numel()) {
            return Err(TensorError::dim(
                "gather",
                format!("index {bad} out of range for {} elements", x.numel()),
            ));
        }
        let out: Vec<T> = indices.iter().map(|&i| x.data()[i]).collect();
        let total = x.numel();
        self.tape.record("gather", &[self], Tensor::new(shape, out)?, move |args| {
            let mut d = vec![T::zero(); total];
            for (&i, &g) in indices.iter().zip(args.grad) {
                d[i] += g;
            }
            vec![Some(d)]
        })
    }
}

impl<T: Real> Tape<T> {
    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::dim("concat", "nothing to concatenate"))?;
        for p in parts {
            same_tape("concat", first, p)?;
            if !std::ptr::eq(p.tape, self) {
                return Err(TensorError::Contract("concat: operand from another tape".into()));
            }
        }
        let values: Vec<Arc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let base_shape = values[0].shape().to_vec();
        let (outer, _, inner) = split_axis("concat", &base_shape, axis)?;
        let mut lens = Vec::with_capacity(values.len());
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::dim(
                    "concat",
                    format!("{s:?} incompatible with {base_shape:?} along axis {axis}"),
                ));
            }
            lens.push(s[axis]);
        }
        let total_len: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total_len;
        self.record("concat", parts, Tensor::new(&shape, out)?, move |args| {
            let mut grads: Vec<Option<Vec<T>>> = lens
                .iter()
                .zip(args.needs)
                .map(|(&l, &need)| need.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (g, &l) in grads.iter_mut().zip(&lens) {
                    if let Some(g) = g {
                        g.extend_from_slice(&args.grad[offset..offset + l * inner]);
                    }
                    offset += l * inner;
                }
            }
            grads
        })
    }
}
