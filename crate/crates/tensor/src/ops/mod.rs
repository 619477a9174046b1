mod conv;
mod elementwise;
mod linalg;
mod loss;
mod reduce;
mod shape;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;

pub(crate) fn same_tape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(TensorError::Contract(format!("{op}: operands live on different tapes")))
    }
}

pub(crate) fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::dim(op, format!("shapes {a:?} and {b:?} differ")))
    }
}

/// Split `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::dim(op, format!("axis {axis} invalid for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}
