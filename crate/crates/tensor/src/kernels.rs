//! Plain loops over contiguous slices. The loop shapes are chosen so the
//! compiler vectorizes them; reductions use fixed lanes so results do not
//! depend on the target's vector width.

use crate::real::Real;

const LANES: usize = 8;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    total + s
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Column tile width: one tile of each active output row stays in L1 while
/// the inner dimension is swept.
const COL_TILE: usize = 512;
/// Output rows updated per sweep, so each streamed row of the right operand
/// is reused this many times.
const ROW_TILE: usize = 4;

/// `out[m×n] += a[m×k] · b[k×n]`
///
/// Every output element accumulates its products in increasing `p` order,
/// the same order as a naive triple loop.
pub(crate) fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(COL_TILE) {
        let j1 = (j0 + COL_TILE).min(n);
        for i0 in (0..m).step_by(ROW_TILE) {
            let i1 = (i0 + ROW_TILE).min(m);
            for p in 0..k {
                let brow = &b[p * n + j0..p * n + j1];
                for i in i0..i1 {
                    let av = a[i * k + p];
                    if av != T::zero() {
                        axpy(av, brow, &mut out[i * n + j0..i * n + j1]);
                    }
                }
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for j in 0..n {
        let br = &b[j * k..(j + 1) * k];
        for i in 0..m {
            out[i * n + j] += dot(&a[i * k..(i + 1) * k], br);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(COL_TILE) {
        let j1 = (j0 + COL_TILE).min(n);
        for p0 in (0..k).step_by(ROW_TILE) {
            let p1 = (p0 + ROW_TILE).min(k);
            for i in 0..m {
                let brow = &b[i * n + j0..i * n + j1];
                for p in p0..p1 {
                    let av = a[i * k + p];
                    if av != T::zero() {
                        axpy(av, brow, &mut out[p * n + j0..p * n + j1]);
                    }
                }
            }
        }
    }
}

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
