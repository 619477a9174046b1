use super::same_tape;
use crate::error::{Result, TensorError};
use crate::kernels::{axpy, gemm_nn, gemm_nt, gemm_tn};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] if *h > 0 && *w > 0 => Ok((*c, *h, *w)),
        _ => Err(TensorError::dim(op, format!("expected [C,H,W] input, got {shape:?}"))),
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output `(oy, ox)` at kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w).then_some((y as usize, x as usize))
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let p = self.positions();
        let mut cols = vec![T::zero(); self.cols() * p];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, xx)) = self.src(oy, ox, ky, kx) {
                                cols[row * p + oy * self.wo + ox] = x[(ci * self.h + y) * self.w + xx];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let p = self.positions();
        let mut x = vec![T::zero(); self.cin * self.h * self.w];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, xx)) = self.src(oy, ox, ky, kx) {
                                x[(ci * self.h + y) * self.w + xx] += cols[row * p + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Per-axis linear interpolation taps for 2x upsampling (half-pixel centers).
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let clamp = |i: f64| i.max(0.0).min((n - 1) as f64) as usize;
            (clamp(lo), clamp(lo + 1.0), 1.0 - frac, frac)
        })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// Dense 2-D convolution of `[Cin×H×W]` with `[Cout×Cin×k×k]` weights.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        same_tape("conv2d", &self, &weight)?;
        let x = self.value();
        let wt = weight.value();
        let (cin, h, w) = chw("conv2d", x.shape())?;
        let (cout, k) = match wt.shape() {
            [co, ci, k1, k2] if *ci == cin && k1 == k2 && *k1 > 0 => (*co, *k1),
            s => {
                return Err(TensorError::dim(
                    "conv2d",
                    format!("weight {s:?} incompatible with input {:?}", x.shape()),
                ))
            }
        };
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {k} stride {stride} pad {pad} on {h}x{w}"),
            ));
        }
        let g = ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            same_tape("conv2d", &self, &b)?;
            if b.value().shape() != [cout] {
                return Err(TensorError::dim(
                    "conv2d",
                    format!("bias {:?} for {cout} output channels", b.value().shape()),
                ));
            }
            inputs.push(b);
        }
        let (kk, p) = (g.cols(), g.positions());
        let cols = g.im2col(x.data());
        let mut out = vec![T::zero(); cout * p];
        gemm_nn(wt.data(), &cols, &mut out, cout, kk, p);
        if let Some(b) = bias {
            let bv = b.value();
            for (co, row) in out.chunks_exact_mut(p).enumerate() {
                let bias = bv.data()[co];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.tape.add_macs((cout * kk * p) as u64);
        let shape = [cout, g.ho, g.wo];
        self.tape.record("conv2d", &inputs, Tensor::new(&shape, out)?, move |args| {
            let grad = args.grad;
            let dx = args.needs[0].then(|| {
                let mut dcols = vec![T::zero(); kk * p];
                gemm_tn(args.inputs[1].data(), grad, &mut dcols, cout, kk, p);
                g.col2im(&dcols)
            });
            let dw = args.needs[1].then(|| {
                let mut d = vec![T::zero(); cout * kk];
                gemm_nt(grad, &cols, &mut d, cout, p, kk);
                d
            });
            let mut grads = vec![dx, dw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    grad.chunks_exact(p).map(|row| row.iter().copied().sum()).collect()
                }));
            }
            grads
        })
    }

    /// Depthwise convolution, one odd `k×k` kernel per channel, stride 1 and
    /// zero padding `k/2` so spatial size is preserved.
    pub fn depthwise_conv2d(self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        same_tape("depthwise_conv2d", &self, &weight)?;
        let x = self.value();
        let wt = weight.value();
        let (c, h, w) = chw("depthwise_conv2d", x.shape())?;
        let k = match wt.shape() {
            [cw, 1, k1, k2] if *cw == c && k1 == k2 && k1 % 2 == 1 => *k1,
            s => {
                return Err(TensorError::dim(
                    "depthwise_conv2d",
                    format!("weight {s:?} does not hold one odd kernel per channel of {:?}", x.shape()),
                ))
            }
        };
        let pad = k / 2;
        // Valid output x-range for a given horizontal tap.
        let xrange = move |kx: usize| -> (usize, usize) {
            let lo = pad.saturating_sub(kx);
            let hi = (w + pad).saturating_sub(kx).min(w);
            (lo, hi)
        };
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt.data()[(ch * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = xrange(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..h {
                        let y = oy as isize + ky as isize - pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        let src = (ch * h + y as usize) * w + lo + kx - pad;
                        let dst = (ch * h + oy) * w + lo;
                        let n = hi - lo;
                        axpy(wv, &x.data()[src..src + n], &mut out[dst..dst + n]);
                    }
                }
            }
        }
        self.tape.add_macs((c * k * k * h * w) as u64);
        self.tape.record("depthwise_conv2d", &[self, weight], Tensor::new(&[c, h, w], out)?, move |args| {
            let grad = args.grad;
            let (xv, wv) = (args.inputs[0].data(), args.inputs[1].data());
            let mut dx = args.needs[0].then(|| vec![T::zero(); c * h * w]);
            let mut dw = args.needs[1].then(|| vec![T::zero(); c * k * k]);
            for ch in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = (ch * k + ky) * k + kx;
                        let (lo, hi) = xrange(kx);
                        if lo >= hi {
                            continue;
                        }
                        let n = hi - lo;
                        let mut acc = T::zero();
                        for oy in 0..h {
                            let y = oy as isize + ky as isize - pad as isize;
                            if y < 0 || y as usize >= h {
                                continue;
                            }
                            let src = (ch * h + y as usize) * w + lo + kx - pad;
                            let dst = (ch * h + oy) * w + lo;
                            let g = &grad[dst..dst + n];
                            if let Some(dx) = dx.as_mut() {
                                axpy(wv[widx], g, &mut dx[src..src + n]);
                            }
                            if dw.is_some() {
                                acc += crate::kernels::dot(g, &xv[src..src + n]);
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
            vec![dx, dw]
        })
    }

    /// Bilinear 2x upsampling of a `[C×H×W]` map with half-pixel centers and
    /// edge clamping.
    pub fn upsample2x(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = chw("upsample2x", x.shape())?;
        let ty = bilinear_taps(h);
        let tx = bilinear_taps(w);
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        let xd = x.data();
        for ch in 0..c {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let at = |y: usize, xx: usize| xd[(ch * h + y) * w + xx].as_f64();
                    let v = wy0 * (wx0 * at(y0, x0) + wx1 * at(y0, x1))
                        + wy1 * (wx0 * at(y1, x0) + wx1 * at(y1, x1));
                    out[(ch * h2 + oy) * w2 + ox] = T::of(v);
                }
            }
        }
        self.tape.record("upsample2x", &[self], Tensor::new(&[c, h2, w2], out)?, move |args| {
            let grad = args.grad;
            let mut d = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let g = grad[(ch * h2 + oy) * w2 + ox];
                        let mut put = |y: usize, xx: usize, wgt: f64| {
                            d[(ch * h + y) * w + xx] += g * T::of(wgt);
                        };
                        put(y0, x0, wy0 * wx0);
                        put(y0, x1, wy0 * wx1);
                        put(y1, x0, wy1 * wx0);
                        put(y1, x1, wy1 * wx1);
                    }
                }
            }
            vec![Some(d)]
        })
    }

    /// Non-overlapping `k×k` average pooling; H and W must be multiples of k.
    pub fn avg_pool2d(self, k: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = chw("avg_pool2d", x.shape())?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::dim(
                "avg_pool2d",
                format!("{h}x{w} not divisible by pool size {k}"),
            ));
        }
        let (ho, wo) = (h / k, w / k);
        let inv = T::of(1.0 / (k * k) as f64);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * ho + y / k) * wo + xx / k] += x.data()[(ch * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.tape.record("avg_pool2d", &[self], Tensor::new(&[c, ho, wo], out)?, move |args| {
            let mut d = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        d[(ch * h + y) * w + xx] = args.grad[(ch * ho + y / k) * wo + xx / k] * inv;
                    }
                }
            }
            vec![Some(d)]
        })
    }
}
