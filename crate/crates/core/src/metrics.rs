//! Fidelity metrics on `[C×H×W]` images with values in `[0,1]`.

use hyperweather_tensor::{Real, Tensor};

use crate::error::{Error, Result};

/// Reported when the mean squared error falls below [`MSE_FLOOR`].
pub const PSNR_CAP: f64 = 100.0;
pub const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair<T: Real>(y: &Tensor<T>, t: &Tensor<T>) -> Result<()> {
    if y.shape() != t.shape() {
        return Err(hyperweather_tensor::TensorError::Dimension {
            op: "metric",
            detail: format!("{:?} vs {:?}", y.shape(), t.shape()),
        }
        .into());
    }
    Ok(())
}

pub fn mse<T: Real>(y: &Tensor<T>, t: &Tensor<T>) -> Result<f64> {
    check_pair(y, t)?;
    if y.numel() == 0 {
        return Err(Error::Contract("mean squared error of empty images".into()));
    }
    let s: f64 = y
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(s / y.numel() as f64)
}

/// `10·log10(1/MSE)` with peak value 1.
pub fn psnr<T: Real>(y: &Tensor<T>, t: &Tensor<T>) -> Result<f64> {
    let m = mse(y, t)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - c;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| taps[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11×11 Gaussian windows,
/// computed per channel and averaged (dynamic range 1).
pub fn ssim<T: Real>(y: &Tensor<T>, t: &Tensor<T>) -> Result<f64> {
    check_pair(y, t)?;
    let (c, h, w) = match y.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Contract(format!("ssim expects [C,H,W], got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let a: Vec<f64> = y.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = t.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&a, h, w, &taps);
        let mu_b = filter_valid(&b, h, w, &taps);
        let e_aa = filter_valid(&aa, h, w, &taps);
        let e_bb = filter_valid(&bb, h, w, &taps);
        let e_ab = filter_valid(&ab, h, w, &taps);
        let n = mu_a.len();
        let mut s = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / n as f64;
    }
    Ok(total / c as f64)
}

/// Clamp every value into `[0,1]`.
pub fn clamp_unit<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()).min(T::one()))
}
