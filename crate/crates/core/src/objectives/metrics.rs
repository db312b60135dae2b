//! Image quality metrics: PSNR and single-scale SSIM.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(1 / MSE)` for `[0, 1]` images, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Shape("PSNR of empty images".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-10 {
        Ok(PSNR_CAP_DB)
    } else {
        Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter restricted to fully-covered ("valid") windows.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (vh, vw) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * vw];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..vw {
            horiz[y * vw + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            out[y * vw + x] = (0..n).map(|i| k[i] * horiz[(y + i) * vw + x]).sum();
        }
    }
    (out, vh, vw)
}

/// Mean SSIM over valid windows and channels (11x11 Gaussian window,
/// sigma 1.5, K1 = 0.01, K2 = 0.03, data range 1).
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (c, h, w) = a.chw();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa: Vec<f64> = a.channel(ch).iter().map(|v| v.to_f64_lossy()).collect();
        let pb: Vec<f64> = b.channel(ch).iter().map(|v| v.to_f64_lossy()).collect();
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect() };
        let (mu_a, _, _) = filter_valid(&pa, h, w, &k);
        let (mu_b, _, _) = filter_valid(&pb, h, w, &k);
        let (e_aa, _, _) = filter_valid(&prod(|x, _| x * x), h, w, &k);
        let (e_bb, _, _) = filter_valid(&prod(|_, y| y * y), h, w, &k);
        let (e_ab, _, _) = filter_valid(&prod(|x, y| x * y), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}
