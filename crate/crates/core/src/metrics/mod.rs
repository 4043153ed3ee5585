//! Image-quality and point-set metrics.

mod geometry;
mod perceptual;

pub use geometry::{chamfer, fscore, normalize_points, sample_points, PointSet, DEFAULT_FSCORE_TAU};
pub use perceptual::{edge_map, image_tensor, perceptual_graph, perceptual_proxy};

use crate::error::{bail, Result};
use crate::image::Image;
use alloc::vec;
use alloc::vec::Vec;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        bail!(Parameter, "images are {}x{} and {}x{}", a.width(), a.height(), b.width(), b.height());
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64)
}

/// Peak signal-to-noise ratio for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (-10.0 * libm::log10(m)).min(PSNR_CAP) })
}

/// Normalized 1-D Gaussian taps of odd length `len`.
pub fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let r = (len / 2) as f64;
    let w: Vec<f64> = (0..len).map(|i| { let d = i as f64 - r; libm::exp(-(d * d) / (2.0 * sigma * sigma)) }).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a single-channel `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the luma channel over all fully covered 11×11 windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        bail!(Parameter, "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}");
    }
    let (la, lb) = (a.luma(), b.luma());
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, _, _) = filter_valid(&la, w, h, &k);
    let (mu_b, _, _) = filter_valid(&lb, w, h, &k);
    let (saa, _, _) = filter_valid(&prod(&la, &la), w, h, &k);
    let (sbb, _, _) = filter_valid(&prod(&lb, &lb), w, h, &k);
    let (sab, _, _) = filter_valid(&prod(&la, &lb), w, h, &k);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests;
