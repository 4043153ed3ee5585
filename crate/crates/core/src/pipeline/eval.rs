use crate::camera::CameraPose;
use crate::error::{bail, Result};
use crate::metrics::{chamfer, fscore, normalize_points, perceptual_proxy, psnr, sample_points, ssim, DEFAULT_FSCORE_TAU};
use crate::oracle::BACKGROUND;
use crate::par;
use crate::render::render;
use crate::rng::Rng;
use crate::scene::GaussianScene;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Azimuth steps of the evaluation orbit at elevation 0.
    pub orbit_views: usize,
    pub point_samples: usize,
    pub perceptual_resolution: usize,
    pub fscore_tau: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { orbit_views: 24, point_samples: 8192, perceptual_resolution: 32, fscore_tau: DEFAULT_FSCORE_TAU, seed: 0 }
    }
}

/// Per-scene quality of a reconstruction against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub chamfer: f64,
    pub fscore: f64,
}

pub fn orbit_poses(ortho_half_extent: f64, count: usize) -> Result<Vec<CameraPose>> {
    if count == 0 {
        bail!(Parameter, "orbit needs at least one view");
    }
    (0..count).map(|i| CameraPose::free(360.0 * i as f64 / count as f64, 0.0, ortho_half_extent)).collect()
}

/// Image metrics averaged over the orbit, and geometry on normalised
/// Gaussian samples of both scenes. Both scenes are sampled from the same
/// random stream.
pub fn evaluate_scene(
    predicted: &GaussianScene,
    ground_truth: &GaussianScene,
    ortho_half_extent: f64,
    resolution: usize,
    config: &EvalConfig,
) -> Result<SceneMetrics> {
    let poses = orbit_poses(ortho_half_extent, config.orbit_views)?;
    let per_view = par::map(&poses, |_, p| -> Result<[f64; 3]> {
        let a = render(predicted, p, resolution, BACKGROUND);
        let b = render(ground_truth, p, resolution, BACKGROUND);
        Ok([psnr(&a, &b)?, ssim(&a, &b)?, perceptual_proxy(&a, &b, config.perceptual_resolution)?])
    });
    let mut acc = [0.0; 3];
    for v in per_view {
        let v = v?;
        (0..3).for_each(|k| acc[k] += v[k]);
    }
    let n = poses.len() as f64;
    let rng = Rng::new(config.seed);
    let pa = normalize_points(&sample_points(predicted.splats(), config.point_samples, &mut rng.fork(1))?)?;
    let pb = normalize_points(&sample_points(ground_truth.splats(), config.point_samples, &mut rng.fork(1))?)?;
    Ok(SceneMetrics {
        psnr: acc[0] / n,
        ssim: acc[1] / n,
        perceptual: acc[2] / n,
        chamfer: chamfer(&pa, &pb)?,
        fscore: fscore(&pa, &pb, config.fscore_tau)?,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var))
}

/// One-sided sign test p-value for `a[i] > b[i]`; ties are dropped.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Parameter, "paired samples differ in length: {} vs {}", a.len(), b.len());
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if n == 0 {
        return Ok(1.0);
    }
    // P(X >= wins) for X ~ Binomial(n, 1/2).
    let mut term = libm::pow(0.5, n as f64);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += term;
        }
        term *= (n - k) as f64 / (k + 1) as f64;
    }
    Ok(tail.min(1.0))
}
