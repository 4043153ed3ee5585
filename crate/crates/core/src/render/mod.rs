//! Differentiable orthographic splat rasterizer.
//!
//! Splats are projected with the constant orthographic Jacobian, sorted by
//! depth (index breaks ties) and alpha-composited front to back per pixel.
//! Compositing stops once transmittance drops below [`TRANSMITTANCE_EPS`];
//! whatever transmittance remains multiplies the background. Each splat's
//! footprint is truncated at Mahalanobis radius 3.

mod backward;
mod node;
mod raster;

pub use backward::{render_backward, SceneGrads, SplatGrad};
pub use node::render_node;
pub use raster::{render, splat_weights, SplatWeights};

use crate::camera::{dot, CameraPose};
use crate::scene::{normalize_quat, quat_to_matrix, GaussianScene, Splat};
use alloc::vec::Vec;

/// Added to the diagonal of every 2D covariance, in pixel².
pub const COV_FLOOR: f64 = 0.3;
/// Compositing terminates once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Squared Mahalanobis radius beyond which a splat contributes nothing.
pub const MAHALANOBIS_CUTOFF_SQ: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: [f64; 2],
    /// Symmetric `[[xx, xy], [xy, yy]]`, floor included.
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl ProjectedSplat {
    /// Inverse covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f64; 3] {
        let [[xx, xy], [_, yy]] = self.cov2d;
        let det = xx * yy - xy * xy;
        [yy / det, -xy / det, xx / det]
    }
}

/// Constant orthographic Jacobian rows (pixel units per scene unit).
pub(crate) fn jacobian(pose: &CameraPose, resolution: usize) -> [[f64; 3]; 2] {
    let b = pose.basis();
    let k = pose.pixel_scale(resolution);
    [
        [k * b.right[0], k * b.right[1], k * b.right[2]],
        [-k * b.up[0], -k * b.up[1], -k * b.up[2]],
    ]
}

pub(crate) fn project_splat(s: &Splat, pose: &CameraPose, resolution: usize, jac: &[[f64; 3]; 2]) -> ProjectedSplat {
    let p = pose.project_point(s.mean, resolution);
    let r = quat_to_matrix(normalize_quat(s.rotation));
    // M = R S, cov2d = J M Mᵀ Jᵀ
    let mut jm = [[0.0; 3]; 2];
    for (row, jrow) in jm.iter_mut().zip(jac) {
        for k in 0..3 {
            let m_col = [r[0][k] * s.scale[k], r[1][k] * s.scale[k], r[2][k] * s.scale[k]];
            row[k] = dot(*jrow, m_col);
        }
    }
    let xx = dot(jm[0], jm[0]) + COV_FLOOR;
    let xy = dot(jm[0], jm[1]);
    let yy = dot(jm[1], jm[1]) + COV_FLOOR;
    ProjectedSplat { mean2d: [p[0], p[1]], cov2d: [[xx, xy], [xy, yy]], depth: p[2], color: s.color, opacity: s.opacity() }
}

/// Projects every splat of `scene` for a square `resolution`.
pub fn project(scene: &GaussianScene, pose: &CameraPose, resolution: usize) -> Vec<ProjectedSplat> {
    let jac = jacobian(pose, resolution);
    scene.splats().iter().map(|s| project_splat(s, pose, resolution, &jac)).collect()
}

#[cfg(test)]
pub(crate) mod tests;

/// Number of scalars per splat in the flat parameter layout used by
/// [`flatten_splats`]: mean 3, rotation 4, scale 3, opacity logit 1, color 3.
pub const SPLAT_PARAMS: usize = 14;

/// Flattens splat fields into one vector (for gradient checking).
pub fn flatten_splats(splats: &[Splat]) -> Vec<f64> {
    let mut v = Vec::with_capacity(splats.len() * SPLAT_PARAMS);
    for s in splats {
        v.extend_from_slice(&s.mean);
        v.extend_from_slice(&s.rotation);
        v.extend_from_slice(&s.scale);
        v.push(s.opacity_logit);
        v.extend_from_slice(&s.color);
    }
    v
}

/// Inverse of [`flatten_splats`].
pub fn unflatten_splats(v: &[f64]) -> Vec<Splat> {
    v.chunks_exact(SPLAT_PARAMS)
        .map(|c| Splat {
            mean: [c[0], c[1], c[2]],
            rotation: [c[3], c[4], c[5], c[6]],
            scale: [c[7], c[8], c[9]],
            opacity_logit: c[10],
            color: [c[11], c[12], c[13]],
        })
        .collect()
}

/// Flattens gradients in the [`flatten_splats`] layout.
pub fn flatten_grads(g: &[SplatGrad]) -> Vec<f64> {
    let mut v = Vec::with_capacity(g.len() * SPLAT_PARAMS);
    for s in g {
        v.extend_from_slice(&s.mean);
        v.extend_from_slice(&s.rotation);
        v.extend_from_slice(&s.scale);
        v.push(s.opacity_logit);
        v.extend_from_slice(&s.color);
    }
    v
}

/// Fingerprint of the discrete compositing state: for every pixel, the
/// depth-ordered splats that pass the truncation and the point where
/// compositing stops. The rendered image is smooth in the splat parameters
/// wherever this value is constant, so a finite-difference stencil is only
/// meaningful when all of its points share the fingerprint.
pub fn active_set_signature(splats: &[Splat], pose: &CameraPose, resolution: usize) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mix = |h: u64, v: u64| (h ^ v).wrapping_mul(PRIME);
    let prep = raster::Prepared::new(splats, pose, resolution);
    let mut h = 0xcbf2_9ce4_8422_2325;
    for y in 0..resolution {
        let cy = y as f64 + 0.5;
        for x in 0..resolution {
            let cx = x as f64 + 0.5;
            let mut t = 1.0;
            h = mix(h, u64::MAX);
            for &i in prep.candidates(x, y) {
                let Some((a, ..)) = prep.alpha(i as usize, cx, cy) else { continue };
                h = mix(h, u64::from(i));
                t *= 1.0 - a;
                if t < TRANSMITTANCE_EPS {
                    h = mix(h, u64::MAX - 1);
                    break;
                }
            }
        }
    }
    h
}

/// Distance of the nearest pixel to a non-differentiable threshold: the
/// squared-Mahalanobis truncation (absolute distance from 9) and the
/// termination test (transmittance relative distance from its threshold).
/// Finite-difference checks skip instances where either margin is tiny.
pub fn threshold_margins(splats: &[Splat], pose: &CameraPose, resolution: usize) -> (f64, f64) {
    let prep = raster::Prepared::new(splats, pose, resolution);
    let mut q_margin = f64::INFINITY;
    let mut t_margin = f64::INFINITY;
    for y in 0..resolution {
        let cy = y as f64 + 0.5;
        for x in 0..resolution {
            let cx = x as f64 + 0.5;
            let mut t = 1.0;
            for &i in prep.candidates(x, y) {
                let p = &prep.projected[i as usize];
                let [a, b, c] = prep.conics[i as usize];
                let (dx, dy) = (cx - p.mean2d[0], cy - p.mean2d[1]);
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                q_margin = q_margin.min((q - MAHALANOBIS_CUTOFF_SQ).abs());
                if q > MAHALANOBIS_CUTOFF_SQ {
                    continue;
                }
                t *= 1.0 - p.opacity * crate::fmath::exp(-0.5 * q);
                t_margin = t_margin.min((t - TRANSMITTANCE_EPS).abs() / TRANSMITTANCE_EPS);
                if t < TRANSMITTANCE_EPS {
                    break;
                }
            }
        }
    }
    (q_margin, t_margin)
}
