use super::raster::Prepared;
use super::{jacobian, TRANSMITTANCE_EPS};
use crate::camera::CameraPose;
use crate::error::{bail, Result};
use crate::image::Image;
use crate::scene::{normalize_quat, quat_to_matrix, GaussianScene, Splat};
use alloc::vec;
use alloc::vec::Vec;

/// Gradient of a scalar loss with respect to one splat's stored fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrads {
    pub splats: Vec<SplatGrad>,
}

impl SceneGrads {
    pub fn is_finite(&self) -> bool {
        self.splats.iter().all(|g| {
            g.mean.iter().chain(&g.rotation).chain(&g.scale).chain(&g.color).all(|v| v.is_finite())
                && g.opacity_logit.is_finite()
        })
    }
}

/// Per-splat gradients w.r.t. projected quantities, before the chain rule
/// through the projection.
#[derive(Clone, Copy, Default)]
struct Projected2dGrad {
    mean2d: [f64; 2],
    /// Gradient w.r.t. the full (symmetric) inverse covariance matrix.
    conic: [[f64; 2]; 2],
    opacity: f64,
    color: [f64; 3],
}

struct Hit {
    idx: usize,
    alpha: f64,
    falloff: f64,
    trans: f64,
    dx: f64,
    dy: f64,
}

/// Exact adjoint of [`super::render`]: maps `dL/dimage` to `dL/dscene`.
///
/// The depth sort and the truncation/termination thresholds are treated as
/// piecewise constant.
pub fn render_backward(
    scene: &GaussianScene,
    pose: &CameraPose,
    resolution: usize,
    background: [f64; 3],
    grad_image: &Image,
) -> Result<SceneGrads> {
    if grad_image.width() != resolution || grad_image.height() != resolution {
        bail!(Parameter, "gradient image is {}x{}, render is {resolution}²", grad_image.width(), grad_image.height());
    }
    Ok(SceneGrads { splats: backward_splats(scene.splats(), pose, resolution, background, grad_image.data()) })
}

pub(crate) fn backward_splats(
    splats: &[Splat],
    pose: &CameraPose,
    resolution: usize,
    background: [f64; 3],
    grad: &[f64],
) -> Vec<SplatGrad> {
    let prep = Prepared::new(splats, pose, resolution);
    let mut g2 = vec![Projected2dGrad::default(); splats.len()];
    let mut hits: Vec<Hit> = Vec::new();
    for y in 0..resolution {
        let cy = y as f64 + 0.5;
        for x in 0..resolution {
            let o = (y * resolution + x) * 3;
            let gp = [grad[o], grad[o + 1], grad[o + 2]];
            if gp == [0.0; 3] {
                continue;
            }
            let cx = x as f64 + 0.5;
            hits.clear();
            let mut t = 1.0;
            for &i in prep.candidates(x, y) {
                let Some((a, g, dx, dy)) = prep.alpha(i as usize, cx, cy) else { continue };
                hits.push(Hit { idx: i as usize, alpha: a, falloff: g, trans: t, dx, dy });
                t *= 1.0 - a;
                if t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            // suffix color seen behind each hit, starting from the background
            let mut behind = background;
            for h in hits.iter().rev() {
                let col = prep.projected[h.idx].color;
                let w = h.alpha * h.trans;
                let acc = &mut g2[h.idx];
                for c in 0..3 {
                    acc.color[c] += gp[c] * w;
                }
                let d_alpha = h.trans * (0..3).map(|c| gp[c] * (col[c] - behind[c])).sum::<f64>();
                for c in 0..3 {
                    behind[c] = col[c] * h.alpha + (1.0 - h.alpha) * behind[c];
                }
                acc.opacity += d_alpha * h.falloff;
                let d_q = -0.5 * h.alpha * d_alpha;
                let [ca, cb, cc] = prep.conics[h.idx];
                // q = dᵀ C d with d = pixel - mean2d
                acc.mean2d[0] -= d_q * 2.0 * (ca * h.dx + cb * h.dy);
                acc.mean2d[1] -= d_q * 2.0 * (cb * h.dx + cc * h.dy);
                acc.conic[0][0] += d_q * h.dx * h.dx;
                acc.conic[0][1] += d_q * h.dx * h.dy;
                acc.conic[1][0] += d_q * h.dx * h.dy;
                acc.conic[1][1] += d_q * h.dy * h.dy;
            }
        }
    }
    let jac = jacobian(pose, resolution);
    splats
        .iter()
        .zip(&g2)
        .zip(&prep.conics)
        .map(|((s, g), conic)| chain_to_splat(s, g, *conic, &jac))
        .collect()
}

fn chain_to_splat(s: &Splat, g: &Projected2dGrad, conic: [f64; 3], jac: &[[f64; 3]; 2]) -> SplatGrad {
    let mut out = SplatGrad { color: g.color, ..Default::default() };
    let o = s.opacity();
    out.opacity_logit = g.opacity * o * (1.0 - o);
    for k in 0..3 {
        out.mean[k] = g.mean2d[0] * jac[0][k] + g.mean2d[1] * jac[1][k];
    }
    // dL/dcov = -C G C for C the inverse covariance
    let c = [[conic[0], conic[1]], [conic[1], conic[2]]];
    let mut gc = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    acc += c[i][k] * g.conic[k][l] * c[l][j];
                }
            }
            gc[i][j] = -acc;
        }
    }
    // dL/dΣ = Jᵀ Gcov J
    let mut gs = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    acc += jac[i][a] * gc[i][j] * jac[j][b];
                }
            }
            gs[a][b] = acc;
        }
    }
    // Σ = M Mᵀ, M = R S: dL/dM = (G + Gᵀ) M
    let qn = normalize_quat(s.rotation);
    let r = quat_to_matrix(qn);
    let mut gm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gm[i][j] = (0..3).map(|k| (gs[i][k] + gs[k][i]) * r[k][j] * s.scale[j]).sum();
        }
    }
    let mut gr = [[0.0; 3]; 3];
    for j in 0..3 {
        out.scale[j] = (0..3).map(|i| gm[i][j] * r[i][j]).sum();
        for i in 0..3 {
            gr[i][j] = gm[i][j] * s.scale[j];
        }
    }
    let gq = rotation_matrix_vjp(qn, &gr);
    out.rotation = normalize_vjp(s.rotation, qn, gq);
    out
}

/// Vector-Jacobian product of [`quat_to_matrix`] at unit quaternion `q`.
fn rotation_matrix_vjp(q: [f64; 4], g: &[[f64; 3]; 3]) -> [f64; 4] {
    let [w, x, y, z] = q;
    let gw = 2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = 2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
        - 2.0 * x * g[2][2]);
    let gy = 2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
        - 2.0 * y * g[2][2]);
    let gz = 2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1] + y * g[1][2]
        + x * g[2][0]
        + y * g[2][1]);
    [gw, gx, gy, gz]
}

/// Chain rule through `q / |q|`.
fn normalize_vjp(raw: [f64; 4], unit: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    let n = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
    if !(n > 1e-12) {
        return [0.0; 4];
    }
    let proj: f64 = (0..4).map(|i| unit[i] * g[i]).sum();
    [(g[0] - unit[0] * proj) / n, (g[1] - unit[1] * proj) / n, (g[2] - unit[2] * proj) / n, (g[3] - unit[3] * proj) / n]
}
