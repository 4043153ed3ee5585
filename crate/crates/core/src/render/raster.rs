use super::{jacobian, project_splat, ProjectedSplat, MAHALANOBIS_CUTOFF_SQ, TRANSMITTANCE_EPS};
use crate::camera::CameraPose;
use crate::image::Image;
use crate::scene::{GaussianScene, Splat};
use alloc::vec;
use alloc::vec::Vec;

pub(super) const TILE: usize = 16;

/// Projected splats, their depth order and per-tile candidate lists.
pub(super) struct Prepared {
    pub projected: Vec<ProjectedSplat>,
    pub conics: Vec<[f64; 3]>,
    pub tiles_x: usize,
    /// For each tile, splat indices in front-to-back order.
    pub tile_lists: Vec<Vec<u32>>,
}

impl Prepared {
    pub fn new(splats: &[Splat], pose: &CameraPose, resolution: usize) -> Self {
        let jac = jacobian(pose, resolution);
        let projected: Vec<ProjectedSplat> = splats.iter().map(|s| project_splat(s, pose, resolution, &jac)).collect();
        let conics: Vec<[f64; 3]> = projected.iter().map(ProjectedSplat::conic).collect();
        let mut order: Vec<u32> = (0..projected.len() as u32).collect();
        order.sort_by(|&a, &b| {
            projected[a as usize].depth.total_cmp(&projected[b as usize].depth).then(a.cmp(&b))
        });
        let tiles_x = resolution.div_ceil(TILE);
        let mut tile_lists = vec![Vec::new(); tiles_x * tiles_x];
        let res = resolution as f64;
        for &i in &order {
            let p = &projected[i as usize];
            let rx = 3.0 * libm::sqrt(p.cov2d[0][0]);
            let ry = 3.0 * libm::sqrt(p.cov2d[1][1]);
            let (mx, my) = (p.mean2d[0], p.mean2d[1]);
            let x0 = libm::ceil(mx - rx - 0.5);
            let x1 = libm::floor(mx + rx - 0.5);
            let y0 = libm::ceil(my - ry - 0.5);
            let y1 = libm::floor(my + ry - 0.5);
            if x1 < 0.0 || y1 < 0.0 || x0 > res - 1.0 || y0 > res - 1.0 || !(x0 <= x1 && y0 <= y1) {
                continue;
            }
            let tx0 = x0.max(0.0) as usize / TILE;
            let tx1 = x1.min(res - 1.0) as usize / TILE;
            let ty0 = y0.max(0.0) as usize / TILE;
            let ty1 = y1.min(res - 1.0) as usize / TILE;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tile_lists[ty * tiles_x + tx].push(i);
                }
            }
        }
        Self { projected, conics, tiles_x, tile_lists }
    }

    /// Candidate list for pixel `(x, y)`.
    #[inline]
    pub fn candidates(&self, x: usize, y: usize) -> &[u32] {
        &self.tile_lists[(y / TILE) * self.tiles_x + x / TILE]
    }

    /// Alpha of splat `i` at the pixel center `(cx, cy)` and the Gaussian
    /// falloff value, or `None` outside the truncation radius.
    #[inline]
    pub fn alpha(&self, i: usize, cx: f64, cy: f64) -> Option<(f64, f64, f64, f64)> {
        let p = &self.projected[i];
        let [a, b, c] = self.conics[i];
        let dx = cx - p.mean2d[0];
        let dy = cy - p.mean2d[1];
        let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if !(q <= MAHALANOBIS_CUTOFF_SQ) {
            return None;
        }
        let g = crate::fmath::exp(-0.5 * q);
        Some((p.opacity * g, g, dx, dy))
    }
}

/// Renders `scene` at a square `resolution` over a solid `background`.
pub fn render(scene: &GaussianScene, pose: &CameraPose, resolution: usize, background: [f64; 3]) -> Image {
    render_splats(scene.splats(), pose, resolution, background)
}

pub(crate) fn render_splats(splats: &[Splat], pose: &CameraPose, resolution: usize, background: [f64; 3]) -> Image {
    let prep = Prepared::new(splats, pose, resolution);
    let mut out = vec![0.0; resolution * resolution * 3];
    for y in 0..resolution {
        let cy = y as f64 + 0.5;
        for x in 0..resolution {
            let cx = x as f64 + 0.5;
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for &i in prep.candidates(x, y) {
                let Some((a, ..)) = prep.alpha(i as usize, cx, cy) else { continue };
                let col = prep.projected[i as usize].color;
                let w = a * t;
                rgb[0] += w * col[0];
                rgb[1] += w * col[1];
                rgb[2] += w * col[2];
                t *= 1.0 - a;
                if t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            let o = (y * resolution + x) * 3;
            for c in 0..3 {
                out[o + c] = (rgb[c] + t * background[c]).clamp(0.0, 1.0);
            }
        }
    }
    Image::from_data(resolution, resolution, out).expect("rendered image is finite")
}

/// Accumulated compositing weights of one render.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatWeights {
    /// Per splat: sum over pixels of `alpha * transmittance`.
    pub per_splat: Vec<f64>,
    /// Per pixel: total compositing weight, `1 - final transmittance`.
    pub per_pixel: Vec<f64>,
}

pub fn splat_weights(scene: &GaussianScene, pose: &CameraPose, resolution: usize) -> SplatWeights {
    let prep = Prepared::new(scene.splats(), pose, resolution);
    let mut per_splat = vec![0.0; scene.len()];
    let mut per_pixel = vec![0.0; resolution * resolution];
    for y in 0..resolution {
        let cy = y as f64 + 0.5;
        for x in 0..resolution {
            let cx = x as f64 + 0.5;
            let mut t = 1.0;
            for &i in prep.candidates(x, y) {
                let Some((a, ..)) = prep.alpha(i as usize, cx, cy) else { continue };
                per_splat[i as usize] += a * t;
                t *= 1.0 - a;
                if t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            per_pixel[y * resolution + x] = 1.0 - t;
        }
    }
    SplatWeights { per_splat, per_pixel }
}
