//! Synthetic ground truth and stand-ins for a pretrained multi-view
//! generator: a procedural scene generator, a generator with controllable
//! cross-view inconsistency, and an oracle denoiser.

use crate::camera::{CanonicalRig, ViewLabel};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{bail, Result};
use crate::image::Image;
use crate::par;
use crate::render::{render, splat_weights};
use crate::rng::Rng;
use crate::scene::{logit, normalize_quat, quat_to_matrix, GaussianScene, Splat};
use crate::views::{MultiViewSet, Stage};
use alloc::vec::Vec;
use core::f64::consts::TAU;

/// Background color of every synthetic render.
pub const BACKGROUND: [f64; 3] = [1.0; 3];

/// Splat counts a generated scene must fall within.
pub const MIN_SPLATS: usize = 64;
pub const MAX_SPLATS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    SphereCluster,
    BoxCluster,
    TorusRing,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 3] = [PrimitiveKind::SphereCluster, PrimitiveKind::BoxCluster, PrimitiveKind::TorusRing];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::SphereCluster => "sphere_cluster",
            PrimitiveKind::BoxCluster => "box_cluster",
            PrimitiveKind::TorusRing => "torus_ring",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

pub const DEFAULT_PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.55, 0.85],
    [0.95, 0.75, 0.15],
    [0.3, 0.7, 0.35],
    [0.55, 0.3, 0.7],
    [0.25, 0.25, 0.3],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitive_count: usize,
    /// Kinds drawn from uniformly, one per primitive.
    pub kinds: Vec<PrimitiveKind>,
    pub palette: Vec<[f64; 3]>,
    pub splats_per_primitive: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Two to three primitives of any kind with the default palette.
    pub fn with_seed(seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork(0x5CE7E);
        SceneSpec {
            primitive_count: 2 + rng.below(2),
            kinds: PrimitiveKind::ALL.to_vec(),
            palette: DEFAULT_PALETTE.to_vec(),
            splats_per_primitive: 48,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.primitive_count * self.splats_per_primitive;
        if !(MIN_SPLATS..=MAX_SPLATS).contains(&total) {
            bail!(Parameter, "scene would hold {total} splats, outside [{MIN_SPLATS}, {MAX_SPLATS}]");
        }
        if self.kinds.is_empty() || self.palette.is_empty() {
            bail!(Parameter, "scene spec needs at least one primitive kind and one palette color");
        }
        if self.palette.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            bail!(Parameter, "palette colors must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Samples one primitive's splats. Returns the primitive radius alongside.
fn primitive(kind: PrimitiveKind, center: [f64; 3], radius: f64, color: [f64; 3], n: usize, rng: &mut Rng) -> Vec<Splat> {
    let q = normalize_quat([rng.normal(), rng.normal(), rng.normal(), rng.normal()]);
    let rot = quat_to_matrix(q);
    let (half_y, half_z) = (radius * rng.uniform_range(0.5, 1.0), radius * rng.uniform_range(0.5, 1.0));
    (0..n)
        .map(|_| {
            // Local surface point and outward normal.
            let (p, normal, size) = match kind {
                PrimitiveKind::SphereCluster => {
                    let v = [rng.normal(), rng.normal(), rng.normal()];
                    let l = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).max(1e-12);
                    let n = [v[0] / l, v[1] / l, v[2] / l];
                    ([n[0] * radius, n[1] * radius, n[2] * radius], n, radius * 0.28)
                }
                PrimitiveKind::BoxCluster => {
                    let half = [radius, half_y, half_z];
                    let axis = rng.below(3);
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    let mut p = [0.0; 3];
                    let mut n = [0.0; 3];
                    for k in 0..3 {
                        p[k] = if k == axis { sign * half[k] } else { rng.uniform_range(-half[k], half[k]) };
                    }
                    n[axis] = sign;
                    (p, n, radius * 0.25)
                }
                PrimitiveKind::TorusRing => {
                    let minor = radius * 0.3;
                    let major = radius - minor;
                    let (u, v) = (rng.uniform() * TAU, rng.uniform() * TAU);
                    let (cu, su, cv, sv) = (libm::cos(u), libm::sin(u), libm::cos(v), libm::sin(v));
                    let p = [(major + minor * cv) * cu, minor * sv, (major + minor * cv) * su];
                    (p, [cv * cu, sv, cv * su], minor * 0.6)
                }
            };
            let mut mean = center;
            let mut nw = [0.0; 3];
            for r in 0..3 {
                for c in 0..3 {
                    mean[r] += rot[r][c] * p[c];
                    nw[r] += rot[r][c] * normal[c];
                }
            }
            let shade = 0.8 + 0.2 * nw[1];
            let jitter = rng.uniform_range(-0.04, 0.04);
            let rotation = normalize_quat([rng.normal(), rng.normal(), rng.normal(), rng.normal()]);
            let scale = [
                size * rng.uniform_range(0.7, 1.0),
                size * rng.uniform_range(0.7, 1.0),
                size * rng.uniform_range(0.4, 0.8),
            ];
            Splat {
                mean,
                rotation,
                scale,
                opacity_logit: logit(rng.uniform_range(0.8, 0.95)),
                color: core::array::from_fn(|c| (color[c] * shade + jitter).clamp(0.0, 1.0)),
            }
        })
        .collect()
}

/// Fraction of pixels with accumulated alpha above 0.5 at each rig pose.
pub fn coverage(scene: &GaussianScene, rig: &CanonicalRig, resolution: usize) -> [f64; 6] {
    core::array::from_fn(|i| {
        let w = splat_weights(scene, &rig.poses()[i], resolution);
        w.per_pixel.iter().filter(|&&a| a > 0.5).count() as f64 / w.per_pixel.len() as f64
    })
}

/// Deterministic procedural scene inside `[-0.9, 0.9]³`, visible from every
/// canonical pose of a rig with half extent 1.2.
pub fn generate_scene(spec: &SceneSpec) -> Result<GaussianScene> {
    spec.validate()?;
    let rig = crate::camera::make_canonical_rig(1.2)?;
    let root = Rng::new(spec.seed);
    for attempt in 0..64 {
        let mut rng = root.fork(attempt);
        let mut splats = Vec::with_capacity(spec.primitive_count * spec.splats_per_primitive);
        for _ in 0..spec.primitive_count {
            let kind = spec.kinds[rng.below(spec.kinds.len())];
            let color = spec.palette[rng.below(spec.palette.len())];
            let radius = rng.uniform_range(0.22, 0.38);
            let center = [rng.uniform_range(-0.4, 0.4), rng.uniform_range(-0.4, 0.4), rng.uniform_range(-0.4, 0.4)];
            splats.extend(primitive(kind, center, radius, color, spec.splats_per_primitive, &mut rng));
        }
        let scene = GaussianScene::new(splats)?;
        if coverage(&scene, &rig, 32).iter().all(|&c| c > 0.01) {
            return Ok(scene);
        }
    }
    bail!(Parameter, "seed {} produced no scene visible from every pose", spec.seed)
}

/// Cross-view perturbation strengths for [`mv_generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct InconsistencyModel {
    /// Per-channel foreground color shift, drawn from `±color_shift_amp`.
    pub color_shift_amp: f64,
    /// Peak displacement of the smooth warp, in pixels.
    pub warp_amp: f64,
    /// Peak change of boundary alpha.
    pub silhouette_noise_amp: f64,
    /// Stream labels of the six views, in rig order.
    pub per_view_seed_offsets: [u64; 6],
}

impl Default for InconsistencyModel {
    fn default() -> Self {
        Self { color_shift_amp: 0.08, warp_amp: 3.0, silhouette_noise_amp: 0.05, per_view_seed_offsets: [0, 1, 2, 3, 4, 5] }
    }
}

impl InconsistencyModel {
    pub fn consistent() -> Self {
        Self { color_shift_amp: 0.0, warp_amp: 0.0, silhouette_noise_amp: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let amps = [self.color_shift_amp, self.warp_amp, self.silhouette_noise_amp];
        if amps.iter().any(|a| !a.is_finite() || *a < 0.0) {
            bail!(Parameter, "inconsistency amplitudes must be finite and non-negative");
        }
        Ok(())
    }
}

/// Two sinusoidal octaves per channel with peak magnitude at most 1.
pub struct SmoothField {
    terms: Vec<[f64; 5]>,
    channels: usize,
}

impl SmoothField {
    pub fn new(rng: &mut Rng, channels: usize) -> Self {
        let mut terms = Vec::with_capacity(2 * channels);
        for octave in 0..2 {
            let k = (octave + 1) as f64;
            for _ in 0..channels {
                terms.push([
                    rng.uniform_range(0.5, 2.0) * k,
                    rng.uniform_range(0.5, 2.0) * k,
                    rng.uniform() * TAU,
                    rng.uniform() * TAU,
                    1.0 / (1.5 * k),
                ]);
            }
        }
        Self { terms, channels }
    }

    /// Field value at normalized coordinates `(u, v) ∈ [0, 1]²`.
    pub fn eval(&self, u: f64, v: f64, channel: usize) -> f64 {
        self.terms
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .map(|[fx, fy, px, py, w]| w * libm::sin(TAU * fx * u + px) * libm::cos(TAU * fy * v + py))
            .sum()
    }

    pub fn image(&self, width: usize, height: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = ((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64);
                for c in 0..self.channels {
                    out.push(self.eval(u, v, c));
                }
            }
        }
        out
    }
}

fn perturb_view(render: &Image, alpha: &[f64], inc: &InconsistencyModel, rng: &mut Rng) -> Image {
    let (w, h) = (render.width(), render.height());
    let mut img = render.clone();
    if inc.silhouette_noise_amp > 0.0 {
        let field = SmoothField::new(rng, 1).image(w, h);
        let data = img.data_mut();
        for (p, (&a, f)) in alpha.iter().zip(&field).enumerate() {
            if a <= 1e-6 {
                continue;
            }
            let a2 = (a + inc.silhouette_noise_amp * f * 4.0 * a * (1.0 - a)).clamp(0.0, 1.0);
            for c in 0..3 {
                let fg = (data[3 * p + c] - (1.0 - a) * BACKGROUND[c]) / a;
                data[3 * p + c] = (a2 * fg + (1.0 - a2) * BACKGROUND[c]).clamp(0.0, 1.0);
            }
        }
    }
    if inc.color_shift_amp > 0.0 {
        let shift: [f64; 3] = core::array::from_fn(|_| rng.uniform_range(-inc.color_shift_amp, inc.color_shift_amp));
        for (px, &a) in img.data_mut().chunks_exact_mut(3).zip(alpha) {
            for c in 0..3 {
                px[c] = (px[c] + a.min(1.0) * shift[c]).clamp(0.0, 1.0);
            }
        }
    }
    if inc.warp_amp > 0.0 {
        let field = SmoothField::new(rng, 2);
        let src = img.clone();
        img = Image::from_fn(w, h, |x, y, c| {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let dx = inc.warp_amp * field.eval(u, v, 0);
            let dy = inc.warp_amp * field.eval(u, v, 1);
            src.sample_bilinear(x as f64 + 0.5 + dx, y as f64 + 0.5 + dy, c)
        });
    }
    img
}

/// Renders `gt` from the rig and perturbs every view except the front one,
/// which is replaced by `condition`.
pub fn mv_generate(
    condition: &Image,
    gt: &GaussianScene,
    rig: &CanonicalRig,
    inc: &InconsistencyModel,
    rng: &Rng,
) -> Result<MultiViewSet> {
    inc.validate()?;
    if condition.width() != condition.height() {
        bail!(Parameter, "condition must be square");
    }
    let res = condition.width();
    let poses = rig.poses();
    let images = par::map(poses, |i, pose| {
        if pose.label == ViewLabel::Front {
            return condition.clone();
        }
        let img = render(gt, pose, res, BACKGROUND);
        let alpha = splat_weights(gt, pose, res).per_pixel;
        perturb_view(&img, &alpha, inc, &mut rng.fork(inc.per_view_seed_offsets[i]))
    });
    MultiViewSet::new(poses.iter().copied().zip(images).collect(), Some(condition.clone()), Stage::Generated)
}

/// Ground-truth renders of `gt` at every rig pose.
pub fn gt_views(gt: &GaussianScene, rig: &CanonicalRig, resolution: usize) -> Result<MultiViewSet> {
    let poses = rig.poses();
    let images = par::map(poses, |_, pose| render(gt, pose, resolution, BACKGROUND));
    MultiViewSet::new(poses.iter().copied().zip(images).collect(), None, Stage::Rendered)
}

/// Default hallucination amplitude of the oracle denoiser.
pub const DEFAULT_ETA: f64 = 0.05;

/// Clean-view predictor that blends the signal estimate with ground truth.
///
/// At timestep `t` with `γ = σ_t²` it returns
/// `clip((1−γ)·clip(x_t/α_t) + γ·(gt + η·g·h))`, where `h` is a fresh smooth
/// per-view field and `g = σ²/(σ² + K·α²)`. `K` is the number of pixels the
/// model effectively pools when resolving low-frequency structure; the
/// hallucination shrinks while that pooled evidence still pins the content
/// down and reaches full amplitude only as the signal vanishes.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    gt: Vec<Image>,
    pub eta: f64,
    pub evidence_pixels: f64,
}

impl OracleDenoiser {
    /// `evidence_pixels` defaults to one sixteenth of the view pixel count.
    pub fn new(gt: &MultiViewSet, eta: f64) -> Self {
        let (w, h) = gt.resolution();
        Self { gt: gt.images().cloned().collect(), eta, evidence_pixels: (w * h) as f64 / 16.0 }
    }

    pub fn with_evidence_pixels(mut self, k: f64) -> Self {
        self.evidence_pixels = k;
        self
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(
        &self,
        noised: &[Image],
        _condition: &Image,
        t: usize,
        schedule: &NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<Vec<Image>> {
        if t == 0 || t > schedule.max_timestep() {
            bail!(Parameter, "oracle denoising needs t in [1, T], got {t}");
        }
        if noised.len() != self.gt.len() || noised.iter().zip(&self.gt).any(|(a, b)| !a.same_shape(b)) {
            bail!(Parameter, "noised views do not match ground-truth views");
        }
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        let gamma = s * s;
        let gate = gamma / (gamma + self.evidence_pixels * a * a);
        let amp = self.eta * gate;
        let call = rng.next_u64();
        let pairs: Vec<(&Image, &Image)> = noised.iter().zip(&self.gt).collect();
        let out = par::map(&pairs, |i, (x, g)| {
            let h = if amp > 0.0 {
                SmoothField::new(&mut Rng::new(call).fork(i as u64), 3).image(x.width(), x.height())
            } else {
                Vec::new()
            };
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(k, (&xt, &gv))| {
                    let hall = if amp > 0.0 { amp * h[k] } else { 0.0 };
                    ((1.0 - gamma) * (xt / a).clamp(0.0, 1.0) + gamma * (gv + hall)).clamp(0.0, 1.0)
                })
                .collect();
            Image::from_data(x.width(), x.height(), data)
        });
        out.into_iter().collect()
    }
}

/// One oracle denoising call over a view set.
pub fn oracle_denoise(
    noised: &MultiViewSet,
    condition: &Image,
    t: usize,
    schedule: &NoiseSchedule,
    gt: &MultiViewSet,
    eta: f64,
    rng: &mut Rng,
) -> Result<MultiViewSet> {
    let x: Vec<Image> = noised.images().cloned().collect();
    let out = OracleDenoiser::new(gt, eta).denoise(&x, condition, t, schedule, rng)?;
    noised.with_images(out, Stage::Refined)
}
