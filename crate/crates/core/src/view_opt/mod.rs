//! Input-view alignment: find the pose that best explains a reference image,
//! then fit a visibility-gated residual on the splats for that pose only.


use crate::autodiff::{adam_step, AdamConfig, AdamState, CustomOp, Graph, Tensor};
use crate::camera::{azimuth_distance, wrap_degrees, CameraPose, ViewLabel};
use crate::error::{bail, Result};
use crate::image::Image;
use crate::metrics::{image_tensor, perceptual_graph, perceptual_proxy, psnr};
use crate::oracle::BACKGROUND;
use crate::par;
use crate::render::{flatten_splats, render, render_node, splat_weights, unflatten_splats, SPLAT_PARAMS};
use crate::scene::{logit, sigmoid, GaussianScene};
use crate::views::MultiViewSet;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

/// Largest per-axis mean offset a residual can apply.
pub const MEAN_DELTA_BOUND: f64 = 0.05;
/// Residual values per splat: color 3, opacity logit 1, mean 3.
pub const RESIDUAL_PARAMS: usize = 7;
/// Largest opacity-logit change a residual can apply.
pub const OPACITY_DELTA_BOUND: f64 = 8.0;
const OPACITY_LOGIT_LIMIT: f64 = 30.0;
const COLOR_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSearchConfig {
    pub ortho_half_extent: f64,
    pub azimuth_step: f64,
    pub elevations: Vec<f64>,
    /// Width of the final golden-section bracket, degrees.
    pub tolerance: f64,
    pub perceptual_resolution: usize,
}

impl Default for PoseSearchConfig {
    fn default() -> Self {
        Self {
            ortho_half_extent: 1.2,
            azimuth_step: 15.0,
            elevations: vec![-20.0, 0.0, 20.0],
            tolerance: 0.5,
            perceptual_resolution: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSearchResult {
    pub pose: CameraPose,
    pub distance: f64,
    /// Every evaluated pose with its distance, grid first.
    pub trace: Vec<(CameraPose, f64)>,
}

fn pose_distance(scene: &GaussianScene, pose: &CameraPose, target: &Image, res: usize) -> Result<f64> {
    let img = render(scene, pose, target.width(), BACKGROUND);
    perceptual_proxy(&img, target, res)
}

/// Coarse azimuth × elevation grid, then golden-section refinement of the
/// azimuth around the best grid cell. Returns the best pose evaluated.
pub fn pose_search(scene: &GaussianScene, input_view: &Image, config: &PoseSearchConfig) -> Result<PoseSearchResult> {
    if input_view.width() != input_view.height() {
        bail!(Parameter, "input view must be square");
    }
    if !(config.azimuth_step > 0.0) || config.elevations.is_empty() || !(config.tolerance > 0.0) {
        bail!(Parameter, "pose search needs a positive step, tolerance and at least one elevation");
    }
    let extent = config.ortho_half_extent;
    let count = libm::ceil(360.0 / config.azimuth_step) as usize;
    let mut grid = Vec::with_capacity(count * config.elevations.len());
    for &el in &config.elevations {
        for i in 0..count {
            grid.push(CameraPose::free(i as f64 * config.azimuth_step, el, extent)?);
        }
    }
    let res = config.perceptual_resolution;
    let dists = par::map(&grid, |_, p| pose_distance(scene, p, input_view, res));
    let mut trace = Vec::with_capacity(grid.len() + 32);
    for (p, d) in grid.into_iter().zip(dists) {
        trace.push((p, d?));
    }
    let (best, _) = argmin(&trace);
    let (az0, el) = (trace[best].0.azimuth(), trace[best].0.elevation());

    let eval = |az: f64, trace: &mut Vec<(CameraPose, f64)>| -> Result<f64> {
        let p = CameraPose::free(wrap_degrees(az), el, extent)?;
        let d = pose_distance(scene, &p, input_view, res)?;
        trace.push((p, d));
        Ok(d)
    };
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut a, mut b) = (az0 - config.azimuth_step, az0 + config.azimuth_step);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut trace)?;
    let mut fd = eval(d, &mut trace)?;
    while b - a > config.tolerance {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut trace)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut trace)?;
        }
    }
    eval((a + b) / 2.0, &mut trace)?;
    let (best, distance) = argmin(&trace);
    Ok(PoseSearchResult { pose: trace[best].0, distance, trace })
}

fn argmin(trace: &[(CameraPose, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, (_, d)) in trace.iter().enumerate() {
        if *d < best.1 {
            best = (i, *d);
        }
    }
    best
}

/// Per-splat compositing weight at `pose`, scaled so the largest is 1.
pub fn visibility_weights(scene: &GaussianScene, pose: &CameraPose, resolution: usize) -> Vec<f64> {
    let w = splat_weights(scene, pose, resolution).per_splat;
    let max = w.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        w.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; w.len()]
    }
}

/// Per-splat appearance and position deltas with fixed gates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub d_color: Vec<[f64; 3]>,
    pub d_opacity_logit: Vec<f64>,
    pub d_mean: Vec<[f64; 3]>,
    pub gate: Vec<f64>,
}

impl ResidualField {
    pub fn zeros(gate: Vec<f64>) -> Result<Self> {
        if gate.iter().any(|g| !(0.0..=1.0).contains(g)) {
            bail!(Parameter, "gates must lie in [0, 1]");
        }
        let n = gate.len();
        Ok(Self { d_color: vec![[0.0; 3]; n], d_opacity_logit: vec![0.0; n], d_mean: vec![[0.0; 3]; n], gate })
    }

    pub fn len(&self) -> usize {
        self.gate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gate.is_empty()
    }

    /// Rows of `[d_color, d_opacity_logit, d_mean]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * RESIDUAL_PARAMS);
        for i in 0..self.len() {
            out.extend_from_slice(&self.d_color[i]);
            out.push(self.d_opacity_logit[i]);
            out.extend_from_slice(&self.d_mean[i]);
        }
        out
    }

    /// Inverse of [`Self::to_flat`]; `flat` must hold `len() × RESIDUAL_PARAMS` values.
    pub fn set_flat(&mut self, flat: &[f64]) {
        for (i, r) in flat.chunks_exact(RESIDUAL_PARAMS).enumerate() {
            self.d_color[i] = [r[0], r[1], r[2]];
            self.d_opacity_logit[i] = r[3];
            self.d_mean[i] = [r[4], r[5], r[6]];
        }
    }

    /// Euclidean norm of all deltas.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.to_flat().iter().map(|v| v * v).sum())
    }

    /// `θ + gate · W` through range-safe maps.
    pub fn apply(&self, scene: &GaussianScene) -> Result<GaussianScene> {
        if scene.len() != self.len() {
            bail!(Parameter, "residual has {} entries for {} splats", self.len(), scene.len());
        }
        let out = apply_flat(&flatten_splats(scene.splats()), &self.to_flat(), &self.gate);
        GaussianScene::new(unflatten_splats(&out))
    }
}

fn shift_color(c: f64, z: f64) -> f64 {
    if z == 0.0 {
        c
    } else {
        sigmoid(logit(c.clamp(COLOR_CLAMP, 1.0 - COLOR_CLAMP)) + z)
    }
}

fn apply_flat(base: &[f64], delta: &[f64], gate: &[f64]) -> Vec<f64> {
    let mut out = base.to_vec();
    for ((row, d), &g) in out.chunks_exact_mut(SPLAT_PARAMS).zip(delta.chunks_exact(RESIDUAL_PARAMS)).zip(gate) {
        for k in 0..3 {
            row[k] += g * MEAN_DELTA_BOUND * crate::fmath::tanh(d[4 + k]);
            row[11 + k] = shift_color(row[11 + k], g * d[k]);
        }
        let o = row[10] + g * OPACITY_DELTA_BOUND * crate::fmath::tanh(d[3] / OPACITY_DELTA_BOUND);
        row[10] = o.clamp(-OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT);
    }
    out
}

struct ApplyResidual {
    gate: Vec<f64>,
}

impl CustomOp for ApplyResidual {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let delta = inputs[0].data();
        let mut out = vec![0.0; delta.len()];
        let rows = output.data().chunks_exact(SPLAT_PARAMS).zip(grad.chunks_exact(SPLAT_PARAMS));
        for (i, (o, gr)) in rows.enumerate() {
            let (d, g) = (&delta[i * RESIDUAL_PARAMS..(i + 1) * RESIDUAL_PARAMS], self.gate[i]);
            let r = &mut out[i * RESIDUAL_PARAMS..(i + 1) * RESIDUAL_PARAMS];
            for k in 0..3 {
                let s = o[11 + k];
                r[k] = gr[11 + k] * g * s * (1.0 - s);
                let t = crate::fmath::tanh(d[4 + k]);
                r[4 + k] = gr[k] * g * MEAN_DELTA_BOUND * (1.0 - t * t);
            }
            let t = crate::fmath::tanh(d[3] / OPACITY_DELTA_BOUND);
            let inside = o[10].abs() < OPACITY_LOGIT_LIMIT;
            r[3] = if inside { gr[10] * g * (1.0 - t * t) } else { 0.0 };
        }
        vec![out]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualConfig {
    pub iters: usize,
    pub optim: AdamConfig,
    pub perceptual_resolution: usize,
    /// Consecutive loss increases that end the run early.
    pub patience: usize,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self { iters: 200, optim: AdamConfig { lr: 0.15, ..AdamConfig::default() }, perceptual_resolution: 32, patience: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewOptReport {
    pub pose: CameraPose,
    pub dist_before: f64,
    pub dist_after: f64,
    /// Per-iteration loss of the evaluated iterates.
    pub losses: Vec<f64>,
    pub best_iteration: usize,
    pub diverged: bool,
    /// `PSNR(after) − PSNR(before)` against each reference view other than
    /// the one closest to the optimised pose.
    pub psnr_drift: Vec<(ViewLabel, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOutcome {
    pub field: ResidualField,
    pub scene: GaussianScene,
    pub report: ViewOptReport,
}

/// Records `proxy(render(θ + gate·W, pose), target)` and returns the loss
/// value and, when asked, its gradient with respect to the flat residual.
pub fn residual_objective(
    base_flat: &[f64],
    delta: &[f64],
    gate: &[f64],
    pose: &CameraPose,
    target: &Image,
    perceptual_resolution: usize,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = gate.len();
    let mut g = Graph::new();
    let d = g.param(Tensor::matrix(n, RESIDUAL_PARAMS, delta.to_vec())?);
    let applied = Tensor::matrix(n, SPLAT_PARAMS, apply_flat(base_flat, delta, gate))?;
    let splats = g.custom(&[d], applied, Box::new(ApplyResidual { gate: gate.to_vec() }));
    let img = render_node(&mut g, splats, pose, target.width(), BACKGROUND)?;
    let t = g.constant(image_tensor(target));
    let loss = perceptual_graph(&mut g, img, t, perceptual_resolution)?;
    let value = g.value(loss).data()[0];
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, grads.tensor(&g, d).into_data()))
}

/// Fits a gated residual so the render at `pose` matches `input_view`.
///
/// Adam runs for `iters` steps from zero deltas; the best evaluated iterate
/// is returned. `references`, when given, are views of the true object used
/// to report the PSNR drift at every other view.
pub fn optimize_residual(
    scene: &GaussianScene,
    pose: &CameraPose,
    input_view: &Image,
    config: &ResidualConfig,
    references: Option<&MultiViewSet>,
) -> Result<ResidualOutcome> {
    if input_view.width() != input_view.height() {
        bail!(Parameter, "input view must be square");
    }
    let res = input_view.width();
    let gate = visibility_weights(scene, pose, res);
    let mut field = ResidualField::zeros(gate.clone())?;
    if scene.is_empty() {
        let d = perceptual_proxy(&render(scene, pose, res, BACKGROUND), input_view, config.perceptual_resolution)?;
        let report = ViewOptReport {
            pose: *pose,
            dist_before: d,
            dist_after: d,
            losses: vec![d],
            best_iteration: 0,
            diverged: false,
            psnr_drift: Vec::new(),
        };
        return Ok(ResidualOutcome { field, scene: scene.clone(), report });
    }
    let base = flatten_splats(scene.splats());
    let mut params = [Tensor::matrix(scene.len(), RESIDUAL_PARAMS, field.to_flat())?];
    let mut state = AdamState::new(config.optim, &params);
    let mut losses = Vec::with_capacity(config.iters + 1);
    let (mut best, mut best_iter, mut best_delta) = (f64::INFINITY, 0, params[0].data().to_vec());
    let mut rising = 0;
    let mut diverged = false;
    for it in 0..=config.iters {
        let last = it == config.iters;
        let (loss, grad) =
            residual_objective(&base, params[0].data(), &gate, pose, input_view, config.perceptual_resolution, !last)?;
        if !loss.is_finite() {
            bail!(Numerical, "non-finite view-optimisation loss at iteration {it}");
        }
        if losses.last().is_some_and(|&prev| loss > prev) {
            rising += 1;
        } else {
            rising = 0;
        }
        losses.push(loss);
        if loss < best {
            (best, best_iter, best_delta) = (loss, it, params[0].data().to_vec());
        }
        if last {
            break;
        }
        if rising >= config.patience {
            diverged = true;
            break;
        }
        let g = Tensor::matrix(scene.len(), RESIDUAL_PARAMS, grad)?;
        adam_step(&mut params, &[g], &mut state)?;
    }
    field.set_flat(&best_delta);
    let updated = field.apply(scene)?;
    let psnr_drift = match references {
        Some(refs) => drift(scene, &updated, pose, refs)?,
        None => Vec::new(),
    };
    let report = ViewOptReport {
        pose: *pose,
        dist_before: losses[0],
        dist_after: best,
        losses,
        best_iteration: best_iter,
        diverged,
        psnr_drift,
    };
    Ok(ResidualOutcome { field, scene: updated, report })
}

fn drift(before: &GaussianScene, after: &GaussianScene, pose: &CameraPose, refs: &MultiViewSet) -> Result<Vec<(ViewLabel, f64)>> {
    let closest = refs
        .poses()
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = azimuth_distance(a.azimuth(), pose.azimuth()) + (a.elevation() - pose.elevation()).abs();
            let db = azimuth_distance(b.azimuth(), pose.azimuth()) + (b.elevation() - pose.elevation()).abs();
            da.partial_cmp(&db).expect("finite angles")
        })
        .map(|(i, _)| i);
    let mut out = Vec::new();
    for (i, (p, reference)) in refs.views().iter().enumerate() {
        if Some(i) == closest {
            continue;
        }
        let res = reference.width();
        let a = psnr(&render(after, p, res, BACKGROUND), reference)?;
        let b = psnr(&render(before, p, res, BACKGROUND), reference)?;
        out.push((p.label, a - b));
    }
    Ok(out)
}
