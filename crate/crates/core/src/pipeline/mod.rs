//! Pseudo-ground-truth dataset construction, the supervision loss, and the
//! training loops for the base model and its adapters.

mod eval;
mod train;
#[cfg(test)]
mod tests;

pub use eval::{evaluate_scene, mean_std, orbit_poses, paired_sign_test, EvalConfig, SceneMetrics};
pub use train::{
    pretrain_base, train_boost, BoostConfig, BoostOutcome, LogRow, PretrainConfig, ViewSampling,
};

use crate::autodiff::{Graph, Var};
use crate::camera::{make_canonical_rig, CameraPose, CanonicalRig, ViewLabel};
use crate::diffusion::{build_schedule, refine, RefineConfig, ScheduleKind};
use crate::error::{bail, Result};
use crate::image::Image;
use crate::metrics::{image_tensor, perceptual_graph, perceptual_proxy, psnr, ssim};
use crate::oracle::{generate_scene, gt_views, mv_generate, InconsistencyModel, OracleDenoiser, SceneSpec, BACKGROUND, DEFAULT_ETA};
use crate::par;
use crate::reconstructor::{forward, ReconstructorParams};
use crate::render::{render, render_node};
use crate::rng::Rng;
use crate::scene::GaussianScene;
use crate::views::{MultiViewSet, Stage};
use alloc::vec::Vec;

/// Weights of the supervision loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub mse_weight: f64,
    pub perceptual_weight: f64,
    pub perceptual_resolution: usize,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { mse_weight: 1.0, perceptual_weight: 1.0, perceptual_resolution: 32 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let w = [self.mse_weight, self.perceptual_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            bail!(Parameter, "loss weights must be non-negative and not both zero");
        }
        if self.perceptual_resolution == 0 {
            bail!(Parameter, "perceptual resolution must be positive");
        }
        Ok(())
    }
}

/// Scalar loss nodes recorded by [`loss_graph`].
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub mse: Var,
    pub perceptual: Var,
}

/// Evaluated loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    pub perceptual: f64,
}

/// Records the weighted loss between rendered `[h, w, 3]` nodes and target
/// images: mean squared error over all views plus the mean per-view
/// perceptual proxy.
pub fn loss_graph(g: &mut Graph, rendered: &[Var], targets: &[&Image], spec: &LossSpec) -> Result<LossNodes> {
    spec.validate()?;
    if rendered.is_empty() || rendered.len() != targets.len() {
        bail!(Parameter, "{} renders for {} targets", rendered.len(), targets.len());
    }
    let mut sq = Vec::with_capacity(rendered.len());
    let mut perc = Vec::with_capacity(rendered.len());
    for (&r, t) in rendered.iter().zip(targets) {
        let shape = g.value(r).shape().to_vec();
        if shape != [t.height(), t.width(), 3] {
            bail!(Parameter, "render shape {shape:?} does not match a {}x{} target", t.width(), t.height());
        }
        let tv = g.constant(image_tensor(t));
        let d = g.sub(r, tv)?;
        let d2 = g.square(d);
        let s = g.sum(d2);
        sq.push(s);
        if spec.perceptual_weight > 0.0 {
            perc.push(perceptual_graph(g, r, tv, spec.perceptual_resolution)?);
        }
    }
    let count: usize = targets.iter().map(|t| t.data().len()).sum();
    let stacked = g.concat_rows(&sq)?;
    let total_sq = g.sum(stacked);
    let mse = g.scale(total_sq, 1.0 / count as f64);
    let perceptual = if perc.is_empty() {
        g.constant(crate::autodiff::Tensor::scalar(0.0))
    } else {
        let stacked = g.concat_rows(&perc)?;
        g.mean(stacked)
    };
    let a = g.scale(mse, spec.mse_weight);
    let b = g.scale(perceptual, spec.perceptual_weight);
    let total = g.add(a, b)?;
    Ok(LossNodes { total, mse, perceptual })
}

/// Loss between two view sets on the same poses.
pub fn loss(rendered: &MultiViewSet, targets: &MultiViewSet, spec: &LossSpec) -> Result<LossValue> {
    if rendered.poses() != targets.poses() || rendered.resolution() != targets.resolution() {
        bail!(Parameter, "rendered and target views differ in poses or resolution");
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = rendered.images().map(|im| g.constant(image_tensor(im))).collect();
    let t: Vec<&Image> = targets.images().collect();
    let n = loss_graph(&mut g, &vars, &t, spec)?;
    let v = |x: Var| g.value(x).data()[0];
    Ok(LossValue { total: v(n.total), mse: v(n.mse), perceptual: v(n.perceptual) })
}

/// Renders the splat node at each pose and records the loss against `targets`.
pub(crate) fn render_loss(
    g: &mut Graph,
    splats: Var,
    poses: &[CameraPose],
    targets: &[&Image],
    spec: &LossSpec,
) -> Result<LossNodes> {
    let res = match targets.first() {
        Some(t) => t.width(),
        None => bail!(Parameter, "no views to supervise"),
    };
    let mut rendered = Vec::with_capacity(poses.len());
    for pose in poses {
        rendered.push(render_node(g, splats, pose, res, BACKGROUND)?);
    }
    loss_graph(g, &rendered, targets, spec)
}

/// Seeds of the stochastic streams behind one dataset entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRecord {
    pub scene: u64,
    pub generator: u64,
    pub refine: u64,
}

impl SeedRecord {
    pub fn derive(scene: u64, refine_root: u64) -> Self {
        Self {
            scene,
            generator: Rng::new(scene).fork(0x6E4).next_u64(),
            refine: Rng::new(refine_root).fork(scene).next_u64(),
        }
    }
}

/// Generated inputs paired with refined targets for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPair {
    pub scene_id: u64,
    pub seeds: SeedRecord,
    pub inputs: MultiViewSet,
    pub targets: MultiViewSet,
}

/// Everything the data builder needs besides the scene specs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub ortho_half_extent: f64,
    pub resolution: usize,
    pub inconsistency: InconsistencyModel,
    pub refine: RefineConfig,
    pub eta: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            ortho_half_extent: 1.2,
            resolution: 64,
            inconsistency: InconsistencyModel::default(),
            refine: RefineConfig {
                strength: 0.95,
                steps: 1,
                schedule: build_schedule(1000, ScheduleKind::CosineVp).expect("default schedule"),
                seed: 0,
            },
            eta: DEFAULT_ETA,
        }
    }
}

impl DatasetConfig {
    pub fn rig(&self) -> Result<CanonicalRig> {
        make_canonical_rig(self.ortho_half_extent)
    }
}

/// Intermediate products for one scene, before refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStages {
    pub seeds: SeedRecord,
    pub ground_truth: GaussianScene,
    pub gt_views: MultiViewSet,
    pub inputs: MultiViewSet,
    pub renders: MultiViewSet,
}

impl SceneStages {
    pub fn condition(&self) -> &Image {
        self.inputs.condition.as_ref().expect("generated views carry their condition")
    }
}

/// Renders `scene` at every pose, tagged with `stage`.
pub fn render_views(scene: &GaussianScene, poses: &[CameraPose], resolution: usize, stage: Stage) -> Result<MultiViewSet> {
    let images = par::map(poses, |_, p| render(scene, p, resolution, BACKGROUND));
    MultiViewSet::new(poses.iter().copied().zip(images).collect(), None, stage)
}

/// Ground truth, conditioning view and generated views for one scene.
pub fn scene_inputs(spec: &SceneSpec, config: &DatasetConfig) -> Result<(GaussianScene, MultiViewSet, MultiViewSet)> {
    scene_inputs_for(generate_scene(spec)?, spec.seed, config)
}

/// [`scene_inputs`] for a ground truth that already exists, e.g. one loaded
/// from disk. `scene_id` keys the generator and refinement streams.
pub fn scene_inputs_for(
    gt: GaussianScene,
    scene_id: u64,
    config: &DatasetConfig,
) -> Result<(GaussianScene, MultiViewSet, MultiViewSet)> {
    let rig = config.rig()?;
    let gtv = gt_views(&gt, &rig, config.resolution)?;
    let front = rig.poses().iter().position(|p| p.label == ViewLabel::Front).expect("rig has a front view");
    let condition = gtv.views()[front].1.clone();
    let seeds = SeedRecord::derive(scene_id, config.refine.seed);
    let inputs = mv_generate(&condition, &gt, &rig, &config.inconsistency, &Rng::new(seeds.generator))?;
    Ok((gt, gtv, inputs))
}

/// Generates, reconstructs with the base model and renders one scene.
pub fn scene_stages(spec: &SceneSpec, config: &DatasetConfig, base: &ReconstructorParams) -> Result<SceneStages> {
    scene_stages_for(generate_scene(spec)?, spec.seed, config, base)
}

pub fn scene_stages_for(
    gt: GaussianScene,
    scene_id: u64,
    config: &DatasetConfig,
    base: &ReconstructorParams,
) -> Result<SceneStages> {
    if base.config().resolution != config.resolution {
        bail!(Config, "model expects {} px views, dataset uses {}", base.config().resolution, config.resolution);
    }
    let (ground_truth, gt_views, inputs) = scene_inputs_for(gt, scene_id, config)?;
    let theta = forward(&inputs, base, None)?;
    let renders = render_views(&theta, &inputs.poses(), config.resolution, Stage::Rendered)?;
    Ok(SceneStages { seeds: SeedRecord::derive(scene_id, config.refine.seed), ground_truth, gt_views, inputs, renders })
}

/// Refines the rendered stage with the oracle denoiser.
pub fn refine_stages(stages: &SceneStages, config: &DatasetConfig) -> Result<MultiViewSet> {
    let rc = RefineConfig { seed: stages.seeds.refine, ..config.refine.clone() };
    let denoiser = OracleDenoiser::new(&stages.gt_views, config.eta);
    refine(&stages.renders, stages.condition(), &rc, &denoiser)
}

pub fn build_refined_pair(spec: &SceneSpec, config: &DatasetConfig, base: &ReconstructorParams) -> Result<RefinedPair> {
    refined_pair_from(scene_stages(spec, config, base)?, config)
}

pub fn refined_pair_from(stages: SceneStages, config: &DatasetConfig) -> Result<RefinedPair> {
    let targets = refine_stages(&stages, config)?;
    Ok(RefinedPair { scene_id: stages.seeds.scene, seeds: stages.seeds, inputs: stages.inputs, targets })
}

/// One refined pair per spec, in spec order.
pub fn build_refined_dataset(specs: &[SceneSpec], config: &DatasetConfig, base: &ReconstructorParams) -> Result<Vec<RefinedPair>> {
    par::map(specs, |_, s| build_refined_pair(s, config, base)).into_iter().collect()
}

/// Mean image quality of one refinement strength against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub strength: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

pub const DEFAULT_ABLATION_STRENGTHS: [f64; 7] = [0.0, 0.10, 0.50, 0.70, 0.90, 0.95, 1.00];

/// Scores the refined targets of every scene against its ground-truth views,
/// per strength; strength 0 scores the base renders themselves.
pub fn ablate_strength(stages: &[SceneStages], strengths: &[f64], config: &DatasetConfig) -> Result<Vec<AblationRow>> {
    if stages.is_empty() {
        bail!(Parameter, "ablation needs at least one scene");
    }
    let perc_res = (config.resolution / 2).max(1);
    strengths
        .iter()
        .map(|&strength| {
            let cfg = DatasetConfig { refine: RefineConfig { strength, ..config.refine.clone() }, ..config.clone() };
            let per_scene = par::map(stages, |_, st| -> Result<[f64; 3]> {
                let targets = refine_stages(st, &cfg)?;
                let mut acc = [0.0; 3];
                for (t, g) in targets.images().zip(st.gt_views.images()) {
                    acc[0] += psnr(t, g)?;
                    acc[1] += ssim(t, g)?;
                    acc[2] += perceptual_proxy(t, g, perc_res)?;
                }
                let n = targets.len() as f64;
                Ok(acc.map(|v| v / n))
            });
            let mut sum = [0.0; 3];
            for r in per_scene {
                let r = r?;
                (0..3).for_each(|k| sum[k] += r[k]);
            }
            let n = stages.len() as f64;
            Ok(AblationRow { strength, psnr: sum[0] / n, ssim: sum[1] / n, perceptual: sum[2] / n })
        })
        .collect()
}

/// Mean per-view PSNR between two view sets on the same poses.
pub fn mean_view_psnr(a: &MultiViewSet, b: &MultiViewSet) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Parameter, "view counts differ: {} vs {}", a.len(), b.len());
    }
    let mut s = 0.0;
    for (x, y) in a.images().zip(b.images()) {
        s += psnr(x, y)?;
    }
    Ok(s / a.len() as f64)
}
