use super::{render_loss, DatasetConfig, LossSpec, LossValue, RefinedPair};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::camera::ViewLabel;
use crate::error::{bail, Error, Result};
use crate::image::Image;
use crate::oracle::{generate_scene, gt_views, SceneSpec};
use crate::reconstructor::{bind_lora, bind_params, forward_graph, LoraConfig, LoraParams, ModelConfig, ReconstructorParams};
use crate::rng::Rng;
use crate::views::{MultiViewSet, Stage};
use alloc::format;
use alloc::vec::Vec;

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mse: f64,
    pub perceptual: f64,
}

/// Which rig views are supervised at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewSampling {
    #[default]
    All,
    /// One uniformly drawn view per step.
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Number of distinct training scenes cycled through.
    pub scene_pool: usize,
    pub optim: AdamConfig,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 2000, scene_pool: 64, optim: AdamConfig::default(), loss: LossSpec::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig {
    pub steps: usize,
    pub optim: AdamConfig,
    pub loss: LossSpec,
    pub lora: LoraConfig,
    pub view_sampling: ViewSampling,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            optim: AdamConfig::default(),
            loss: LossSpec::default(),
            lora: LoraConfig::default(),
            view_sampling: ViewSampling::All,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostOutcome {
    pub lora: LoraParams,
    pub log: Vec<LogRow>,
}

fn values(g: &Graph, n: &super::LossNodes) -> LossValue {
    let v = |x: Var| g.value(x).data()[0];
    LossValue { total: v(n.total), mse: v(n.mse), perceptual: v(n.perceptual) }
}

fn non_finite(v: &LossValue, grads: &[Tensor]) -> Option<&'static str> {
    if !v.total.is_finite() {
        Some("loss")
    } else if grads.iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
        Some("gradient")
    } else {
        None
    }
}

fn pick_views(sampling: ViewSampling, count: usize, rng: &mut Rng) -> Vec<usize> {
    match sampling {
        ViewSampling::All => (0..count).collect(),
        ViewSampling::One => alloc::vec![rng.below(count)],
    }
}

/// Consistent training pairs for the base model: the inputs are the
/// ground-truth views themselves.
fn pretrain_pool(data: &DatasetConfig, config: &PretrainConfig) -> Result<Vec<MultiViewSet>> {
    let rig = data.rig()?;
    let mut seeds = Rng::new(config.seed).fork(0x9001);
    let specs: Vec<SceneSpec> = (0..config.scene_pool).map(|_| SceneSpec::with_seed(seeds.next_u64())).collect();
    let sets = crate::par::map(&specs, |_, spec| -> Result<MultiViewSet> {
        let gt = generate_scene(spec)?;
        let v = gt_views(&gt, &rig, data.resolution)?;
        let front = v.views().iter().find(|(p, _)| p.label == ViewLabel::Front).map(|(_, im)| im.clone());
        MultiViewSet::new(v.views().to_vec(), front, Stage::Generated)
    });
    sets.into_iter().collect()
}

/// Trains a freshly initialised reconstructor on consistent synthetic views.
pub fn pretrain_base(
    model: ModelConfig,
    data: &DatasetConfig,
    config: &PretrainConfig,
) -> Result<(ReconstructorParams, Vec<LogRow>)> {
    model.validate()?;
    config.loss.validate()?;
    if config.scene_pool == 0 {
        bail!(Parameter, "pretraining needs at least one scene");
    }
    if model.resolution != data.resolution {
        bail!(Config, "model expects {} px views, data uses {}", model.resolution, data.resolution);
    }
    let pool = pretrain_pool(data, config)?;
    let mut params = ReconstructorParams::init(model, &mut Rng::new(config.seed).fork(0x1417))?;
    let mut state = AdamState::new(config.optim, params.tensors());
    let mut rng = Rng::new(config.seed).fork(0x57E9);
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let i = rng.below(pool.len());
        let views = &pool[i];
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params, true);
        let splats = forward_graph(&mut g, views, &vars, None)?;
        let targets: Vec<&Image> = views.images().collect();
        let nodes = render_loss(&mut g, splats, &views.poses(), &targets, &config.loss)?;
        let v = values(&g, &nodes);
        let grads = g.backward(nodes.total)?;
        let grads: Vec<Tensor> = vars.all.iter().map(|&p| grads.tensor(&g, p)).collect();
        if let Some(what) = non_finite(&v, &grads) {
            return Err(Error::Numerical(format!(
                "non-finite pretraining {what} at step {step} (pool scene {i}, seed {})",
                config.seed
            )));
        }
        adam_step(params.tensors_mut(), &grads, &mut state)?;
        log.push(LogRow { step, loss: v.total, mse: v.mse, perceptual: v.perceptual });
    }
    Ok((params, log))
}

/// Trains adapters on refined pairs while keeping `base` frozen.
///
/// Each step draws one pair, reconstructs from its generated inputs and
/// supervises the renders with the refined targets.
pub fn train_boost(dataset: &[RefinedPair], base: &ReconstructorParams, config: &BoostConfig) -> Result<BoostOutcome> {
    if dataset.is_empty() {
        bail!(Parameter, "boost training needs a nonempty dataset");
    }
    config.loss.validate()?;
    let res = base.config().resolution;
    if let Some(p) = dataset.iter().find(|p| p.inputs.resolution() != (res, res) || p.targets.resolution() != (res, res)) {
        bail!(Config, "pair {} does not match the model's {res} px views", p.scene_id);
    }
    let frozen = base.fingerprint();
    let mut lora = LoraParams::init(config.lora.clone(), *base.config(), &mut Rng::new(config.seed).fork(0x10A))?;
    let mut state = AdamState::new(config.optim, lora.tensors());
    let mut rng = Rng::new(config.seed).fork(0xB005);
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let pair = &dataset[rng.below(dataset.len())];
        let poses = pair.targets.poses();
        let chosen = pick_views(config.view_sampling, poses.len(), &mut rng);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, base, false);
        let lv = bind_lora(&mut g, &lora, true);
        let splats = forward_graph(&mut g, &pair.inputs, &vars, Some(&lv))?;
        let targets: Vec<&Image> = chosen.iter().map(|&v| &pair.targets.views()[v].1).collect();
        let sel: Vec<_> = chosen.iter().map(|&v| poses[v]).collect();
        let nodes = render_loss(&mut g, splats, &sel, &targets, &config.loss)?;
        let v = values(&g, &nodes);
        let grads = g.backward(nodes.total)?;
        let grads: Vec<Tensor> = lv.all.iter().map(|&p| grads.tensor(&g, p)).collect();
        if let Some(what) = non_finite(&v, &grads) {
            let s = pair.seeds;
            return Err(Error::Numerical(format!(
                "non-finite {what} at step {step} on pair {} (scene seed {}, generator seed {}, refine seed {}, training seed {})",
                pair.scene_id, s.scene, s.generator, s.refine, config.seed
            )));
        }
        adam_step(lora.tensors_mut(), &grads, &mut state)?;
        log.push(LogRow { step, loss: v.total, mse: v.mse, perceptual: v.perceptual });
    }
    if base.fingerprint() != frozen {
        bail!(Contract, "base parameters changed during adapter training");
    }
    Ok(BoostOutcome { lora, log })
}
