//! The experiment config: one TOML file with a table per module.
//!
//! Every table is optional and falls back to the defaults below. Unknown keys
//! are rejected. The config hash is the SHA-256 of the canonical
//! re-serialisation, so formatting and key order do not change it.

use crate::error::{CliError, Result};
use mvboost_core::autodiff::AdamConfig;
use mvboost_core::diffusion::{build_schedule, RefineConfig, ScheduleKind};
use mvboost_core::oracle::{InconsistencyModel, PrimitiveKind, SceneSpec, DEFAULT_ETA};
use mvboost_core::pipeline::{BoostConfig, DatasetConfig, EvalConfig, LossSpec, PretrainConfig, ViewSampling, DEFAULT_ABLATION_STRENGTHS};
use mvboost_core::reconstructor::{LoraConfig, ModelConfig, Projection};
use mvboost_core::view_opt::{PoseSearchConfig, ResidualConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// Root of every training, refinement and evaluation stream.
    pub seed: u64,
    pub rig: RigSection,
    pub scenes: SceneSection,
    pub inconsistency: InconsistencySection,
    pub diffusion: DiffusionSection,
    pub model: ModelSection,
    pub lora: LoraSection,
    pub loss: LossSection,
    pub pretrain: PretrainSection,
    pub boost: BoostSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub view_opt: ViewOptSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            rig: RigSection::default(),
            scenes: SceneSection::default(),
            inconsistency: InconsistencySection::default(),
            diffusion: DiffusionSection::default(),
            model: ModelSection::default(),
            lora: LoraSection::default(),
            loss: LossSection::default(),
            pretrain: PretrainSection::default(),
            boost: BoostSection::default(),
            eval: EvalSection::default(),
            ablation: AblationSection::default(),
            view_opt: ViewOptSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSection {
    pub ortho_half_extent: f64,
    /// Side length of every view, in pixels.
    pub resolution: usize,
}

impl Default for RigSection {
    fn default() -> Self {
        Self { ortho_half_extent: 1.2, resolution: 64 }
    }
}

/// Procedural training scenes. Scene `i` uses seed `first_seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub first_seed: u64,
    pub count: usize,
    /// Fixed primitive count; drawn per scene (2 or 3) when absent.
    pub primitive_count: Option<usize>,
    pub splats_per_primitive: usize,
    pub kinds: Vec<String>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            first_seed: 1000,
            count: 50,
            primitive_count: None,
            splats_per_primitive: 48,
            kinds: PrimitiveKind::ALL.iter().map(|k| k.as_str().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InconsistencySection {
    pub color_shift_amp: f64,
    pub warp_amp: f64,
    pub silhouette_noise_amp: f64,
}

impl Default for InconsistencySection {
    fn default() -> Self {
        let m = InconsistencyModel::default();
        Self { color_shift_amp: m.color_shift_amp, warp_amp: m.warp_amp, silhouette_noise_amp: m.silhouette_noise_amp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub schedule: String,
    pub max_timestep: usize,
    pub strength: f64,
    pub steps: usize,
    /// Evidence gate of the oracle denoiser.
    pub eta: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self { schedule: ScheduleKind::CosineVp.as_str().into(), max_timestep: 1000, strength: 0.95, steps: 1, eta: DEFAULT_ETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { d_model: m.d_model, layers: m.layers, heads: m.heads, patch: m.patch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSection {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<String>,
}

impl Default for LoraSection {
    fn default() -> Self {
        let l = LoraConfig::default();
        Self { rank: l.rank, alpha: l.alpha, targets: l.targets.iter().map(|p| p.as_str().to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub mse_weight: f64,
    pub perceptual_weight: f64,
    pub perceptual_resolution: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossSpec::default();
        Self { mse_weight: l.mse_weight, perceptual_weight: l.perceptual_weight, perceptual_resolution: l.perceptual_resolution }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection::with_lr(AdamConfig::default().lr)
    }
}

impl OptimSection {
    fn with_lr(lr: f64) -> Self {
        let a = AdamConfig::default();
        Self { lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub scene_pool: usize,
    pub optim: OptimSection,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self { steps: p.steps, scene_pool: p.scene_pool, optim: OptimSection::with_lr(p.optim.lr) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSection {
    pub steps: usize,
    /// `all` supervises every rig view per step, `one` a random one.
    pub view_sampling: String,
    pub optim: OptimSection,
}

impl Default for BoostSection {
    fn default() -> Self {
        let b = BoostConfig::default();
        Self { steps: b.steps, view_sampling: "all".into(), optim: OptimSection::with_lr(b.optim.lr) }
    }
}

/// Held-out scenes and the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub first_seed: u64,
    pub count: usize,
    pub orbit_views: usize,
    pub point_samples: usize,
    pub perceptual_resolution: usize,
    pub fscore_tau: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            first_seed: 5000,
            count: 20,
            orbit_views: e.orbit_views,
            point_samples: e.point_samples,
            perceptual_resolution: e.perceptual_resolution,
            fscore_tau: e.fscore_tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub strengths: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { strengths: DEFAULT_ABLATION_STRENGTHS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewOptSection {
    pub azimuth_step: f64,
    pub elevations: Vec<f64>,
    pub tolerance: f64,
    pub iters: usize,
    pub patience: usize,
    pub perceptual_resolution: usize,
    pub optim: OptimSection,
}

impl Default for ViewOptSection {
    fn default() -> Self {
        let p = PoseSearchConfig::default();
        let r = ResidualConfig::default();
        Self {
            azimuth_step: p.azimuth_step,
            elevations: p.elevations,
            tolerance: p.tolerance,
            iters: r.iters,
            patience: r.patience,
            perceptual_resolution: r.perceptual_resolution,
            optim: OptimSection::with_lr(r.optim.lr),
        }
    }
}

fn schedule_kind(s: &str) -> Result<ScheduleKind> {
    ScheduleKind::parse(s).ok_or_else(|| CliError::Config(format!("diffusion.schedule: unknown schedule `{s}`")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML text: every key present, fixed order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of [`Config::canonical`].
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical().as_bytes()))
    }

    /// Checks every section by building the core configs once.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!("version: expected {CONFIG_VERSION}, found {}", self.version)));
        }
        if i64::try_from(self.seed).is_err() {
            return Err(CliError::Config(format!("seed: {} exceeds {}", self.seed, i64::MAX)));
        }
        self.model()?.validate()?;
        self.lora()?.validate()?;
        self.loss().validate()?;
        self.dataset()?.refine.validate()?;
        self.dataset()?.inconsistency.validate()?;
        self.scene_spec(self.scenes.first_seed)?.validate()?;
        self.view_sampling()?;
        if self.eval.count == 0 || self.eval.orbit_views == 0 || self.eval.point_samples == 0 {
            return Err(CliError::Config("eval: count, orbit_views and point_samples must be positive".into()));
        }
        if self.view_opt.elevations.is_empty() || self.view_opt.azimuth_step <= 0.0 {
            return Err(CliError::Config("view_opt: needs elevations and a positive azimuth_step".into()));
        }
        if let Some(s) = self.ablation.strengths.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(CliError::Config(format!("ablation.strengths: {s} is outside [0, 1]")));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig { d_model: m.d_model, layers: m.layers, heads: m.heads, patch: m.patch, resolution: self.rig.resolution };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lora(&self) -> Result<LoraConfig> {
        let targets = self
            .lora
            .targets
            .iter()
            .map(|t| Projection::parse(t).ok_or_else(|| CliError::Config(format!("lora.targets: unknown projection `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoraConfig { rank: self.lora.rank, alpha: self.lora.alpha, targets })
    }

    pub fn loss(&self) -> LossSpec {
        let l = &self.loss;
        LossSpec { mse_weight: l.mse_weight, perceptual_weight: l.perceptual_weight, perceptual_resolution: l.perceptual_resolution }
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let d = &self.diffusion;
        let i = &self.inconsistency;
        Ok(DatasetConfig {
            ortho_half_extent: self.rig.ortho_half_extent,
            resolution: self.rig.resolution,
            inconsistency: InconsistencyModel {
                color_shift_amp: i.color_shift_amp,
                warp_amp: i.warp_amp,
                silhouette_noise_amp: i.silhouette_noise_amp,
                ..InconsistencyModel::default()
            },
            refine: RefineConfig {
                strength: d.strength,
                steps: d.steps,
                schedule: build_schedule(d.max_timestep, schedule_kind(&d.schedule)?)?,
                seed: self.seed,
            },
            eta: d.eta,
        })
    }

    pub fn scene_spec(&self, seed: u64) -> Result<SceneSpec> {
        let s = &self.scenes;
        let kinds = s
            .kinds
            .iter()
            .map(|k| PrimitiveKind::parse(k).ok_or_else(|| CliError::Config(format!("scenes.kinds: unknown kind `{k}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = SceneSpec::with_seed(seed);
        if let Some(n) = s.primitive_count {
            spec.primitive_count = n;
        }
        spec.splats_per_primitive = s.splats_per_primitive;
        spec.kinds = kinds;
        Ok(spec)
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        (0..self.scenes.count as u64).map(|i| self.scenes.first_seed + i).collect()
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.count as u64).map(|i| self.eval.first_seed + i).collect()
    }

    fn view_sampling(&self) -> Result<ViewSampling> {
        match self.boost.view_sampling.as_str() {
            "all" => Ok(ViewSampling::All),
            "one" => Ok(ViewSampling::One),
            other => Err(CliError::Config(format!("boost.view_sampling: expected `all` or `one`, found `{other}`"))),
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig { steps: p.steps, scene_pool: p.scene_pool, optim: p.optim.adam(), loss: self.loss(), seed: self.seed }
    }

    pub fn boost(&self) -> Result<BoostConfig> {
        Ok(BoostConfig {
            steps: self.boost.steps,
            optim: self.boost.optim.adam(),
            loss: self.loss(),
            lora: self.lora()?,
            view_sampling: self.view_sampling()?,
            seed: self.seed,
        })
    }

    pub fn eval(&self) -> EvalConfig {
        let e = &self.eval;
        EvalConfig {
            orbit_views: e.orbit_views,
            point_samples: e.point_samples,
            perceptual_resolution: e.perceptual_resolution,
            fscore_tau: e.fscore_tau,
            seed: self.seed,
        }
    }

    pub fn pose_search(&self) -> PoseSearchConfig {
        let v = &self.view_opt;
        PoseSearchConfig {
            ortho_half_extent: self.rig.ortho_half_extent,
            azimuth_step: v.azimuth_step,
            elevations: v.elevations.clone(),
            tolerance: v.tolerance,
            perceptual_resolution: v.perceptual_resolution,
        }
    }

    pub fn residual(&self) -> ResidualConfig {
        let v = &self.view_opt;
        ResidualConfig { iters: v.iters, optim: v.optim.adam(), perceptual_resolution: v.perceptual_resolution, patience: v.patience }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_core_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.dataset().unwrap(), DatasetConfig::default());
        assert_eq!(c.model().unwrap(), ModelConfig::default());
        assert_eq!(c.lora().unwrap(), LoraConfig::default());
        assert_eq!(c.boost().unwrap(), BoostConfig::default());
        assert_eq!(c.pretrain(), PretrainConfig::default());
        assert_eq!(c.eval(), EvalConfig::default());
        assert_eq!(c.pose_search(), PoseSearchConfig::default());
        assert_eq!(c.residual(), ResidualConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::parse("[model]\nwidth = 3\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("width")), "{err}");
        let err = Config::parse("colour = 1\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let a = Config::parse("seed = 3\n[rig]\nresolution = 32\n").unwrap();
        let b = Config::parse("seed=3 # note\n\n[rig]\n   resolution   = 32\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Config::default().hash());
        assert_eq!(Config::parse(&a.canonical()).unwrap(), a);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "version = 2",
            "[model]\nheads = 3",
            "[diffusion]\nstrength = 1.5",
            "[diffusion]\nschedule = \"sqrt\"",
            "[lora]\ntargets = [\"x\"]",
            "[boost]\nview_sampling = \"some\"",
            "[scenes]\nkinds = [\"cone\"]",
        ] {
            assert!(matches!(Config::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
