//! Variance-preserving noising and partial-strength refinement.
//!
//! A refinement noises every view to `t = round(s·T)` and walks back to zero
//! with deterministic posterior-mean steps, asking a [`Denoiser`] for the
//! clean estimate at each visited timestep.

use crate::error::{bail, Result};
use crate::image::Image;
use crate::par;
use crate::rng::{sample_standard_normal, Rng};
use crate::views::{MultiViewSet, Stage};
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

/// Smallest signal coefficient the cosine schedule reaches.
pub const ALPHA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LinearVp,
    CosineVp,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::LinearVp => "linear_vp",
            ScheduleKind::CosineVp => "cosine_vp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_vp" => Some(ScheduleKind::LinearVp),
            "cosine_vp" => Some(ScheduleKind::CosineVp),
            _ => None,
        }
    }
}

/// Signal and noise coefficients for timesteps `0..=T`, with
/// `alpha[t]² + sigma[t]² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// The maximum timestep `T`.
    pub fn max_timestep(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

pub fn build_schedule(max_timestep: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if max_timestep < 1 {
        bail!(Parameter, "schedule needs T >= 1, got {max_timestep}");
    }
    let t_max = max_timestep as f64;
    let mut alpha = Vec::with_capacity(max_timestep + 1);
    alpha.push(1.0);
    match kind {
        ScheduleKind::CosineVp => {
            for t in 1..=max_timestep {
                alpha.push(libm::cos(t as f64 / t_max * FRAC_PI_2).max(ALPHA_FLOOR));
            }
        }
        ScheduleKind::LinearVp => {
            // Betas rise linearly from 1e-4 to 0.02 over the schedule.
            let mut alpha_bar = 1.0;
            for t in 1..=max_timestep {
                let frac = if max_timestep == 1 { 1.0 } else { (t - 1) as f64 / (t_max - 1.0) };
                alpha_bar *= 1.0 - (1e-4 + (0.02 - 1e-4) * frac);
                alpha.push(libm::sqrt(alpha_bar));
            }
        }
    }
    if alpha.windows(2).any(|w| w[1] >= w[0]) {
        bail!(Parameter, "T = {max_timestep} is too large for a strictly decreasing {} schedule", kind.as_str());
    }
    let sigma = alpha.iter().map(|a| libm::sqrt((1.0 - a * a).max(0.0))).collect();
    Ok(NoiseSchedule { kind, alpha, sigma })
}

/// Maps a strength `s ∈ [0, 1]` to the nearest integer timestep.
pub fn strength_to_timestep(strength: f64, max_timestep: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&strength) {
        bail!(Parameter, "strength must lie in [0, 1], got {strength}");
    }
    Ok((libm::round(strength * max_timestep as f64) as usize).min(max_timestep))
}

/// `alpha_t·x + sigma_t·ε` with fresh standard normal `ε`. The result is not
/// clipped.
pub fn add_noise(x: &Image, t: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<Image> {
    if t > schedule.max_timestep() {
        bail!(Parameter, "timestep {t} exceeds T = {}", schedule.max_timestep());
    }
    if t == 0 {
        return Ok(x.clone());
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let eps = sample_standard_normal(rng, x.data().len());
    let data = x.data().iter().zip(&eps).map(|(v, e)| a * v + s * e).collect();
    Image::from_data(x.width(), x.height(), data)
}

/// A multi-view clean-image predictor.
///
/// `noised` holds unclipped views at timestep `t >= 1`; implementations return
/// one `[0, 1]` image per view with the same resolution.
pub trait Denoiser {
    fn denoise(
        &self,
        noised: &[Image],
        condition: &Image,
        t: usize,
        schedule: &NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<Vec<Image>>;
}

/// Returns the clipped signal estimate `clip(x_t / alpha_t)` and nothing else.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignalDenoiser;

impl Denoiser for SignalDenoiser {
    fn denoise(&self, noised: &[Image], _: &Image, t: usize, schedule: &NoiseSchedule, _: &mut Rng) -> Result<Vec<Image>> {
        if t == 0 {
            bail!(Parameter, "denoising requires t >= 1");
        }
        let inv = 1.0 / schedule.alpha(t);
        Ok(noised.iter().map(|x| x.map(|v| (v * inv).clamp(0.0, 1.0))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub strength: f64,
    pub steps: usize,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            bail!(Parameter, "strength must lie in [0, 1], got {}", self.strength);
        }
        if self.strength > 0.0 && self.steps == 0 {
            bail!(Parameter, "refinement with positive strength needs at least one step");
        }
        Ok(())
    }
}

/// Sub-timesteps from `t` down to 0, rounded and deduplicated.
fn step_timesteps(t: usize, steps: usize) -> Vec<usize> {
    let mut taus: Vec<usize> = (0..=steps)
        .map(|i| libm::round(t as f64 * (1.0 - i as f64 / steps as f64)) as usize)
        .collect();
    taus.dedup();
    taus
}

/// Noises `renders` to strength `config.strength` and denoises back.
pub fn refine<D: Denoiser + ?Sized>(
    renders: &MultiViewSet,
    condition: &Image,
    config: &RefineConfig,
    denoiser: &D,
) -> Result<MultiViewSet> {
    config.validate()?;
    let (w, h) = renders.resolution();
    if condition.width() != w || condition.height() != h {
        bail!(Parameter, "condition is {}x{}, views are {w}x{h}", condition.width(), condition.height());
    }
    let schedule = &config.schedule;
    let t = strength_to_timestep(config.strength, schedule.max_timestep())?;
    if t == 0 {
        return Ok(renders.clone());
    }
    let root = Rng::new(config.seed);
    let clean: Vec<Image> = renders.images().cloned().collect();
    let noised = par::map(&clean, |i, x| add_noise(x, t, schedule, &mut root.fork(i as u64)));
    let mut x: Vec<Image> = noised.into_iter().collect::<Result<_>>()?;
    let mut den_rng = root.fork(u64::MAX);
    let taus = step_timesteps(t, config.steps);
    for pair in taus.windows(2) {
        let (tau, next) = (pair[0], pair[1]);
        let x0 = denoiser.denoise(&x, condition, tau, schedule, &mut den_rng)?;
        if x0.len() != x.len() || x0.iter().any(|v| !v.same_shape(&x[0])) {
            bail!(Contract, "denoiser returned mismatched views");
        }
        let (a, s) = (schedule.alpha(tau), schedule.sigma(tau));
        let (an, sn) = (schedule.alpha(next), schedule.sigma(next));
        for (xi, x0i) in x.iter_mut().zip(&x0) {
            for (y, c) in xi.data_mut().iter_mut().zip(x0i.data()) {
                let eps = (*y - a * c) / s;
                *y = an * c + sn * eps;
            }
        }
    }
    let out = x.iter().map(Image::clipped).collect();
    renders.with_images(out, Stage::Refined)
}
