//! A small cross-view transformer that maps six posed views to one splat per
//! image patch, plus low-rank adapters on its attention projections.

mod model;
#[cfg(test)]
mod tests;

pub use model::{
    bind_lora, bind_params, cross_view_attention, decode_gaussians, encode_view, forward, forward_graph, splats_from_tensor,
    LoraVars, ModelVars,
};

use crate::autodiff::Tensor;
use crate::error::{bail, Result};
use crate::rng::Rng;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Values per token emitted by the Gaussian head.
pub const HEAD_OUTPUTS: usize = 14;
/// Length of [`crate::camera::CameraPose::embedding`].
pub const POSE_DIMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    /// Input view resolution (square).
    pub resolution: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 64, layers: 2, heads: 4, patch: 8, resolution: 64 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.patch == 0 {
            bail!(Parameter, "model dimensions must be positive");
        }
        if self.d_model % self.heads != 0 {
            bail!(Parameter, "d_model {} is not divisible by {} heads", self.d_model, self.heads);
        }
        if self.resolution == 0 || self.resolution % self.patch != 0 {
            bail!(Parameter, "resolution {} is not divisible by patch {}", self.resolution, self.patch);
        }
        Ok(())
    }

    pub fn tokens_per_view(&self) -> usize {
        let side = self.resolution / self.patch;
        side * side
    }

    pub fn patch_features(&self) -> usize {
        self.patch * self.patch * 3 + POSE_DIMS
    }

    /// Names and shapes of every base parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            (String::from("embed.w"), vec![self.patch_features(), d]),
            (String::from("embed.b"), vec![d]),
            (String::from("pos"), vec![self.tokens_per_view(), d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("block{l}.{s}");
            out.extend([
                (p("ln1.g"), vec![d]),
                (p("ln1.b"), vec![d]),
                (p("wq"), vec![d, d]),
                (p("wk"), vec![d, d]),
                (p("wv"), vec![d, d]),
                (p("wo"), vec![d, d]),
                (p("ln2.g"), vec![d]),
                (p("ln2.b"), vec![d]),
                (p("mlp.w1"), vec![d, 4 * d]),
                (p("mlp.b1"), vec![4 * d]),
                (p("mlp.w2"), vec![4 * d, d]),
                (p("mlp.b2"), vec![d]),
            ]);
        }
        out.extend([
            (String::from("final_ln.g"), vec![d]),
            (String::from("final_ln.b"), vec![d]),
            (String::from("head.w"), vec![d, HEAD_OUTPUTS]),
            (String::from("head.b"), vec![HEAD_OUTPUTS]),
        ]);
        out
    }
}

/// Head bias at initialization: zero offset, identity rotation, scale near
/// 0.05, opacity near 0.88, mid-gray color.
pub const HEAD_BIAS_INIT: [f64; HEAD_OUTPUTS] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.05, -1.05, -1.05, 2.0, 0.0, 0.0, 0.0];

fn check_named(layout: &[(String, Vec<usize>)], named: Vec<(String, Tensor)>) -> Result<Vec<Tensor>> {
    let mut named: Vec<Option<(String, Tensor)>> = named.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(layout.len());
    for (name, shape) in layout {
        let Some(slot) = named.iter_mut().find(|e| e.as_ref().is_some_and(|(n, _)| n == name)) else {
            bail!(Config, "missing parameter {name}");
        };
        let (_, t) = slot.take().expect("slot was just matched");
        if t.shape() != shape.as_slice() {
            bail!(Config, "parameter {name} has shape {:?}, expected {shape:?}", t.shape());
        }
        out.push(t);
    }
    if let Some((extra, _)) = named.into_iter().flatten().next() {
        bail!(Config, "unexpected parameter {extra}");
    }
    Ok(out)
}

/// 64-bit FNV-1a over names, shapes and value bit patterns.
fn fingerprint<'a>(items: impl Iterator<Item = (&'a str, &'a Tensor)>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (name, t) in items {
        eat(name.as_bytes());
        for d in t.shape() {
            eat(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Base (frozen during boosting) weights of the reconstructor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructorParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

fn gaussian_tensor(rng: &mut Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal() * std).collect()).expect("sized from shape")
}

impl ReconstructorParams {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let fan_in = shape[0] as f64;
            let t = match name.rsplit('.').next().unwrap_or("") {
                "g" => Tensor::new(shape.clone(), vec![1.0; shape[0]])?,
                "b" | "b1" | "b2" if name != "head.b" => Tensor::zeros(shape),
                "b" => Tensor::new(shape, HEAD_BIAS_INIT.to_vec())?,
                "pos" => gaussian_tensor(rng, shape, 0.02),
                "w" if name == "head.w" => gaussian_tensor(rng, shape, 0.01),
                "wo" | "w2" => gaussian_tensor(rng, shape, 0.5 / libm::sqrt(fan_in)),
                _ => gaussian_tensor(rng, shape, 1.0 / libm::sqrt(fan_in)),
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { config, names, tensors })
    }

    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let tensors = check_named(&layout, named)?;
        Ok(Self { config, names: layout.into_iter().map(|(n, _)| n).collect(), tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.named())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Attention projections a LoRA adapter can attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Q,
    K,
    V,
    O,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Q, Projection::K, Projection::V, Projection::O];

    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Q => "q",
            Projection::K => "k",
            Projection::V => "v",
            Projection::O => "o",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Projection>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 32, alpha: 32.0, targets: vec![Projection::Q, Projection::V] }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || !self.alpha.is_finite() {
            bail!(Parameter, "LoRA rank must be positive and alpha finite");
        }
        if self.targets.is_empty() {
            bail!(Parameter, "LoRA needs at least one target projection");
        }
        Ok(())
    }

    pub fn layout(&self, model: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, r) = (model.d_model, self.rank);
        let mut out = Vec::new();
        for l in 0..model.layers {
            for p in &self.targets {
                out.push((format!("block{l}.lora_{}.a", p.as_str()), vec![d, r]));
                out.push((format!("block{l}.lora_{}.b", p.as_str()), vec![r, d]));
            }
        }
        out
    }
}

/// Trainable low-rank adapters: each adapted projection computes
/// `x·W + (alpha/rank)·(x·A)·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraParams {
    config: LoraConfig,
    model: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl LoraParams {
    /// `A` is Gaussian with std `1/sqrt(d_model)`; `B` starts at zero.
    pub fn init(config: LoraConfig, model: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let layout = config.layout(&model);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = if name.ends_with(".a") {
                gaussian_tensor(rng, shape, 1.0 / libm::sqrt(model.d_model as f64))
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { config, model, names, tensors })
    }

    pub fn from_named(config: LoraConfig, model: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout(&model);
        let tensors = check_named(&layout, named)?;
        Ok(Self { config, model, names: layout.into_iter().map(|(n, _)| n).collect(), tensors })
    }

    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.named())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// True while every `B` factor is exactly zero.
    pub fn is_identity(&self) -> bool {
        self.named().filter(|(n, _)| n.ends_with(".b")).all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
    }
}

/// Names of frozen and trainable parameters; disjoint and exhaustive.
pub fn partition_params(params: &ReconstructorParams, lora: &LoraParams) -> (Vec<String>, Vec<String>) {
    (params.names.clone(), lora.names.clone())
}
