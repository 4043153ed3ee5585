//! Core algorithms for boosting a feed-forward multi-view-to-Gaussian
//! reconstructor with diffusion-refined pseudo ground truth.
//!
//! The crate is `no_std` with `alloc`. The default `std` feature only adds
//! `std` impls to dependencies; `parallel` enables rayon-backed fan-out for
//! per-view and per-scene work. Every parallel path reduces in a fixed order,
//! so results are bit-identical with or without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod camera;
pub mod diffusion;
mod error;
mod fmath;
pub mod image;
pub mod metrics;
pub mod oracle;
mod par;
pub mod pipeline;
pub mod reconstructor;
pub mod render;
pub mod rng;
pub mod scene;
pub mod view_opt;
pub mod views;

pub use camera::{make_canonical_rig, CameraPose, CanonicalRig, ViewLabel};
pub use error::{Error, Result};
pub use image::Image;
pub use rng::Rng;
pub use scene::{GaussianScene, Splat};
pub use views::{MultiViewSet, Stage};
