//! Gaussian splat scenes.

use crate::error::{bail, Result};
use alloc::vec::Vec;

/// One anisotropic Gaussian. Rotation is a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + crate::fmath::exp(-x))
    } else {
        let e = crate::fmath::exp(x);
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Normalizes a quaternion; near-zero input maps to the identity.
pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
    if !(n > 1e-12) || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix (row-major) of a unit quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

impl Splat {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-space covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = quat_to_matrix(normalize_quat(self.rotation));
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = (0..3).map(|k| r[i][k] * r[j][k] * self.scale[k] * self.scale[k]).sum();
            }
        }
        cov
    }

    fn check(&self) -> Result<()> {
        let finite = self
            .mean
            .iter()
            .chain(&self.rotation)
            .chain(&self.scale)
            .chain(&self.color)
            .chain(core::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite());
        if !finite {
            bail!(Parameter, "splat has non-finite fields");
        }
        let qn = libm::sqrt(self.rotation.iter().map(|v| v * v).sum::<f64>());
        if (qn - 1.0).abs() > 1e-6 {
            bail!(Parameter, "splat rotation norm {qn} is not 1");
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            bail!(Parameter, "splat scales must be positive");
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            bail!(Parameter, "splat colors must lie in [0, 1]");
        }
        let o = self.opacity();
        if !(o > 0.0 && o < 1.0) {
            bail!(Parameter, "opacity logit {} saturates", self.opacity_logit);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianScene {
    splats: Vec<Splat>,
}

impl GaussianScene {
    /// Validates every splat against the scene invariants.
    pub fn new(splats: Vec<Splat>) -> Result<Self> {
        for s in &splats {
            s.check()?;
        }
        Ok(Self { splats })
    }

    /// Builds a scene, repairing rotations (renormalized) and clamping colors
    /// and scales into range. Used for decoder output, which is valid by
    /// construction up to rounding.
    pub fn from_repaired(mut splats: Vec<Splat>) -> Self {
        for s in &mut splats {
            s.rotation = normalize_quat(s.rotation);
            for c in &mut s.color {
                *c = c.clamp(0.0, 1.0);
            }
            for v in &mut s.scale {
                *v = v.max(1e-9);
            }
            s.opacity_logit = s.opacity_logit.clamp(-30.0, 30.0);
        }
        Self { splats }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.splats.iter().try_for_each(Splat::check)
    }
}
