//! Orthographic cameras and the canonical six-view rig.

use crate::error::{bail, Result};
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewLabel {
    Front,
    FrontRight,
    Right,
    Back,
    Left,
    FrontLeft,
    Free,
}

impl ViewLabel {
    pub const CANONICAL: [ViewLabel; 6] = [
        ViewLabel::Front,
        ViewLabel::FrontRight,
        ViewLabel::Right,
        ViewLabel::Back,
        ViewLabel::Left,
        ViewLabel::FrontLeft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewLabel::Front => "front",
            ViewLabel::FrontRight => "front_right",
            ViewLabel::Right => "right",
            ViewLabel::Back => "back",
            ViewLabel::Left => "left",
            ViewLabel::FrontLeft => "front_left",
            ViewLabel::Free => "free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::CANONICAL.into_iter().chain([ViewLabel::Free]).find(|l| l.as_str() == s)
    }

    /// Azimuth in degrees of a canonical label; `None` for [`ViewLabel::Free`].
    pub fn canonical_azimuth(self) -> Option<f64> {
        match self {
            ViewLabel::Front => Some(0.0),
            ViewLabel::FrontRight => Some(45.0),
            ViewLabel::Right => Some(90.0),
            ViewLabel::Back => Some(180.0),
            ViewLabel::Left => Some(270.0),
            ViewLabel::FrontLeft => Some(315.0),
            ViewLabel::Free => None,
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An orthographic camera orbiting the origin.
///
/// The camera sits in direction `(sin az cos el, sin el, cos az cos el)` and
/// looks at the origin. Image x follows the camera right vector, image y runs
/// downward against the up vector, and depth grows away from the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    azimuth: f64,
    elevation: f64,
    ortho_half_extent: f64,
    pub label: ViewLabel,
}

/// Orthonormal camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBasis {
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub forward: [f64; 3],
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg - 360.0 * libm::floor(deg / 360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two azimuths, in degrees.
pub fn azimuth_distance(a: f64, b: f64) -> f64 {
    let d = wrap_degrees(a - b);
    d.min(360.0 - d)
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, ortho_half_extent: f64, label: ViewLabel) -> Result<Self> {
        if !(ortho_half_extent > 0.0) || !ortho_half_extent.is_finite() {
            bail!(Parameter, "ortho_half_extent must be positive, got {ortho_half_extent}");
        }
        if !azimuth.is_finite() || !(-90.0..=90.0).contains(&elevation) {
            bail!(Parameter, "invalid pose azimuth {azimuth} / elevation {elevation}");
        }
        Ok(Self { azimuth: wrap_degrees(azimuth), elevation, ortho_half_extent, label })
    }

    pub fn free(azimuth: f64, elevation: f64, ortho_half_extent: f64) -> Result<Self> {
        Self::new(azimuth, elevation, ortho_half_extent, ViewLabel::Free)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn ortho_half_extent(&self) -> f64 {
        self.ortho_half_extent
    }

    pub fn basis(&self) -> CameraBasis {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        let (sa, ca) = (libm::sin(az), libm::cos(az));
        let (se, ce) = (libm::sin(el), libm::cos(el));
        CameraBasis {
            right: [ca, 0.0, -sa],
            up: [-sa * se, ce, -ca * se],
            forward: [-sa * ce, -se, -ca * ce],
        }
    }

    /// Pixels per scene unit at the given square resolution.
    pub fn pixel_scale(&self, resolution: usize) -> f64 {
        resolution as f64 / (2.0 * self.ortho_half_extent)
    }

    /// Projects a world point to `(px, py, depth)` with pixel centers at `i + 0.5`.
    pub fn project_point(&self, p: [f64; 3], resolution: usize) -> [f64; 3] {
        let b = self.basis();
        let k = self.pixel_scale(resolution);
        let half = resolution as f64 * 0.5;
        [half + k * dot(p, b.right), half - k * dot(p, b.up), dot(p, b.forward)]
    }

    /// World point on the depth-0 plane that projects to pixel `(px, py)`.
    pub fn unproject(&self, px: f64, py: f64, resolution: usize) -> [f64; 3] {
        let b = self.basis();
        let k = self.pixel_scale(resolution);
        let half = resolution as f64 * 0.5;
        let x = (px - half) / k;
        let y = (half - py) / k;
        [
            x * b.right[0] + y * b.up[0],
            x * b.right[1] + y * b.up[1],
            x * b.right[2] + y * b.up[2],
        ]
    }

    /// Pose embedding fed to the reconstructor.
    pub fn embedding(&self) -> [f64; 6] {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        [libm::sin(az), libm::cos(az), libm::sin(el), libm::cos(el), self.ortho_half_extent, 1.0]
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// The fixed six-view supervision rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRig {
    poses: [CameraPose; 6],
}

impl CanonicalRig {
    pub fn poses(&self) -> &[CameraPose; 6] {
        &self.poses
    }

    pub fn ortho_half_extent(&self) -> f64 {
        self.poses[0].ortho_half_extent
    }

    pub fn pose(&self, label: ViewLabel) -> Option<&CameraPose> {
        self.poses.iter().find(|p| p.label == label)
    }

    /// Whether `poses` are exactly this rig's poses in rig order.
    pub fn matches(&self, poses: &[CameraPose]) -> bool {
        poses.len() == 6 && poses.iter().zip(self.poses.iter()).all(|(a, b)| a == b)
    }
}

pub fn make_canonical_rig(ortho_half_extent: f64) -> Result<CanonicalRig> {
    let mut poses = [CameraPose::new(0.0, 0.0, ortho_half_extent, ViewLabel::Front)?; 6];
    for (slot, label) in poses.iter_mut().zip(ViewLabel::CANONICAL) {
        let az = label.canonical_azimuth().unwrap_or(0.0);
        *slot = CameraPose::new(az, 0.0, ortho_half_extent, label)?;
    }
    Ok(CanonicalRig { poses })
}
