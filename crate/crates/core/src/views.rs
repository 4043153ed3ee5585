//! Posed multi-view image sets.

use crate::camera::CameraPose;
use crate::error::{bail, Result};
use crate::image::Image;
use alloc::vec::Vec;

/// Pipeline stage a [`MultiViewSet`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Generated,
    Rendered,
    Noised,
    Refined,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generated => "generated",
            Stage::Rendered => "rendered",
            Stage::Noised => "noised",
            Stage::Refined => "refined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSet {
    views: Vec<(CameraPose, Image)>,
    pub condition: Option<Image>,
    pub stage: Stage,
}

impl MultiViewSet {
    pub fn new(views: Vec<(CameraPose, Image)>, condition: Option<Image>, stage: Stage) -> Result<Self> {
        if views.is_empty() {
            bail!(Parameter, "a multi-view set needs at least one view");
        }
        let (w, h) = (views[0].1.width(), views[0].1.height());
        if views.iter().any(|(_, img)| img.width() != w || img.height() != h) {
            bail!(Parameter, "all views must share one resolution");
        }
        for i in 0..views.len() {
            for j in i + 1..views.len() {
                if views[i].0 == views[j].0 {
                    bail!(Parameter, "poses {i} and {j} coincide");
                }
            }
        }
        Ok(Self { views, condition, stage })
    }

    pub fn views(&self) -> &[(CameraPose, Image)] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|(p, _)| *p).collect()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.views.iter().map(|(_, i)| i)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.views[0].1.width(), self.views[0].1.height())
    }

    /// Same poses and condition, new images and stage.
    pub fn with_images(&self, images: Vec<Image>, stage: Stage) -> Result<Self> {
        if images.len() != self.views.len() {
            bail!(Parameter, "expected {} images, got {}", self.views.len(), images.len());
        }
        let views = self.views.iter().zip(images).map(|((p, _), i)| (*p, i)).collect();
        Self::new(views, self.condition.clone(), stage)
    }
}
