use super::backward::backward_splats;
use super::raster::render_splats;
use super::{flatten_grads, unflatten_splats, SPLAT_PARAMS};
use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::camera::CameraPose;
use crate::error::{bail, Result};
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

struct RenderOp {
    pose: CameraPose,
    resolution: usize,
    background: [f64; 3],
}

impl CustomOp for RenderOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let splats = unflatten_splats(inputs[0].data());
        let g = backward_splats(&splats, &self.pose, self.resolution, self.background, grad);
        vec![flatten_grads(&g)]
    }
}

/// Records a differentiable render of an `N × 14` splat-parameter tensor
/// (layout of [`super::flatten_splats`]); the result has shape
/// `[resolution, resolution, 3]`.
///
/// Parameters are used as given: the caller keeps rotations nonzero, scales
/// positive and colors in `[0, 1]`.
pub fn render_node(g: &mut Graph, splats: Var, pose: &CameraPose, resolution: usize, background: [f64; 3]) -> Result<Var> {
    let t = g.value(splats);
    if t.cols() != SPLAT_PARAMS || t.shape().len() != 2 {
        bail!(Contract, "render input must be N x {SPLAT_PARAMS}, got {:?}", t.shape());
    }
    let img = render_splats(&unflatten_splats(t.data()), pose, resolution, background);
    let out = Tensor::new(vec![resolution, resolution, 3], img.into_data())?;
    let op = RenderOp { pose: *pose, resolution, background };
    Ok(g.custom(&[splats], out, Box::new(op)))
}
