//! A differentiable stand-in for a learned perceptual distance: multi-scale
//! structural similarity plus a Sobel edge-magnitude term.

use super::{gaussian_kernel, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{bail, Result};
use crate::image::Image;
use alloc::vec;
use alloc::vec::Vec;

const SCALES: usize = 3;
const EDGE_EPS: f64 = 1e-3;

/// `[height, width, 3]` tensor holding the image's pixels.
pub fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(vec![img.height(), img.width(), 3], img.data().to_vec()).expect("image buffer matches its shape")
}

fn blur(g: &mut Graph, x: Var, k: &[f64]) -> Result<Var> {
    let y = g.conv(x, k, Axis::Y)?;
    g.conv(y, k, Axis::X)
}

/// Mean of the per-channel SSIM map, with replicate padding.
fn ssim_mean(g: &mut Graph, a: Var, b: Var, k: &[f64]) -> Result<Var> {
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mu_a = blur(g, a, k)?;
    let mu_b = blur(g, b, k)?;
    let aa = g.square(a);
    let bb = g.square(b);
    let ab = g.mul(a, b)?;
    let e_aa = blur(g, aa, k)?;
    let e_bb = blur(g, bb, k)?;
    let e_ab = blur(g, ab, k)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let mu_aa = g.square(mu_a);
    let mu_bb = g.square(mu_b);
    let l_num = g.scale(mu_ab, 2.0);
    let l_num = g.offset(l_num, c1);
    let cov = g.sub(e_ab, mu_ab)?;
    let c_num = g.scale(cov, 2.0);
    let c_num = g.offset(c_num, c2);
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.offset(l_den, c1);
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let c_den = g.add(var_a, var_b)?;
    let c_den = g.offset(c_den, c2);
    let num = g.mul(l_num, c_num)?;
    let den = g.mul(l_den, c_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

fn edge_magnitude(g: &mut Graph, x: Var) -> Result<Var> {
    const SMOOTH: [f64; 3] = [0.25, 0.5, 0.25];
    const DIFF: [f64; 3] = [-0.5, 0.0, 0.5];
    let sy = g.conv(x, &SMOOTH, Axis::Y)?;
    let gx = g.conv(sy, &DIFF, Axis::X)?;
    let sx = g.conv(x, &SMOOTH, Axis::X)?;
    let gy = g.conv(sx, &DIFF, Axis::Y)?;
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let s = g.add(gx2, gy2)?;
    let s = g.offset(s, EDGE_EPS * EDGE_EPS);
    Ok(g.sqrt(s))
}

fn downscale_to(g: &mut Graph, x: Var, resolution: usize) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let (h, w) = (shape[0], shape[1]);
    if resolution == 0 || h % resolution != 0 || w % resolution != 0 || h != w {
        bail!(Parameter, "cannot area-resize {w}x{h} to {resolution}x{resolution}");
    }
    if h == resolution {
        return Ok(x);
    }
    g.area_downscale(x, h / resolution)
}

/// Records the proxy distance between two `[h, w, 3]` tensors at
/// `resolution`; returns a scalar node.
pub fn perceptual_graph(g: &mut Graph, a: Var, b: Var, resolution: usize) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        bail!(Parameter, "proxy inputs have shapes {:?} and {:?}", g.value(a).shape(), g.value(b).shape());
    }
    let a0 = downscale_to(g, a, resolution)?;
    let b0 = downscale_to(g, b, resolution)?;
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (mut sa, mut sb) = (a0, b0);
    let mut scores: Vec<Var> = Vec::with_capacity(SCALES);
    for s in 0..SCALES {
        if s > 0 {
            let side = g.value(sa).shape()[0];
            if side < 2 || side % 2 != 0 {
                break;
            }
            sa = g.area_downscale(sa, 2)?;
            sb = g.area_downscale(sb, 2)?;
        }
        scores.push(ssim_mean(g, sa, sb, &k)?);
    }
    let stacked = g.concat_rows(&scores)?;
    let ms = g.mean(stacked);
    let structural = g.scale(ms, -0.5);
    let structural = g.offset(structural, 0.5);
    let ea = edge_magnitude(g, a0)?;
    let eb = edge_magnitude(g, b0)?;
    let diff = g.sub(ea, eb)?;
    let diff = g.abs(diff);
    let edge = g.mean(diff);
    let edge = g.scale(edge, 0.5);
    g.add(structural, edge)
}

/// Sobel edge magnitudes of `img` after area-resizing to `resolution`, in
/// `[h, w, 3]` order; these are the values the proxy's edge term compares.
pub fn edge_map(img: &Image, resolution: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let v = g.constant(image_tensor(img));
    let v = downscale_to(&mut g, v, resolution)?;
    let e = edge_magnitude(&mut g, v)?;
    Ok(g.value(e).data().to_vec())
}

/// Proxy perceptual distance; zero exactly when the images are equal.
pub fn perceptual_proxy(a: &Image, b: &Image, resolution: usize) -> Result<f64> {
    if !a.same_shape(b) {
        bail!(Parameter, "images are {}x{} and {}x{}", a.width(), a.height(), b.width(), b.height());
    }
    let mut g = Graph::new();
    let va = g.constant(image_tensor(a));
    let vb = g.constant(image_tensor(b));
    let d = perceptual_graph(&mut g, va, vb, resolution)?;
    Ok(g.value(d).data()[0].max(0.0))
}
