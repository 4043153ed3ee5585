use super::{LoraParams, ModelConfig, Projection, ReconstructorParams, HEAD_OUTPUTS};
use crate::autodiff::{Graph, Tensor, Var};
use crate::camera::CameraPose;
use crate::error::{bail, Result};
use crate::image::Image;
use crate::render::unflatten_splats;
use crate::scene::GaussianScene;
use crate::views::MultiViewSet;
use alloc::vec;
use alloc::vec::Vec;

/// Bound on the opacity logit emitted by the head.
const OPACITY_LOGIT_BOUND: f64 = 12.0;
const OFFSET_BOUND: f64 = 0.5;
const MIN_SCALE: f64 = 0.005;
const SCALE_GAIN: f64 = 0.15;

pub struct BlockVars {
    ln1: (Var, Var),
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    ln2: (Var, Var),
    mlp1: (Var, Var),
    mlp2: (Var, Var),
}

/// Graph handles of the base parameters.
pub struct ModelVars {
    pub config: ModelConfig,
    /// Handles in [`ReconstructorParams::tensors`] order.
    pub all: Vec<Var>,
    embed: (Var, Var),
    pos: Var,
    blocks: Vec<BlockVars>,
    final_ln: (Var, Var),
    head: (Var, Var),
}

/// Graph handles of the adapters, `(A, B)` per block and projection.
pub struct LoraVars {
    pub scaling: f64,
    /// Handles in [`LoraParams::tensors`] order.
    pub all: Vec<Var>,
    blocks: Vec<[Option<(Var, Var)>; 4]>,
}

/// Adds the base parameters to `g`, as trainable leaves when `trainable`.
pub fn bind_params(g: &mut Graph, params: &ReconstructorParams, trainable: bool) -> ModelVars {
    let all: Vec<Var> = params
        .tensors()
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let mut it = all.iter().copied();
    let mut next = || it.next().expect("layout is complete");
    let embed = (next(), next());
    let pos = next();
    let blocks = (0..params.config().layers)
        .map(|_| BlockVars {
            ln1: (next(), next()),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            ln2: (next(), next()),
            mlp1: (next(), next()),
            mlp2: (next(), next()),
        })
        .collect();
    let final_ln = (next(), next());
    let head = (next(), next());
    ModelVars { config: *params.config(), all, embed, pos, blocks, final_ln, head }
}

/// Adds the adapters to `g`, as trainable leaves when `trainable`.
pub fn bind_lora(g: &mut Graph, lora: &LoraParams, trainable: bool) -> LoraVars {
    let all: Vec<Var> =
        lora.tensors().iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect();
    let mut blocks = Vec::with_capacity(lora.model().layers);
    let mut i = 0;
    for _ in 0..lora.model().layers {
        let mut slots = [None; 4];
        for p in &lora.config().targets {
            let slot = Projection::ALL.iter().position(|q| q == p).expect("projection is listed");
            slots[slot] = Some((all[i], all[i + 1]));
            i += 2;
        }
        blocks.push(slots);
    }
    LoraVars { scaling: lora.config().scaling(), all, blocks }
}

/// Flattened patches plus pose embedding, one row per patch.
fn patch_matrix(image: &Image, pose: &CameraPose, config: &ModelConfig) -> Result<Tensor> {
    let (res, p) = (config.resolution, config.patch);
    if image.width() != res || image.height() != res {
        bail!(Parameter, "view is {}x{}, model expects {res}x{res}", image.width(), image.height());
    }
    let side = res / p;
    let feats = config.patch_features();
    let emb = pose.embedding();
    let mut data = Vec::with_capacity(side * side * feats);
    for py in 0..side {
        for px in 0..side {
            for y in 0..p {
                for x in 0..p {
                    for c in 0..3 {
                        data.push(image.get(px * p + x, py * p + y, c) - 0.5);
                    }
                }
            }
            data.extend_from_slice(&emb);
        }
    }
    Tensor::matrix(side * side, feats, data)
}

fn layer_norm(g: &mut Graph, x: Var, (gain, bias): (Var, Var)) -> Result<Var> {
    let n = g.layer_norm_rows(x);
    let s = g.mul_row(n, gain)?;
    g.add_row(s, bias)
}

fn linear(g: &mut Graph, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn project(g: &mut Graph, x: Var, w: Var, adapter: Option<(Var, Var)>, scaling: f64) -> Result<Var> {
    let y = g.matmul(x, w)?;
    let Some((a, b)) = adapter else { return Ok(y) };
    let xa = g.matmul(x, a)?;
    let xab = g.matmul(xa, b)?;
    let delta = g.scale(xab, scaling);
    g.add(y, delta)
}

fn encode_graph(g: &mut Graph, image: &Image, pose: &CameraPose, vars: &ModelVars) -> Result<Var> {
    let patches = g.constant(patch_matrix(image, pose, &vars.config)?);
    let t = linear(g, patches, vars.embed)?;
    g.add(t, vars.pos)
}

fn attention_graph(g: &mut Graph, x: Var, vars: &ModelVars, lora: Option<&LoraVars>) -> Result<Var> {
    let d = vars.config.d_model;
    let heads = vars.config.heads;
    let dh = d / heads;
    let inv_sqrt = 1.0 / libm::sqrt(dh as f64);
    let mut x = x;
    for (l, b) in vars.blocks.iter().enumerate() {
        let ad = |p: usize| lora.and_then(|lv| lv.blocks[l][p]);
        let scaling = lora.map_or(0.0, |lv| lv.scaling);
        let h = layer_norm(g, x, b.ln1)?;
        let q = project(g, h, b.wq, ad(0), scaling)?;
        let k = project(g, h, b.wk, ad(1), scaling)?;
        let v = project(g, h, b.wv, ad(2), scaling)?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = g.slice_cols(q, hd * dh, dh)?;
            let kh = g.slice_cols(k, hd * dh, dh)?;
            let vh = g.slice_cols(v, hd * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, inv_sqrt);
            let p = g.softmax_rows(s);
            outs.push(g.matmul(p, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let o = project(g, cat, b.wo, ad(3), scaling)?;
        x = g.add(x, o)?;
        let h2 = layer_norm(g, x, b.ln2)?;
        let m = linear(g, h2, b.mlp1)?;
        let m = g.gelu(m);
        let m = linear(g, m, b.mlp2)?;
        x = g.add(x, m)?;
    }
    Ok(x)
}

/// Patch-center anchors on each view's depth-0 plane and the view bases.
fn anchors(poses: &[CameraPose], config: &ModelConfig) -> (Vec<f64>, Vec<Tensor>) {
    let side = config.resolution / config.patch;
    let mut pts = Vec::with_capacity(poses.len() * side * side * 3);
    let mut bases = Vec::with_capacity(poses.len());
    for pose in poses {
        for py in 0..side {
            for px in 0..side {
                let c = |i: usize| (i as f64 + 0.5) * config.patch as f64;
                pts.extend_from_slice(&pose.unproject(c(px), c(py), config.resolution));
            }
        }
        let b = pose.basis();
        let m = [b.right, b.up, b.forward].concat();
        bases.push(Tensor::matrix(3, 3, m).expect("3x3"));
    }
    (pts, bases)
}

fn decode_graph(g: &mut Graph, x: Var, poses: &[CameraPose], vars: &ModelVars) -> Result<Var> {
    let cfg = &vars.config;
    let tpv = cfg.tokens_per_view();
    if g.value(x).rows() != poses.len() * tpv {
        bail!(Parameter, "{} tokens for {} views of {tpv}", g.value(x).rows(), poses.len());
    }
    let y = layer_norm(g, x, vars.final_ln)?;
    let raw = linear(g, y, vars.head)?;

    let off = g.slice_cols(raw, 0, 3)?;
    let off = g.tanh(off);
    let off = g.scale(off, OFFSET_BOUND);
    let (anchor, bases) = anchors(poses, cfg);
    let mut world = Vec::with_capacity(poses.len());
    for (v, basis) in bases.into_iter().enumerate() {
        let rows = g.slice_rows(off, v * tpv, tpv)?;
        let basis = g.constant(basis);
        world.push(g.matmul(rows, basis)?);
    }
    let world = g.concat_rows(&world)?;
    let anchor = g.constant(Tensor::matrix(poses.len() * tpv, 3, anchor)?);
    let mean = g.add(world, anchor)?;

    let q = g.slice_cols(raw, 3, 4)?;
    let identity = g.constant(Tensor::new(vec![4], vec![1.0, 0.0, 0.0, 0.0])?);
    let q = g.add_row(q, identity)?;
    let q = g.row_normalize(q);

    let s = g.slice_cols(raw, 7, 3)?;
    let s = g.softplus(s);
    let s = g.scale(s, SCALE_GAIN);
    let s = g.offset(s, MIN_SCALE);

    let o = g.slice_cols(raw, 10, 1)?;
    let o = g.scale(o, 1.0 / OPACITY_LOGIT_BOUND);
    let o = g.tanh(o);
    let o = g.scale(o, OPACITY_LOGIT_BOUND);

    let c = g.slice_cols(raw, 11, 3)?;
    let c = g.sigmoid(c);
    g.concat_cols(&[mean, q, s, o, c])
}

/// Records the full reconstruction of `mvs`; returns the `N × 14` splat
/// parameter node, one row per patch token in view order.
pub fn forward_graph(g: &mut Graph, mvs: &MultiViewSet, vars: &ModelVars, lora: Option<&LoraVars>) -> Result<Var> {
    let poses = mvs.poses();
    let mut tokens = Vec::with_capacity(poses.len());
    for (pose, img) in mvs.views() {
        tokens.push(encode_graph(g, img, pose, vars)?);
    }
    let x = g.concat_rows(&tokens)?;
    let x = attention_graph(g, x, vars, lora)?;
    decode_graph(g, x, &poses, vars)
}

/// Splats from an `N × 14` parameter tensor produced by [`forward_graph`].
pub fn splats_from_tensor(t: &Tensor) -> Result<GaussianScene> {
    if t.cols() != HEAD_OUTPUTS {
        bail!(Contract, "expected {HEAD_OUTPUTS} values per splat, got {}", t.cols());
    }
    GaussianScene::new(unflatten_splats(t.data()))
        .map_err(|e| crate::Error::Numerical(alloc::format!("decoded splats are invalid: {e}")))
}

/// Token rows (`tokens_per_view × d_model`) for one view.
pub fn encode_view(image: &Image, pose: &CameraPose, params: &ReconstructorParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, false);
    let t = encode_graph(&mut g, image, pose, &vars)?;
    Ok(g.value(t).clone())
}

/// Joint self-attention over the concatenated tokens of all views.
pub fn cross_view_attention(tokens: &[Tensor], params: &ReconstructorParams, lora: Option<&LoraParams>) -> Result<Tensor> {
    let Some(first) = tokens.first() else { bail!(Parameter, "no views to attend over") };
    if tokens.iter().any(|t| t.shape() != first.shape()) {
        bail!(Parameter, "views yield differing token counts");
    }
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, false);
    let lv = lora.map(|l| bind_lora(&mut g, l, false));
    let parts: Vec<Var> = tokens.iter().map(|t| g.constant(t.clone())).collect();
    let x = g.concat_rows(&parts)?;
    let y = attention_graph(&mut g, x, &vars, lv.as_ref())?;
    Ok(g.value(y).clone())
}

/// One splat per token; token rows are grouped by view in `poses` order.
pub fn decode_gaussians(tokens: &Tensor, params: &ReconstructorParams, poses: &[CameraPose]) -> Result<GaussianScene> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, false);
    let x = g.constant(tokens.clone());
    let s = decode_graph(&mut g, x, poses, &vars)?;
    splats_from_tensor(g.value(s))
}

/// Reconstructs a scene from a canonical-rig view set.
pub fn forward(mvs: &MultiViewSet, params: &ReconstructorParams, lora: Option<&LoraParams>) -> Result<GaussianScene> {
    let poses = mvs.poses();
    let extent = poses[0].ortho_half_extent();
    let rig = crate::camera::make_canonical_rig(extent)?;
    if !rig.matches(&poses) {
        bail!(Parameter, "forward needs the six canonical views in rig order");
    }
    if let Some(l) = lora {
        if l.model() != params.config() {
            bail!(Parameter, "adapters were built for a different model configuration");
        }
    }
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, false);
    let lv = lora.map(|l| bind_lora(&mut g, l, false));
    let s = forward_graph(&mut g, mvs, &vars, lv.as_ref())?;
    splats_from_tensor(g.value(s))
}
