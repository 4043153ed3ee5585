use super::*;
use crate::autodiff::{grad_check_subset, Graph};
use crate::camera::make_canonical_rig;
use crate::image::Image;
use crate::rng::Rng;
use crate::views::{MultiViewSet, Stage};

fn small() -> ModelConfig {
    ModelConfig { d_model: 16, layers: 1, heads: 2, patch: 8, resolution: 16 }
}

fn views(res: usize, seed: u64) -> MultiViewSet {
    let rig = make_canonical_rig(1.2).unwrap();
    let mut rng = Rng::new(seed);
    let v = rig
        .poses()
        .iter()
        .map(|p| (*p, Image::from_fn(res, res, |_, _, _| rng.uniform())))
        .collect();
    MultiViewSet::new(v, None, Stage::Generated).unwrap()
}

#[test]
fn default_config_counts() {
    let c = ModelConfig::default();
    c.validate().unwrap();
    assert_eq!(c.tokens_per_view(), 64);
    assert_eq!(c.patch_features(), 198);
    let bad = ModelConfig { heads: 5, ..c };
    assert!(bad.validate().is_err());
    let bad = ModelConfig { patch: 7, ..c };
    assert!(bad.validate().is_err());
}

#[test]
fn forward_yields_one_valid_splat_per_token() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(1)).unwrap();
    let scene = forward(&views(16, 2), &p, None).unwrap();
    assert_eq!(scene.len(), 6 * cfg.tokens_per_view());
    scene.validate().unwrap();
    let again = forward(&views(16, 2), &p, None).unwrap();
    assert_eq!(scene, again);
}

#[test]
fn zero_adapter_is_identity() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(1)).unwrap();
    let lora = LoraParams::init(LoraConfig { rank: 4, alpha: 4.0, ..LoraConfig::default() }, cfg, &mut Rng::new(3)).unwrap();
    assert!(lora.is_identity());
    let mvs = views(16, 5);
    assert_eq!(forward(&mvs, &p, None).unwrap(), forward(&mvs, &p, Some(&lora)).unwrap());
}

#[test]
fn nonzero_adapter_changes_output() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(1)).unwrap();
    let mut lora = LoraParams::init(LoraConfig { rank: 4, alpha: 4.0, ..LoraConfig::default() }, cfg, &mut Rng::new(3)).unwrap();
    for (name, t) in lora.names().to_vec().iter().zip(lora.tensors_mut()) {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.1);
        }
    }
    let mvs = views(16, 5);
    assert_ne!(forward(&mvs, &p, None).unwrap(), forward(&mvs, &p, Some(&lora)).unwrap());
}

#[test]
fn staged_api_matches_forward() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(4)).unwrap();
    let mvs = views(16, 6);
    let tokens: Vec<_> = mvs.views().iter().map(|(pose, img)| encode_view(img, pose, &p).unwrap()).collect();
    assert_eq!(tokens[0].shape(), &[4, 16]);
    let mixed = cross_view_attention(&tokens, &p, None).unwrap();
    let scene = decode_gaussians(&mixed, &p, &mvs.poses()).unwrap();
    assert_eq!(scene, forward(&mvs, &p, None).unwrap());
}

#[test]
fn zero_head_places_splats_at_anchors() {
    let cfg = small();
    let mut p = ReconstructorParams::init(cfg, &mut Rng::new(4)).unwrap();
    let names = p.names().to_vec();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if name == "head.w" || name == "head.b" {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mvs = views(16, 7);
    let scene = forward(&mvs, &p, None).unwrap();
    for (v, (pose, _)) in mvs.views().iter().enumerate() {
        for py in 0..2 {
            for px in 0..2 {
                let s = &scene.splats()[v * 4 + py * 2 + px];
                let a = pose.unproject(px as f64 * 8.0 + 4.0, py as f64 * 8.0 + 4.0, 16);
                assert!((0..3).all(|k| (s.mean[k] - a[k]).abs() < 1e-12));
                assert_eq!(s.rotation, [1.0, 0.0, 0.0, 0.0]);
                assert!((s.scale[0] - (0.005 + 0.15 * core::f64::consts::LN_2)).abs() < 1e-12);
                assert_eq!(s.color, [0.5; 3]);
                assert_eq!(s.opacity_logit, 0.0);
            }
        }
    }
}

#[test]
fn rejects_wrong_inputs() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(1)).unwrap();
    assert!(forward(&views(24, 1), &p, None).is_err());
    let mvs = views(16, 1);
    let partial = MultiViewSet::new(mvs.views()[..3].to_vec(), None, Stage::Generated).unwrap();
    assert!(forward(&partial, &p, None).is_err());
    let other = ModelConfig { d_model: 8, ..cfg };
    let lora = LoraParams::init(LoraConfig::default(), other, &mut Rng::new(1)).unwrap();
    assert!(forward(&mvs, &p, Some(&lora)).is_err());
}

#[test]
fn init_is_seeded_and_named() {
    let cfg = small();
    let a = ReconstructorParams::init(cfg, &mut Rng::new(9)).unwrap();
    let b = ReconstructorParams::init(cfg, &mut Rng::new(9)).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), ReconstructorParams::init(cfg, &mut Rng::new(10)).unwrap().fingerprint());
    assert_eq!(a.get("head.b").unwrap().data(), &HEAD_BIAS_INIT);
    let lora = LoraParams::init(LoraConfig::default(), cfg, &mut Rng::new(1)).unwrap();
    let (base, adapters) = partition_params(&a, &lora);
    assert_eq!(base.len(), a.names().len());
    assert_eq!(adapters.len(), 2 * cfg.layers * 2);
    assert!(base.iter().all(|n| !adapters.contains(n)));
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let cfg = small();
    let p = ReconstructorParams::init(cfg, &mut Rng::new(11)).unwrap();
    let mut lora = LoraParams::init(LoraConfig { rank: 2, alpha: 2.0, ..LoraConfig::default() }, cfg, &mut Rng::new(12)).unwrap();
    let mut rng = Rng::new(13);
    for t in lora.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.3 * rng.normal());
    }
    let mvs = views(16, 14);
    let shapes: Vec<Vec<usize>> = lora.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = lora.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let weights: Vec<f64> = (0..6 * 4 * 14).map(|i| libm::sin(i as f64 * 0.7)).collect();
    let f = |x: &[f64], want_grad: bool| {
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &p, false);
        let mut off = 0;
        let mut tensors = Vec::new();
        for s in &shapes {
            let n: usize = s.iter().product();
            tensors.push(crate::autodiff::Tensor::new(s.clone(), x[off..off + n].to_vec())?);
            off += n;
        }
        let l = LoraParams::from_named(lora.config().clone(), cfg, lora.names().iter().cloned().zip(tensors).collect())?;
        let lv = bind_lora(&mut g, &l, true);
        let out = forward_graph(&mut g, &mvs, &vars, Some(&lv))?;
        let w = g.constant(crate::autodiff::Tensor::matrix(24, 14, weights.clone())?);
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod);
        let value = g.value(loss).data()[0];
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss)?;
        Ok((value, lv.all.iter().flat_map(|v| grads.get(*v).unwrap().to_vec()).collect()))
    };
    let idx: Vec<usize> = (0..flat.len()).step_by(7).collect();
    let r = grad_check_subset(f, &flat, 1e-6, &idx).unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}
