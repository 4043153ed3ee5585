use super::*;
use crate::autodiff::{grad_check_subset, Tensor};
use crate::metrics::mse;
use crate::reconstructor::{LoraConfig, ModelConfig};

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 16, layers: 1, heads: 2, patch: 8, resolution: 32 }
}

fn tiny_data() -> DatasetConfig {
    DatasetConfig { resolution: 32, ..DatasetConfig::default() }
}

fn base() -> ReconstructorParams {
    ReconstructorParams::init(tiny_model(), &mut Rng::new(5)).unwrap()
}

fn noisy_set(set: &MultiViewSet, seed: u64) -> MultiViewSet {
    let mut rng = Rng::new(seed);
    let imgs = set
        .images()
        .map(|im| {
            let data = im.data().iter().map(|v| (v + 0.1 * rng.normal()).clamp(0.0, 1.0)).collect();
            Image::new(im.width(), im.height(), data).unwrap()
        })
        .collect();
    set.with_images(imgs, Stage::Rendered).unwrap()
}

#[test]
fn loss_is_zero_on_equal_views() {
    let (_, gtv, _) = scene_inputs(&SceneSpec::with_seed(1), &tiny_data()).unwrap();
    let l = loss(&gtv, &gtv, &LossSpec::default()).unwrap();
    assert_eq!(l.total, 0.0);
}

#[test]
fn mse_only_loss_matches_metric() {
    let (_, gtv, inputs) = scene_inputs(&SceneSpec::with_seed(2), &tiny_data()).unwrap();
    let spec = LossSpec { perceptual_weight: 0.0, ..LossSpec::default() };
    let l = loss(&inputs, &gtv, &spec).unwrap();
    let expect = inputs.images().zip(gtv.images()).map(|(a, b)| mse(a, b).unwrap()).sum::<f64>() / 6.0;
    assert!((l.total - expect).abs() < 1e-14);
    assert_eq!(l.perceptual, 0.0);
}

#[test]
fn loss_rejects_mismatched_sets() {
    let (_, gtv, _) = scene_inputs(&SceneSpec::with_seed(2), &tiny_data()).unwrap();
    let other = scene_inputs(&SceneSpec::with_seed(2), &DatasetConfig { resolution: 16, ..tiny_data() }).unwrap().1;
    assert!(loss(&gtv, &other, &LossSpec::default()).is_err());
    assert!(LossSpec { mse_weight: 0.0, perceptual_weight: 0.0, ..LossSpec::default() }.validate().is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (_, gtv, _) = scene_inputs(&SceneSpec::with_seed(3), &tiny_data()).unwrap();
    let rendered = noisy_set(&gtv, 4);
    let targets: Vec<&Image> = gtv.images().collect();
    let x: Vec<f64> = rendered.images().flat_map(|im| im.data().to_vec()).collect();
    let per = 32 * 32 * 3;
    let f = |v: &[f64], want: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..6).map(|i| g.param(Tensor::new(vec![32, 32, 3], v[i * per..(i + 1) * per].to_vec()).unwrap())).collect();
        let n = loss_graph(&mut g, &vars, &targets, &LossSpec::default())?;
        let value = g.value(n.total).data()[0];
        if !want {
            return Ok((value, Vec::new()));
        }
        let gr = g.backward(n.total)?;
        Ok((value, vars.iter().flat_map(|&v| gr.tensor(&g, v).into_data()).collect()))
    };
    let idx: Vec<usize> = (0..x.len()).step_by(97).collect();
    let r = grad_check_subset(f, &x, 1e-6, &idx).unwrap();
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

#[test]
fn zero_strength_targets_are_base_renders() {
    let cfg = DatasetConfig { refine: RefineConfig { strength: 0.0, ..tiny_data().refine }, ..tiny_data() };
    let spec = SceneSpec::with_seed(7);
    let b = base();
    let pair = build_refined_pair(&spec, &cfg, &b).unwrap();
    let theta = forward(&pair.inputs, &b, None).unwrap();
    let renders = render_views(&theta, &pair.inputs.poses(), 32, Stage::Rendered).unwrap();
    assert!(pair.targets.images().eq(renders.images()));
}

#[test]
fn dataset_replays_exactly() {
    let specs: Vec<SceneSpec> = (20..23).map(SceneSpec::with_seed).collect();
    let b = base();
    let a = build_refined_dataset(&specs, &tiny_data(), &b).unwrap();
    let again = build_refined_dataset(&specs, &tiny_data(), &b).unwrap();
    assert_eq!(a, again);
    assert_eq!(a[1].seeds, SeedRecord::derive(21, tiny_data().refine.seed));
    assert_eq!(a[1].targets.stage, Stage::Refined);
    assert_eq!(a[1].inputs.stage, Stage::Generated);
}

#[test]
fn resolution_mismatch_is_a_config_error() {
    let b = base();
    let err = scene_stages(&SceneSpec::with_seed(1), &DatasetConfig::default(), &b).unwrap_err();
    assert!(matches!(err, crate::Error::Config(_)));
}

#[test]
fn zero_steps_leave_adapters_at_identity() {
    let b = base();
    let ds = build_refined_dataset(&[SceneSpec::with_seed(30)], &tiny_data(), &b).unwrap();
    let cfg = BoostConfig { steps: 0, lora: LoraConfig { rank: 4, alpha: 4.0, ..LoraConfig::default() }, ..BoostConfig::default() };
    let out = train_boost(&ds, &b, &cfg).unwrap();
    assert!(out.lora.is_identity());
    assert!(out.log.is_empty());
    assert!(train_boost(&[], &b, &cfg).is_err());
}

#[test]
fn boost_is_deterministic_and_learns() {
    let b = base();
    let specs: Vec<SceneSpec> = (40..42).map(SceneSpec::with_seed).collect();
    let ds = build_refined_dataset(&specs, &tiny_data(), &b).unwrap();
    let cfg = BoostConfig {
        steps: 12,
        optim: crate::autodiff::AdamConfig { lr: 1e-2, ..Default::default() },
        lora: LoraConfig { rank: 4, alpha: 4.0, ..LoraConfig::default() },
        ..BoostConfig::default()
    };
    let a = train_boost(&ds, &b, &cfg).unwrap();
    assert_eq!(a, train_boost(&ds, &b, &cfg).unwrap());
    assert!(!a.lora.is_identity());
    let one = train_boost(&ds, &b, &BoostConfig { view_sampling: ViewSampling::One, ..cfg.clone() }).unwrap();
    assert_eq!(one.log.len(), 12);
    let first = loss(&render_views(&forward(&ds[0].inputs, &b, None).unwrap(), &ds[0].inputs.poses(), 32, Stage::Rendered).unwrap(), &ds[0].targets, &cfg.loss).unwrap();
    let after = loss(&render_views(&forward(&ds[0].inputs, &b, Some(&a.lora)).unwrap(), &ds[0].inputs.poses(), 32, Stage::Rendered).unwrap(), &ds[0].targets, &cfg.loss).unwrap();
    assert!(after.total < first.total, "{} -> {}", first.total, after.total);
}

#[test]
fn non_finite_loss_aborts_with_seeds() {
    let mut b = base();
    let ds = build_refined_dataset(&[SceneSpec::with_seed(50)], &tiny_data(), &b).unwrap();
    b.tensors_mut()[0].data_mut()[0] = f64::NAN;
    let cfg = BoostConfig { steps: 3, lora: LoraConfig { rank: 2, alpha: 2.0, ..LoraConfig::default() }, ..BoostConfig::default() };
    match train_boost(&ds, &b, &cfg) {
        Err(crate::Error::Numerical(msg)) => assert!(msg.contains("step 0") && msg.contains("scene seed 50"), "{msg}"),
        other => panic!("expected a numerical abort, got {other:?}"),
    }
}

#[test]
fn pretraining_reduces_loss() {
    let cfg = PretrainConfig {
        steps: 30,
        scene_pool: 2,
        optim: crate::autodiff::AdamConfig { lr: 3e-3, ..Default::default() },
        ..PretrainConfig::default()
    };
    let (_, log) = pretrain_base(tiny_model(), &tiny_data(), &cfg).unwrap();
    let head: f64 = log[..5].iter().map(|r| r.loss).sum();
    let tail: f64 = log[25..].iter().map(|r| r.loss).sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn ablation_rows_follow_strengths() {
    let b = base();
    let stages: Vec<SceneStages> = (60..62).map(|s| scene_stages(&SceneSpec::with_seed(s), &tiny_data(), &b).unwrap()).collect();
    let rows = ablate_strength(&stages, &[0.0, 0.95], &tiny_data()).unwrap();
    assert_eq!(rows.len(), 2);
    let raw = stages.iter().map(|s| mean_view_psnr(&s.renders, &s.gt_views).unwrap()).sum::<f64>() / 2.0;
    assert!((rows[0].psnr - raw).abs() < 1e-9);
    assert!(rows[1].psnr > rows[0].psnr);
}

#[test]
fn perfect_reconstruction_scores_perfectly() {
    let gt = generate_scene(&SceneSpec::with_seed(70)).unwrap();
    let m = evaluate_scene(&gt, &gt, 1.2, 32, &EvalConfig { orbit_views: 8, point_samples: 1000, ..EvalConfig::default() }).unwrap();
    assert_eq!(m.psnr, crate::metrics::PSNR_CAP);
    assert!((m.ssim - 1.0).abs() < 1e-12);
    assert_eq!(m.perceptual, 0.0);
    assert_eq!(m.chamfer, 0.0);
    assert_eq!(m.fscore, 1.0);
}

#[test]
fn sign_test_and_summary() {
    let a: Vec<f64> = (0..20).map(|i| i as f64 + 1.0).collect();
    let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
    assert!((paired_sign_test(&a, &b).unwrap() - 0.5f64.powi(20)).abs() < 1e-18);
    assert_eq!(paired_sign_test(&a, &a).unwrap(), 1.0);
    // 15 wins of 20: P(X >= 15) = 21700 / 2^20.
    let mixed: Vec<f64> = (0..20).map(|i| if i < 15 { 1.0 } else { -1.0 }).collect();
    assert!((paired_sign_test(&mixed, &[0.0; 20]).unwrap() - 21700.0 / 1048576.0).abs() < 1e-15);
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - libm::sqrt(5.0 / 3.0)).abs() < 1e-15);
}
