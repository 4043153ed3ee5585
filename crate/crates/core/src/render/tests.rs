use super::*;
use crate::camera::{make_canonical_rig, CameraPose};
use crate::image::Image;
use crate::rng::Rng;
use crate::scene::{logit, GaussianScene, Splat};
use alloc::vec;
use alloc::vec::Vec;

const WHITE: [f64; 3] = [1.0; 3];

fn splat(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Splat {
    Splat { mean, rotation: [1.0, 0.0, 0.0, 0.0], scale: [scale; 3], opacity_logit: logit(opacity), color }
}

pub(crate) fn random_splats(rng: &mut Rng, n: usize) -> Vec<Splat> {
    (0..n)
        .map(|_| {
            let q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
            Splat {
                mean: [rng.uniform_range(-0.6, 0.6), rng.uniform_range(-0.6, 0.6), rng.uniform_range(-0.6, 0.6)],
                rotation: crate::scene::normalize_quat(q),
                scale: [rng.uniform_range(0.05, 0.25), rng.uniform_range(0.05, 0.25), rng.uniform_range(0.05, 0.25)],
                opacity_logit: rng.uniform_range(-1.5, 2.0),
                color: [rng.uniform_range(0.05, 0.95), rng.uniform_range(0.05, 0.95), rng.uniform_range(0.05, 0.95)],
            }
        })
        .collect()
}

fn weighted_loss(img: &Image, w: &[f64]) -> f64 {
    img.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn centered_isotropic_projection() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let scene = GaussianScene::new(vec![splat([0.0; 3], 0.1, 0.5, [0.5; 3])]).unwrap();
    let p = project(&scene, &pose, 64)[0];
    assert!((p.mean2d[0] - 32.0).abs() < 1e-12 && (p.mean2d[1] - 32.0).abs() < 1e-12);
    let expected = (0.1 * 64.0 / 2.4_f64).powi(2) + COV_FLOOR;
    assert!((p.cov2d[0][0] - expected).abs() < 1e-12);
    assert!((p.cov2d[1][1] - expected).abs() < 1e-12);
    assert!(p.cov2d[0][1].abs() < 1e-12);
}

#[test]
fn rotation_about_view_axis_swaps_eigenvalues() {
    let pose = CameraPose::free(0.0, 0.0, 1.0).unwrap();
    let mut s = splat([0.0; 3], 0.1, 0.5, [0.5; 3]);
    s.scale = [0.2, 0.05, 0.1];
    let a = project(&GaussianScene::new(vec![s]).unwrap(), &pose, 32)[0];
    let h = core::f64::consts::FRAC_1_SQRT_2;
    s.rotation = [h, 0.0, 0.0, h]; // 90° about z, the front view axis
    let b = project(&GaussianScene::new(vec![s]).unwrap(), &pose, 32)[0];
    assert!((a.cov2d[0][0] - b.cov2d[1][1]).abs() < 1e-9);
    assert!((a.cov2d[1][1] - b.cov2d[0][0]).abs() < 1e-9);
    assert!(b.cov2d[0][1].abs() < 1e-9);
}

#[test]
fn front_and_back_mirror_x() {
    let mut rng = Rng::new(4);
    let scene = GaussianScene::new(random_splats(&mut rng, 20)).unwrap();
    let rig = make_canonical_rig(1.2).unwrap();
    let front = project(&scene, &rig.poses()[0], 48);
    let back = project(&scene, &rig.poses()[3], 48);
    for (f, b) in front.iter().zip(&back) {
        // Oracle: construct the back projection directly from the world point.
        assert!((f.mean2d[0] + b.mean2d[0] - 48.0).abs() < 1e-9);
        assert!((f.mean2d[1] - b.mean2d[1]).abs() < 1e-9);
        assert!((f.depth + b.depth).abs() < 1e-12);
    }
}

#[test]
fn empty_scene_is_background() {
    let pose = CameraPose::free(10.0, 5.0, 1.2).unwrap();
    let img = render(&GaussianScene::empty(), &pose, 16, [0.2, 0.4, 0.6]);
    for px in img.data().chunks_exact(3) {
        assert_eq!(px, &[0.2, 0.4, 0.6]);
    }
}

#[test]
fn single_opaque_splat_closed_form() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let color = [0.9, 0.1, 0.3];
    // Half a pixel right and down of the image center lands on pixel (16, 16).
    let half_px = 0.5 * 2.4 / 32.0;
    let s = splat([half_px, -half_px, 0.0], 0.3, 1.0 - 1e-5, color);
    let img = render(&GaussianScene::new(vec![s]).unwrap(), &pose, 32, WHITE);
    let sigma2 = (0.3 * 32.0 / 2.4_f64).powi(2) + COV_FLOOR;
    for c in 0..3 {
        assert!((img.get(16, 16, c) - color[c]).abs() < 1e-3);
        assert_eq!(img.get(0, 0, c), 1.0);
        assert_eq!(img.get(31, 31, c), 1.0);
    }
    // Four pixels right of the center one.
    let a = (1.0 - 1e-5) * libm::exp(-0.5 * 16.0 / sigma2);
    assert!((img.get(20, 16, 0) - (a * color[0] + 1.0 - a)).abs() < 1e-12);
}

#[test]
fn opaque_occluder_hides_far_splat() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let near = splat([0.0, 0.0, 0.5], 100.0, 1.0 - 1e-9, [0.2, 0.3, 0.4]);
    let far_a = splat([0.1, 0.0, -0.5], 0.05, 0.9, [1.0, 0.0, 0.0]);
    let far_b = Splat { color: [0.0, 1.0, 0.0], ..far_a };
    let a = render(&GaussianScene::new(vec![near, far_a]).unwrap(), &pose, 32, WHITE);
    let b = render(&GaussianScene::new(vec![near, far_b]).unwrap(), &pose, 32, WHITE);
    assert_eq!(a, b);
}

#[test]
fn render_is_deterministic_and_order_invariant() {
    let mut rng = Rng::new(9);
    let splats = random_splats(&mut rng, 30);
    let pose = CameraPose::free(30.0, 10.0, 1.2).unwrap();
    let a = render(&GaussianScene::new(splats.clone()).unwrap(), &pose, 32, WHITE);
    let b = render(&GaussianScene::new(splats.clone()).unwrap(), &pose, 32, WHITE);
    assert_eq!(a, b);
    let mut perm = splats.clone();
    perm.reverse();
    perm.swap(3, 17);
    let c = render(&GaussianScene::new(perm).unwrap(), &pose, 32, WHITE);
    for (x, y) in a.data().iter().zip(c.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(a.is_unit_range());
}

#[test]
fn zero_upstream_gives_zero_grads() {
    let mut rng = Rng::new(2);
    let scene = GaussianScene::new(random_splats(&mut rng, 10)).unwrap();
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let g = render_backward(&scene, &pose, 16, WHITE, &Image::filled(16, 16, [0.0; 3])).unwrap();
    assert!(flatten_grads(&g.splats).iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_gradient_shape_is_rejected() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let r = render_backward(&GaussianScene::empty(), &pose, 16, WHITE, &Image::filled(8, 8, [0.0; 3]));
    assert!(r.is_err());
}

#[test]
fn color_gradient_matches_central_difference() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let s = splat([0.05, -0.02, 0.0], 0.2, 0.7, [0.3, 0.6, 0.2]);
    let res = 32;
    let n = (res * res * 3) as f64;
    let mean_px = |s: Splat| render(&GaussianScene::new(vec![s]).unwrap(), &pose, res, WHITE).data().iter().sum::<f64>() / n;
    let g = render_backward(
        &GaussianScene::new(vec![s]).unwrap(),
        &pose,
        res,
        WHITE,
        &Image::filled(res, res, [1.0 / n; 3]),
    )
    .unwrap();
    let h = 1e-4;
    for c in 0..3 {
        let mut p = s;
        p.color[c] += h;
        let mut m = s;
        m.color[c] -= h;
        let fd = (mean_px(p) - mean_px(m)) / (2.0 * h);
        let an = g.splats[0].color[c];
        assert!((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8) < 1e-3, "{fd} vs {an}");
    }
}

#[test]
fn off_screen_splat_has_no_gradient() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let s = splat([5.0, 5.0, 0.0], 0.05, 0.9, [0.5; 3]);
    let g = render_backward(&GaussianScene::new(vec![s]).unwrap(), &pose, 32, WHITE, &Image::filled(32, 32, [1.0; 3]))
        .unwrap();
    assert!(g.splats[0].mean.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn all_parameter_classes_match_central_differences() {
    let mut rng = Rng::new(21);
    let mut checked = 0;
    while checked < 8 {
        let splats = random_splats(&mut rng, 6);
        let pose = CameraPose::free(rng.uniform_range(0.0, 360.0), rng.uniform_range(-30.0, 30.0), 1.2).unwrap();
        let res = 24;
        let (qm, tm) = threshold_margins(&splats, &pose, res);
        if qm < 0.05 || tm < 1e-2 {
            continue;
        }
        checked += 1;
        let w: Vec<f64> = (0..res * res * 3).map(|_| rng.normal()).collect();
        let g = backward::backward_splats(&splats, &pose, res, WHITE, &w);
        let an = flatten_grads(&g);
        let x0 = flatten_splats(&splats);
        let h = 1e-6;
        for k in 0..x0.len() {
            let mut xp = x0.clone();
            xp[k] += h;
            let mut xm = x0.clone();
            xm[k] -= h;
            let lp = weighted_loss(&raster::render_splats(&unflatten_splats(&xp), &pose, res, WHITE), &w);
            let lm = weighted_loss(&raster::render_splats(&unflatten_splats(&xm), &pose, res, WHITE), &w);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - an[k]).abs() / fd.abs().max(an[k].abs()).max(1e-8);
            assert!(rel < 1e-3, "param {k}: fd {fd} an {}", an[k]);
        }
    }
}

#[test]
fn weights_sum_to_coverage() {
    let mut rng = Rng::new(13);
    let scene = GaussianScene::new(random_splats(&mut rng, 25)).unwrap();
    let pose = CameraPose::free(45.0, 0.0, 1.2).unwrap();
    let w = splat_weights(&scene, &pose, 32);
    let a: f64 = w.per_splat.iter().sum();
    let b: f64 = w.per_pixel.iter().sum();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn active_set_signature_tracks_truncation_and_ordering() {
    let pose = CameraPose::free(0.0, 0.0, 1.2).unwrap();
    let a = splat([0.0, 0.0, 0.0], 0.2, 0.6, [0.2, 0.4, 0.6]);
    let b = splat([0.1, 0.0, 0.3], 0.15, 0.5, [0.9, 0.1, 0.1]);
    let sig = active_set_signature(&[a, b], &pose, 24);
    let mut recolored = [a, b];
    recolored[0].color = [0.8, 0.8, 0.1];
    recolored[1].opacity_logit += 1e-3;
    assert_eq!(active_set_signature(&recolored, &pose, 24), sig);
    let mut moved = [a, b];
    moved[1].mean[0] += 0.3;
    assert_ne!(active_set_signature(&moved, &pose, 24), sig);
    let mut shrunk = [a, b];
    shrunk[0].scale = [0.05; 3];
    assert_ne!(active_set_signature(&shrunk, &pose, 24), sig);
}
