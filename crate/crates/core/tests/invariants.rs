use mvboost_core::camera::{azimuth_distance, wrap_degrees};
use mvboost_core::diffusion::{build_schedule, ScheduleKind};
use mvboost_core::metrics::{chamfer, fscore, normalize_points, psnr, ssim, PointSet};
use mvboost_core::render::{active_set_signature, render};
use mvboost_core::scene::{normalize_quat, GaussianScene, Splat};
use mvboost_core::{CameraPose, Image};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-2.0..2.0f64)
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(point(), 1..max)
}

fn splat() -> impl Strategy<Value = Splat> {
    (point(), prop::array::uniform4(-1.0..1.0f64), prop::array::uniform3(0.02..0.4f64), -4.0..4.0f64, prop::array::uniform3(0.0..=1.0f64))
        .prop_filter("rotation needs a direction", |(_, q, ..)| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|(mean, q, scale, opacity_logit, color)| Splat {
            mean: mean.map(|v| v * 0.4),
            rotation: normalize_quat(q),
            scale,
            opacity_logit,
            color,
        })
}

fn image(n: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..=1.0f64, n * n * 3).prop_map(move |d| Image::new(n, n, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_quaternions_are_unit_and_keep_direction(q in prop::array::uniform4(-10.0..10.0f64)) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let u = normalize_quat(q);
        let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!(u.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    #[test]
    fn chamfer_is_a_symmetric_premetric(a in points(40), b in points(40)) {
        let (pa, pb) = (PointSet::new(a).unwrap(), PointSet::new(b).unwrap());
        let ab = chamfer(&pa, &pb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - chamfer(&pb, &pa).unwrap()).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer(&pa, &pa).unwrap(), 0.0);
    }

    #[test]
    fn fscore_is_bounded_and_monotone_in_tau(a in points(40), b in points(40), tau in 0.01..1.0f64) {
        let (pa, pb) = (PointSet::new(a).unwrap(), PointSet::new(b).unwrap());
        let f = fscore(&pa, &pb, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(fscore(&pa, &pb, 2.0 * tau).unwrap() >= f);
        prop_assert_eq!(fscore(&pa, &pa, tau).unwrap(), 1.0);
    }

    #[test]
    fn normalization_ignores_translation_and_scale(a in points(30), shift in point(), k in 0.1..10.0f64) {
        let base = normalize_points(&PointSet::new(a.clone()).unwrap()).unwrap();
        prop_assert!(base.points().iter().flatten().all(|v| v.abs() <= 1.0 + 1e-12));
        let moved: Vec<[f64; 3]> = a.iter().map(|p| [k * p[0] + shift[0], k * p[1] + shift[1], k * p[2] + shift[2]]).collect();
        let other = normalize_points(&PointSet::new(moved).unwrap()).unwrap();
        for (p, q) in base.points().iter().zip(other.points()) {
            for c in 0..3 {
                prop_assert!((p[c] - q[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn image_metrics_are_symmetric(a in image(12), b in image(12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn azimuth_distance_is_symmetric_and_bounded(a in -1000.0..1000.0f64, b in -1000.0..1000.0f64) {
        let d = azimuth_distance(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!((d - azimuth_distance(b, a)).abs() < 1e-9);
        let w = wrap_degrees(a);
        prop_assert!((0.0..360.0).contains(&w));
    }

    #[test]
    fn renders_stay_in_unit_range(splats in prop::collection::vec(splat(), 1..12), az in 0.0..360.0f64, el in -60.0..60.0f64) {
        let scene = GaussianScene::new(splats).unwrap();
        let pose = CameraPose::free(az, el, 1.2).unwrap();
        prop_assert!(render(&scene, &pose, 16, [1.0; 3]).is_unit_range());
    }

    #[test]
    fn colors_do_not_change_the_active_set(splats in prop::collection::vec(splat(), 1..12), az in 0.0..360.0f64, c in prop::array::uniform3(0.0..=1.0f64)) {
        let pose = CameraPose::free(az, 0.0, 1.2).unwrap();
        let recolored: Vec<Splat> = splats.iter().map(|s| Splat { color: c, ..*s }).collect();
        prop_assert_eq!(active_set_signature(&splats, &pose, 16), active_set_signature(&recolored, &pose, 16));
    }

    #[test]
    fn schedules_preserve_variance(t_max in 1usize..2000) {
        for kind in [ScheduleKind::CosineVp, ScheduleKind::LinearVp] {
            let s = build_schedule(t_max, kind).unwrap();
            let mut prev = f64::INFINITY;
            for t in 0..=t_max {
                let (a, sg) = (s.alpha(t), s.sigma(t));
                prop_assert!((a * a + sg * sg - 1.0).abs() < 1e-12);
                prop_assert!(a <= prev);
                prev = a;
            }
        }
    }
}
