use super::*;
use crate::rng::Rng;
use crate::scene::{logit, Splat};

fn pattern(n: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let f: Vec<[f64; 4]> = (0..3).map(|_| [rng.uniform_range(1.0, 4.0), rng.uniform_range(1.0, 4.0), rng.uniform(), rng.uniform()]).collect();
    Image::from_fn(n, n, |x, y, c| {
        let [fx, fy, px, py] = f[c];
        let (u, v) = (x as f64 / n as f64, y as f64 / n as f64);
        let s = libm::sin(core::f64::consts::TAU * (fx * u + px)) * libm::cos(core::f64::consts::TAU * (fy * v + py));
        let block = if (x / 4 + y / 4) % 2 == 0 { 0.15 } else { -0.15 };
        (0.5 + 0.3 * s + block).clamp(0.0, 1.0)
    })
}

fn noisy(img: &Image, amp: f64, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let data = img.data().iter().map(|v| (v + amp * rng.normal()).clamp(0.0, 1.0)).collect();
    Image::new(img.width(), img.height(), data).unwrap()
}

#[test]
fn psnr_cap_and_arithmetic() {
    let a = pattern(16, 1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    let b = Image::filled(4, 4, [0.5; 3]);
    let c = Image::filled(4, 4, [0.6; 3]);
    assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&b, &pattern(8, 1)).is_err());
}

#[test]
fn psnr_matches_definition() {
    for seed in 0..10 {
        let a = pattern(24, seed);
        let b = noisy(&a, 0.1, seed + 100);
        let mut s = 0.0;
        for y in 0..24 {
            for x in 0..24 {
                for c in 0..3 {
                    s += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
                }
            }
        }
        let expect = 10.0 * libm::log10(1.0 / (s / (24.0 * 24.0 * 3.0)));
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-10);
    }
}

/// Direct evaluation of the windowed SSIM formula, one window at a time.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (la, lb) = (a.luma(), b.luma());
    let w = a.width();
    let k = gaussian_kernel(11, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height() - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let p = (y0 + j) * w + x0 + i;
                    ma += k[i] * k[j] * la[p];
                    mb += k[i] * k[j] * lb[p];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let p = (y0 + j) * w + x0 + i;
                    va += k[i] * k[j] * (la[p] - ma).powi(2);
                    vb += k[i] * k[j] * (lb[p] - mb).powi(2);
                    cov += k[i] * k[j] * (la[p] - ma) * (lb[p] - mb);
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_windowed_oracle() {
    for seed in 0..5 {
        let a = pattern(20, seed);
        let b = noisy(&a, 0.15, seed);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-8);
    }
}

#[test]
fn ssim_identity_inversion_and_size() {
    let a = pattern(32, 3);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let inv = a.map(|v| 1.0 - v);
    assert!(ssim(&a, &inv).unwrap() < 0.0);
    assert!(ssim(&pattern(10, 1), &pattern(10, 2)).is_err());
}

#[test]
fn proxy_zero_on_equal_and_symmetric() {
    let a = pattern(32, 4);
    let b = noisy(&a, 0.1, 9);
    assert_eq!(perceptual_proxy(&a, &a, 32).unwrap(), 0.0);
    assert_eq!(perceptual_proxy(&a, &b, 16).unwrap(), perceptual_proxy(&b, &a, 16).unwrap());
    assert!(perceptual_proxy(&a, &b, 32).unwrap() > 0.0);
    assert!(perceptual_proxy(&a, &b, 12).is_err());
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let r = libm::ceil(3.0 * sigma) as usize;
    let k = gaussian_kernel(2 * r + 1, sigma);
    let n = img.width() as isize;
    let at = |x: isize, y: isize, c: usize| img.get(x.clamp(0, n - 1) as usize, y.clamp(0, n - 1) as usize, c);
    let tmp = Image::from_fn(img.width(), img.height(), |x, y, c| {
        (0..k.len()).map(|i| k[i] * at(x as isize + i as isize - r as isize, y as isize, c)).sum()
    });
    let at = |x: isize, y: isize, c: usize| tmp.get(x.clamp(0, n - 1) as usize, y.clamp(0, n - 1) as usize, c);
    Image::from_fn(img.width(), img.height(), |x, y, c| {
        (0..k.len()).map(|i| k[i] * at(x as isize, y as isize + i as isize - r as isize, c)).sum()
    })
}

#[test]
fn proxy_grows_with_blur() {
    let a = pattern(64, 5);
    let scores: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&s| perceptual_proxy(&a, &gaussian_blur(&a, s), 32).unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] > w[0]), "{scores:?}");
}

fn random_points(rng: &mut Rng, n: usize, spread: f64) -> PointSet {
    PointSet::new((0..n).map(|_| [rng.normal() * spread, rng.normal() * spread, rng.uniform() * spread]).collect()).unwrap()
}

fn brute_nn(q: &[f64; 3], b: &PointSet) -> f64 {
    b.points()
        .iter()
        .map(|p| libm::sqrt((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn geometry_matches_brute_force() {
    let mut rng = Rng::new(77);
    for _ in 0..50 {
        let (n, m) = (1 + rng.below(200), 1 + rng.below(200));
        let (sa, sb) = (rng.uniform_range(0.05, 2.0), rng.uniform_range(0.05, 2.0));
        let a = random_points(&mut rng, n, sa);
        let b = random_points(&mut rng, m, sb);
        let ab: f64 = a.points().iter().map(|q| brute_nn(q, &b)).sum::<f64>() / n as f64;
        let ba: f64 = b.points().iter().map(|q| brute_nn(q, &a)).sum::<f64>() / m as f64;
        assert_eq!(chamfer(&a, &b).unwrap(), (ab + ba) / 2.0);
        let p = a.points().iter().filter(|q| brute_nn(q, &b) <= 0.05).count() as f64 / n as f64;
        let r = b.points().iter().filter(|q| brute_nn(q, &a) <= 0.05).count() as f64 / m as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        assert_eq!(fscore(&a, &b, DEFAULT_FSCORE_TAU).unwrap(), f);
    }
}

#[test]
fn geometry_trivial_cases() {
    let a = PointSet::new(vec![[0.0; 3]]).unwrap();
    let b = PointSet::new(vec![[1.0, 0.0, 0.0]]).unwrap();
    assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    assert_eq!(fscore(&a, &a, 0.05).unwrap(), 1.0);
    assert_eq!(fscore(&a, &b, 0.05).unwrap(), 0.0);
    let empty = PointSet::new(vec![]).unwrap();
    assert!(chamfer(&a, &empty).is_err());
    assert!(fscore(&empty, &a, 0.05).is_err());
}

#[test]
fn normalization_contract() {
    let mut rng = Rng::new(5);
    let a = random_points(&mut rng, 100, 0.7);
    let n = normalize_points(&a).unwrap();
    let max_abs = n.points().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(max_abs, 1.0);
    let widest = (0..3)
        .max_by(|&i, &j| {
            let ext = |k: usize| {
                let v = a.points().iter().map(|p| p[k]);
                v.clone().fold(f64::NEG_INFINITY, f64::max) - v.fold(f64::INFINITY, f64::min)
            };
            ext(i).partial_cmp(&ext(j)).unwrap()
        })
        .unwrap();
    let col: Vec<f64> = n.points().iter().map(|p| p[widest]).collect();
    assert_eq!(col.iter().copied().fold(f64::INFINITY, f64::min), -1.0);
    assert_eq!(col.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
    let again = normalize_points(&n).unwrap();
    for (p, q) in n.points().iter().zip(again.points()) {
        assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-12));
    }
    let scaled = PointSet::new(a.points().iter().map(|p| [p[0] * 5.0, p[1] * 5.0, p[2] * 5.0]).collect()).unwrap();
    for (p, q) in normalize_points(&scaled).unwrap().points().iter().zip(n.points()) {
        assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-12));
    }
    let same = PointSet::new(vec![[2.0, 3.0, 4.0]; 3]).unwrap();
    assert_eq!(normalize_points(&same).unwrap().points(), &[[0.0; 3]; 3]);
}

fn splat(mean: [f64; 3], opacity_logit: f64) -> Splat {
    Splat { mean, rotation: [1.0, 0.0, 0.0, 0.0], scale: [0.05, 0.02, 0.03], opacity_logit, color: [0.5; 3] }
}

#[test]
fn sampling_stays_near_the_splat() {
    let s = [splat([0.3, -0.2, 0.1], 1.0)];
    let pts = sample_points(&s, 5000, &mut Rng::new(2)).unwrap();
    // Per sample, P(some axis beyond 4σ) ≈ 1.9e-4.
    let outside = pts
        .points()
        .iter()
        .filter(|p| {
            let z = [(p[0] - 0.3) / 0.05, (p[1] + 0.2) / 0.02, (p[2] - 0.1) / 0.03];
            z.iter().any(|v| v.abs() > 4.0)
        })
        .count();
    assert!(outside <= 5, "{outside}");
    assert_eq!(pts, sample_points(&s, 5000, &mut Rng::new(2)).unwrap());
}

#[test]
fn zero_weight_splats_are_never_sampled() {
    let s = [splat([5.0, 5.0, 5.0], -1e3), splat([0.0; 3], logit(0.5)), splat([-5.0; 3], -1e3)];
    let pts = sample_points(&s, 2000, &mut Rng::new(1)).unwrap();
    assert!(pts.points().iter().all(|p| p.iter().all(|v| v.abs() < 1.0)));
    assert!(sample_points(&s[..1], 10, &mut Rng::new(1)).is_err());
}

#[test]
fn edge_map_matches_a_direct_sobel() {
    let a = pattern(16, 8);
    let e = edge_map(&a, 16).unwrap();
    let (x, y, c) = (7, 5, 1);
    let p = |dx: isize, dy: isize| a.get((x as isize + dx) as usize, (y as isize + dy) as usize, c);
    let w = [0.25, 0.5, 0.25];
    let gx: f64 = (0..3).map(|i| w[i] * 0.5 * (p(1, i as isize - 1) - p(-1, i as isize - 1))).sum();
    let gy: f64 = (0..3).map(|i| w[i] * 0.5 * (p(i as isize - 1, 1) - p(i as isize - 1, -1))).sum();
    let want = libm::sqrt(gx * gx + gy * gy + 1e-6);
    assert!((e[(y * 16 + x) * 3 + c] - want).abs() < 1e-12);
    let flat = edge_map(&Image::filled(8, 8, [0.3; 3]), 8).unwrap();
    assert!(flat.iter().all(|v| (v - 1e-3).abs() < 1e-12));
    assert_eq!(edge_map(&pattern(32, 1), 16).unwrap().len(), 16 * 16 * 3);
}
