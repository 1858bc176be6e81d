use distfield::eval::*;
use distfield::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rotate(v: Vec2, deg: f64) -> Vec2 {
    RigidTransform::from_angle(deg.to_radians(), Vec2::ZERO).rotate(v)
}

fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f64) -> DistortionField {
    DistortionField::from_fn(w, h, 16, |_| Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GridMask {
    let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
    bits[0] = true;
    GridMask { width: w, height: h, bits }
}

#[test]
fn wrong_vector_boundary_pair() {
    let gt = Vec2::new(10.0, 0.0);
    let at44 = rotate(gt, 44.0);
    let at46 = rotate(gt, 46.0);
    let ratio44 = (at44 - gt).norm() / 10.0;
    assert!((ratio44 - 2.0 * 22f64.to_radians().sin()).abs() < 1e-12);
    assert!(ratio44 <= WRONG_RATIO);
    assert!(!is_wrong_vector(at44, gt, DEFAULT_MIN_NORM));
    assert!(is_wrong_vector(at46, gt, DEFAULT_MIN_NORM));
    assert!((angle_between_deg(at46, gt) - 46.0).abs() < 1e-9);
    assert!((angle_between_deg(rotate(gt, -170.0), gt) - 170.0).abs() < 1e-9);
}

#[test]
fn wrong_vector_ratio_and_clamp() {
    let gt = Vec2::new(4.0, 0.0);
    // same direction: ratio 4.7 / 4 passes, 4.9 / 4 fails
    assert!(!is_wrong_vector(Vec2::new(8.7, 0.0), gt, DEFAULT_MIN_NORM));
    assert!(is_wrong_vector(Vec2::new(8.9, 0.0), gt, DEFAULT_MIN_NORM));
    assert!(is_wrong_vector(-gt, gt, DEFAULT_MIN_NORM));
    assert!(!is_wrong_vector(gt, gt, DEFAULT_MIN_NORM));
    // below the clamp only the ratio counts: opposite tiny vectors are fine
    assert!(!is_wrong_vector(Vec2::new(0.1, 0.0), Vec2::new(-0.1, 0.0), DEFAULT_MIN_NORM));
    assert!(is_wrong_vector(Vec2::new(0.1, 0.0), Vec2::new(-0.6, 0.0), DEFAULT_MIN_NORM));
    assert!(!is_wrong_vector(Vec2::ZERO, Vec2::ZERO, DEFAULT_MIN_NORM));
}

#[test]
fn wrong_mask_counts_only_masked_cells() {
    let gt = DistortionField::from_fn(2, 2, 16, |_| Vec2::new(3.0, 0.0));
    let mut est = gt.clone();
    est.set(0, 0, Vec2::new(-3.0, 0.0));
    est.set(1, 1, Vec2::new(-3.0, 0.0));
    let mask = GridMask { width: 2, height: 2, bits: vec![true, true, true, false] };
    let w = wrong_vector_mask(&est, &gt, &mask).unwrap();
    assert_eq!(w.wrong, vec![true, false, false, false]);
    assert!((w.wrong_fraction - 1.0 / 3.0).abs() < 1e-15);
    let empty = GridMask { width: 2, height: 2, bits: vec![false; 4] };
    assert!(matches!(wrong_vector_mask(&est, &gt, &empty), Err(Error::EmptyMask)));
}

#[test]
fn reg_root_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..10), rng.random_range(1..10));
        let est = random_field(&mut rng, w, h, 20.0);
        let gt = random_field(&mut rng, w, h, 20.0);
        let mask = random_mask(&mut rng, w, h);
        let (mut s, mut n) = (0.0, 0.0);
        for j in 0..h {
            for i in 0..w {
                if mask.bits[j * w + i] {
                    let (dx, dy) = (est.get(i, j).x - gt.get(i, j).x, est.get(i, j).y - gt.get(i, j).y);
                    s += (dx * dx + dy * dy).sqrt();
                    n += 1.0;
                }
            }
        }
        let r = reg_error_root(&est, &gt, &mask).unwrap();
        assert!((r - s / n).abs() <= 1e-12 * r.max(1.0));
        assert_eq!(r, reg_error_root(&gt, &est, &mask).unwrap());
    }
}

#[test]
fn bins_match_naive_reference_on_synthetic_samples() {
    let sampler = distfield::synth::PrototypeSampler { magnitude: (10.0, 45.0), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..6 {
        let (s, _) = distfield::synth::generate_sample(seed, 128, 16, &sampler).unwrap();
        let est = DistortionField::from_fn(8, 8, 16, |_| Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)));
        let mask = s.mask.to_grid(16);
        let r = bin_by_distortion(&est, &s.gt, &mask, &DEFAULT_EDGES).unwrap();
        let mut sums = [0.0; NUM_BINS];
        let mut counts = [0usize; NUM_BINS];
        for k in 0..64 {
            if !mask.bits[k] {
                continue;
            }
            let g = s.gt.vectors()[k];
            let e = est.vectors()[k];
            let mag = (g.x * g.x + g.y * g.y).sqrt();
            let b = DEFAULT_EDGES.windows(2).position(|w| mag >= w[0] && mag < w[1]).unwrap();
            sums[b] += ((e.x - g.x).powi(2) + (e.y - g.y).powi(2)).sqrt();
            counts[b] += 1;
        }
        assert_eq!(r.counts, counts.to_vec());
        for (k, m) in r.per_bin_mean().iter().enumerate() {
            match m {
                Some(v) => assert!((v - sums[k] / counts[k] as f64).abs() <= 1e-12),
                None => assert_eq!(counts[k], 0),
            }
        }
        assert_eq!(r.total_count(), mask.count());
        let overall = reg_error_root(&est, &s.gt, &mask).unwrap();
        assert!((r.overall_mean().unwrap() - overall).abs() <= 1e-9);
    }
}

#[test]
fn bin_examples() {
    let gt = DistortionField::zeros(3, 2, 16);
    let est = DistortionField::from_fn(3, 2, 16, |_| Vec2::new(1.0, 0.0));
    let r = bin_by_distortion(&est, &gt, &GridMask::full(3, 2), &DEFAULT_EDGES).unwrap();
    assert_eq!(r.counts, vec![6, 0, 0, 0, 0, 0, 0]);
    assert_eq!(r.per_bin_mean()[1..], [None; 6]);
    let edges = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, f64::INFINITY];
    let mut gt = DistortionField::zeros(2, 1, 16);
    gt.set(0, 0, Vec2::new(1.0, 0.0));
    gt.set(1, 0, Vec2::new(0.0, 100.0));
    let r = bin_by_distortion(&gt, &gt, &GridMask::full(2, 1), &edges).unwrap();
    assert_eq!(r.counts, vec![1, 0, 0, 0, 0, 0, 1]);
    assert!(matches!(bin_by_distortion(&gt, &gt, &GridMask::full(2, 1), &edges[..7]), Err(Error::BadEdges(_))));
}

fn stripes(n: usize) -> GrayImage {
    GrayImage::from_fn(n, n, |x, y| (0.5 + 0.5 * ((x as f64 * 0.6 + y as f64 * 0.25).sin())) as f32)
}

#[test]
fn ncc_examples() {
    let a = stripes(160);
    let full = FingerMask::full(160, 160);
    let s = proxy_match_score(&a, &a, &full, &full).unwrap();
    assert!(!s.empty_overlap);
    assert!((s.score - 1.0).abs() < 1e-12);
    let inv = GrayImage::from_fn(160, 160, |x, y| 1.0 - a.get(x, y));
    assert!((proxy_match_score(&a, &inv, &full, &full).unwrap().score + 1.0).abs() < 1e-9);
    let small = stripes(100);
    let fs = FingerMask::full(100, 100);
    let e = proxy_match_score(&small, &small, &fs, &fs).unwrap();
    assert!(e.empty_overlap && e.score == 0.0);
    assert!(!proxy_match_score_with(&small, &small, &fs, &fs, 16).unwrap().empty_overlap);
    assert!(matches!(proxy_match_score(&a, &small, &full, &fs), Err(Error::DimensionMismatch(_))));
}

fn report(seed: u64, rng: &mut ChaCha8Rng, with_pca: bool) -> SampleReport {
    let est = random_field(rng, 4, 4, 8.0);
    let gt = random_field(rng, 4, 4, 25.0);
    let mask = random_mask(rng, 4, 4);
    SampleReport {
        seed,
        reg_root: reg_error_root(&est, &gt, &mask).unwrap(),
        bins: bin_by_distortion(&est, &gt, &mask, &DEFAULT_EDGES).unwrap(),
        wrong_fraction: wrong_vector_mask(&est, &gt, &mask).unwrap().wrong_fraction,
        ncc_before: rng.random_range(-1.0..1.0),
        ncc_after: rng.random_range(-1.0..1.0),
        empty_overlap: false,
        pca: with_pca.then(|| (1.5, bin_by_distortion(&gt, &gt, &mask, &DEFAULT_EDGES).unwrap())),
    }
}

#[test]
fn report_round_trip_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[], dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.lines().next().unwrap(), summary_header().join(","));
    assert!(read_summary(&dir.path().join("summary.csv")).unwrap().is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reports: Vec<SampleReport> = (0..5).map(|s| report(s * 7, &mut rng, true)).collect();
    emit_report(&reports[..1], dir.path()).unwrap();
    assert_eq!(read_summary(&dir.path().join("summary.csv")).unwrap().len(), 1);
    emit_report(&reports, dir.path()).unwrap();
    let back = read_summary(&dir.path().join("summary.csv")).unwrap();
    for (r, b) in reports.iter().zip(&back) {
        assert_eq!(*b, (r.seed, r.reg_root, r.wrong_fraction, r.ncc_before, r.ncc_after));
    }
    let bins = std::fs::read_to_string(dir.path().join("bins.csv")).unwrap();
    assert_eq!(bins.lines().next().unwrap(), BINS_HEADER.join(","));
    assert_eq!(bins.lines().count(), 1 + NUM_BINS);
    let (reg, pca) = pooled_bins(&reports).unwrap();
    assert_eq!(reg.unwrap().total_count(), reports.iter().map(|r| r.bins.total_count()).sum::<usize>());
    assert!(pca.is_some());
}

#[test]
fn evaluate_sample_with_ground_truth_is_perfect_for_zero_field() {
    let (s, _) = distfield::synth::generate_sample(11, 128, 16, &Default::default()).unwrap();
    let params = distfield::nn::NetworkParams::zeros(&distfield::nn::NetworkConfig {
        base_channels: 4,
        ..Default::default()
    })
    .unwrap();
    let settings = EvalSettings { ncc_erosion: 16, ..Default::default() };
    let r = evaluate_sample(&params, &s, 11, None, &settings).unwrap();
    let zero_root = reg_error_root(&DistortionField::zeros(8, 8, 16), &s.gt, &s.mask.to_grid(16)).unwrap();
    assert!((r.reg_root - zero_root).abs() < 1e-12);
    assert_eq!(r.ncc_before, r.ncc_after);
    assert!(r.pca.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrong_mask_invariant_to_common_scaling(seed in 0u64..100_000, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = random_field(&mut rng, 5, 5, 10.0);
        let gt = random_field(&mut rng, 5, 5, 10.0);
        let mask = GridMask::full(5, 5);
        let a = wrong_vector_mask(&est, &gt, &mask).unwrap();
        let b = wrong_vector_mask(&est.scaled(s), &gt.scaled(s), &mask).unwrap();
        for k in 0..25 {
            let m = est.vectors()[k].norm().min(gt.vectors()[k].norm());
            if m >= DEFAULT_MIN_NORM && m * s >= DEFAULT_MIN_NORM {
                prop_assert_eq!(a.wrong[k], b.wrong[k]);
            }
        }
    }

    #[test]
    fn overall_mean_is_weighted_bin_mean(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = random_field(&mut rng, 6, 6, 10.0);
        let gt = random_field(&mut rng, 6, 6, 30.0);
        let mask = random_mask(&mut rng, 6, 6);
        let r = bin_by_distortion(&est, &gt, &mask, &DEFAULT_EDGES).unwrap();
        let weighted: f64 = r.per_bin_mean().iter().zip(&r.counts)
            .filter_map(|(m, c)| m.map(|m| m * *c as f64)).sum::<f64>() / r.total_count() as f64;
        prop_assert!((weighted - reg_error_root(&est, &gt, &mask).unwrap()).abs() <= 1e-9);
        prop_assert!(r.per_bin_mean().iter().flatten().all(|m| *m >= 0.0));
    }
}
