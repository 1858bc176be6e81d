use distfield::field::{dc_residual, upsample_field};
use distfield::geom::rigid_residual;
use distfield::minutiae::sparse_field;
use distfield::tps::max_anchor_error;
use distfield::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn u_kernel(r: f64) -> f64 {
    if r == 0.0 { 0.0 } else { r * r * r.ln() }
}

/// Thin-plate spline in raw pixel coordinates, one channel.
fn oracle_tps(anchors: &[Vec2], values: &[f64], p: Vec2) -> f64 {
    let n = anchors.len();
    let mut a = vec![vec![0.0; n + 3]; n + 3];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = u_kernel((anchors[i] - anchors[j]).norm());
        }
        let row = [1.0, anchors[i].x, anchors[i].y];
        for k in 0..3 {
            a[i][n + k] = row[k];
            a[n + k][i] = row[k];
        }
    }
    let mut b = values.to_vec();
    b.extend([0.0; 3]);
    let x = gauss_solve(a, b);
    let mut s = x[n] + x[n + 1] * p.x + x[n + 2] * p.y;
    for i in 0..n {
        s += x[i] * u_kernel((p - anchors[i]).norm());
    }
    s
}

#[test]
fn tps_unit_square_matches_oracle() {
    let anchors = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0)];
    let values = [Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::ZERO, Vec2::ZERO];
    let c = tps_fit(&anchors, &values, 0.0).unwrap();
    let centre = c.eval(Vec2::new(0.5, 0.5));
    let xs: Vec<f64> = values.iter().map(|v| v.x).collect();
    let expect = oracle_tps(&anchors, &xs, Vec2::new(0.5, 0.5));
    assert!((centre.x - expect).abs() < 1e-9, "{} vs {}", centre.x, expect);
    assert!((expect - 0.25).abs() < 1e-9);
    assert!(centre.y.abs() < 1e-12);
}

#[test]
fn tps_random_configurations_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.random_range(5..20);
        let anchors: Vec<Vec2> =
            (0..n).map(|_| Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))).collect();
        let values: Vec<Vec2> =
            (0..n).map(|_| Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))).collect();
        let c = tps_fit(&anchors, &values, 0.0).unwrap();
        let xs: Vec<f64> = values.iter().map(|v| v.x).collect();
        let ys: Vec<f64> = values.iter().map(|v| v.y).collect();
        for _ in 0..5 {
            let p = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            let got = c.eval(p);
            assert!((got.x - oracle_tps(&anchors, &xs, p)).abs() < 1e-7);
            assert!((got.y - oracle_tps(&anchors, &ys, p)).abs() < 1e-7);
        }
    }
}

#[test]
fn tps_exact_interpolation_hundred_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(10..=60);
        let anchors: Vec<Vec2> =
            (0..n).map(|_| Vec2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0))).collect();
        let values: Vec<Vec2> =
            (0..n).map(|_| Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0))).collect();
        let c = tps_fit(&anchors, &values, 0.0).unwrap();
        assert!(max_anchor_error(&c, &anchors, &values) <= 1e-6);
    }
}

#[test]
fn tps_reproduces_affine_maps() {
    let anchors: Vec<Vec2> = (0..12).map(|k| Vec2::new((k * 37 % 100) as f64, (k * 53 % 90) as f64)).collect();
    let f = |p: Vec2| Vec2::new(0.02 * p.x - 0.01 * p.y + 3.0, 0.005 * p.x + 4.0);
    let values: Vec<Vec2> = anchors.iter().map(|p| f(*p)).collect();
    let c = tps_fit(&anchors, &values, 0.0).unwrap();
    assert!(c.nonlinear_weights().iter().all(|w| w.norm() <= 1e-8));
    let p = Vec2::new(41.0, 17.5);
    assert!((c.eval(p) - f(p)).norm() < 1e-9);
}

#[test]
fn tps_degenerate_anchors_rejected() {
    let line: Vec<Vec2> = (0..5).map(|k| Vec2::new(k as f64, 2.0 * k as f64)).collect();
    let vals = vec![Vec2::ZERO; 5];
    assert!(matches!(tps_fit(&line, &vals, 0.0), Err(Error::SingularSystem(_))));
    let dup = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
    assert!(matches!(tps_fit(&dup, &vals[..4], 0.0), Err(Error::SingularSystem(_))));
}

#[test]
fn tps_dense_translation_and_centres() {
    let c = TpsCoefficients::affine([[0.0, 0.0], [0.0, 0.0]], Vec2::new(3.0, 4.0));
    let f = tps_eval_dense(&c, 5, 4, 16);
    assert!(f.vectors().iter().all(|v| *v == Vec2::new(3.0, 4.0)));
    assert!(tps_eval_dense(&TpsCoefficients::zero(), 3, 3, 16).max_norm() == 0.0);
    let anchors = [Vec2::new(8.0, 8.0), Vec2::new(40.0, 8.0), Vec2::new(8.0, 40.0), Vec2::new(40.0, 40.0)];
    let values = [Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::ZERO, Vec2::ZERO];
    let f = tps_eval_dense(&tps_fit(&anchors, &values, 0.0).unwrap(), 3, 3, 16);
    assert!((f.get(0, 0) - values[0]).norm() < 1e-6);
    assert!((f.get(2, 2) - values[3]).norm() < 1e-6);
}

/// Brute-force sweep of the weighted rigid objective over the angle.
fn sweep_angle(src: &[Vec2], dst: &[Vec2]) -> f64 {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / n);
    let cd = dst.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / n);
    let cost = |phi: f64| -> f64 {
        let (s, c) = phi.sin_cos();
        src.iter()
            .zip(dst)
            .map(|(p, q)| {
                let d = *p - cs;
                (Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y) - (*q - cd)).norm_sq()
            })
            .sum()
    };
    let mut best = (f64::INFINITY, 0.0);
    let mut phi = -std::f64::consts::PI;
    while phi < std::f64::consts::PI {
        let c = cost(phi);
        if c < best.0 {
            best = (c, phi);
        }
        phi += 1e-6;
    }
    best.1
}

#[test]
fn fit_rigid_thirty_degrees_matches_sweep() {
    let src = [Vec2::new(10.0, 5.0), Vec2::new(40.0, 12.0), Vec2::new(22.0, 47.0)];
    let c = src.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / 3.0);
    let rot = RigidTransform::from_angle(30f64.to_radians(), Vec2::ZERO);
    let dst: Vec<Vec2> = src.iter().map(|p| c + rot.rotate(*p - c)).collect();
    let tf = fit_rigid(&src, &dst, &[1.0; 3]).unwrap();
    assert!((tf.angle - 30f64.to_radians()).abs() <= 1e-9);
    assert!((sweep_angle(&src, &dst) - tf.angle).abs() <= 1e-6);
}

#[test]
fn fit_rigid_identity_translation_and_errors() {
    let src = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 1.0), Vec2::new(-2.0, 4.0)];
    let tf = fit_rigid(&src, &src, &[1.0; 3]).unwrap();
    assert!(tf.angle.abs() < 1e-12 && tf.translation.norm() < 1e-12);
    let moved: Vec<Vec2> = src.iter().map(|p| *p + Vec2::new(5.0, 0.0)).collect();
    let tf = fit_rigid(&src, &moved, &[1.0; 3]).unwrap();
    assert!(tf.angle.abs() < 1e-12);
    assert!((tf.translation - Vec2::new(5.0, 0.0)).norm() < 1e-12);
    assert!(rigid_residual(&tf, &src, &moved, &[1.0; 3]) < 1e-20);
    let same = [Vec2::new(1.0, 1.0); 3];
    assert!(matches!(fit_rigid(&same, &same, &[1.0; 3]), Err(Error::DegenerateConfiguration(_))));
    assert!(matches!(fit_rigid(&src, &src[..2], &[1.0; 3]), Err(Error::DimensionMismatch(_))));
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Vec2> {
    (0..n).map(|_| Vec2::new(rng.random_range(0.0..span), rng.random_range(0.0..span))).collect()
}

#[test]
fn fit_rigid_recovers_planted_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(3..30);
        let src = random_points(&mut rng, n, 300.0);
        let phi = rng.random_range(-3.0..3.0);
        let t = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let g = RigidTransform::from_angle(phi, t);
        let dst: Vec<Vec2> = src.iter().map(|p| g.apply(*p)).collect();
        let tf = fit_rigid(&src, &dst, &vec![1.0; src.len()]).unwrap();
        assert!((tf.angle - phi).abs() <= 1e-9);
        assert!((tf.translation - t).norm() <= 1e-7);
    }
}

#[test]
fn sparse_field_vanishes_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = FingerMask::full(256, 256);
    for _ in 0..20 {
        let pts = random_points(&mut rng, 25, 200.0);
        let g = RigidTransform::from_angle(10f64.to_radians(), Vec2::new(8.0, -3.0));
        let normal = MinutiaSet::from_points(pts.clone());
        let distorted = normal.map(|p| g.apply(p));
        let (vecs, _) = sparse_field(&normal, &distorted, &mask).unwrap();
        assert!(vecs.iter().all(|v| v.displacement.norm() <= 1e-6));
        let (vecs, _) = sparse_field(&normal, &normal, &mask).unwrap();
        assert!(vecs.iter().all(|v| v.displacement.norm() <= 1e-12));
    }
}

#[test]
fn sparse_field_matches_normal_equations_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts = random_points(&mut rng, 30, 200.0);
    let f = |p: Vec2| Vec2::new(3.0 * (p.y / 40.0).sin(), 2.0 * (p.x / 55.0).cos());
    let normal = MinutiaSet::from_points(pts.clone());
    let distorted = normal.map(|p| p + f(p));
    let (vecs, _) = sparse_field(&normal, &distorted, &FingerMask::full(256, 256)).unwrap();
    // linearised Gauss-Newton on (angle, tx, ty) about the identity, iterated
    let (mut phi, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let mut jtj = vec![vec![0.0; 3]; 3];
        let mut jtr = vec![0.0; 3];
        for (p, q) in pts.iter().zip(&distorted.points) {
            let (s, c) = phi.sin_cos();
            let r = Vec2::new(c * p.x - s * p.y + tx - q.x, s * p.x + c * p.y + ty - q.y);
            let jx = [-s * p.x - c * p.y, 1.0, 0.0];
            let jy = [c * p.x - s * p.y, 0.0, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += jx[a] * jx[b] + jy[a] * jy[b];
                }
                jtr[a] += jx[a] * r.x + jy[a] * r.y;
            }
        }
        let step = gauss_solve(jtj, jtr);
        phi -= step[0];
        tx -= step[1];
        ty -= step[2];
    }
    let g = RigidTransform::from_angle(phi, Vec2::new(tx, ty));
    for (v, (p, q)) in vecs.iter().zip(pts.iter().zip(&distorted.points)) {
        let expect = g.apply(*p) - *q;
        assert!((v.displacement - expect).norm() < 1e-6);
        assert_eq!(v.anchor, *q);
    }
}

#[test]
fn remove_dc_examples() {
    let mask = GridMask::full(6, 5);
    let f = DistortionField::from_fn(6, 5, 16, |_| Vec2::new(5.0, 0.0));
    assert!(remove_dc(&f, &mask).unwrap().max_norm() < 1e-12);
    let c = Vec2::new(48.0, 40.0);
    let f = DistortionField::from_fn(6, 5, 16, |p| (p - c).perp() * 0.01);
    assert!(remove_dc(&f, &mask).unwrap().max_norm() < 1e-6);
    let empty = GridMask { width: 6, height: 5, bits: vec![false; 30] };
    assert!(matches!(remove_dc(&f, &empty), Err(Error::EmptyMask)));
}

fn random_smooth_field(rng: &mut ChaCha8Rng, gw: usize, gh: usize) -> DistortionField {
    let a: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
    DistortionField::from_fn(gw, gh, 16, |p| {
        Vec2::new(
            a[0] + a[1] * (p.x / 50.0).sin() + a[2] * (p.y / 70.0).cos() + a[3] * p.x * p.y / 1e4,
            a[4] + a[5] * (p.y / 45.0).sin() + a[6] * (p.x / 60.0).cos() + a[7] * p.x / 100.0,
        )
    })
}

#[test]
fn remove_dc_idempotent_hundred_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let f = random_smooth_field(&mut rng, 8, 8);
        let bits: Vec<bool> = (0..64).map(|k| (k % 8 > 1) && (k / 8 < 7)).collect();
        let mask = GridMask { width: 8, height: 8, bits };
        let once = remove_dc(&f, &mask).unwrap();
        let twice = remove_dc(&once, &mask).unwrap();
        for (a, b) in once.vectors().iter().zip(twice.vectors()) {
            assert!((*a - *b).norm() <= 1e-9);
        }
        let (mean, moment) = dc_residual(&once, &mask).unwrap();
        assert!(mean.norm() <= 1e-6 && moment.abs() <= 1e-6);
    }
}

#[test]
fn upsample_then_subsample_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = DistortionField::from_fn(5, 4, 16, |_| Vec2::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)));
    let px = upsample_field(&f, 80, 64).unwrap();
    for j in 0..4 {
        for i in 0..5 {
            let c = f.center(i, j);
            assert!((px.get(c.x as usize, c.y as usize) - f.get(i, j)).norm() < 1e-12);
        }
    }
    let ramp = DistortionField::from_fn(5, 4, 16, |p| Vec2::new((p.x - 8.0) / 16.0, 0.0));
    let px = upsample_field(&ramp, 80, 64).unwrap();
    for x in 8..72 {
        assert!((px.get(x, 30).x - (x as f64 - 8.0) / 16.0).abs() < 1e-6);
    }
}

#[test]
fn rectify_zero_field_is_identity_and_shift_works() {
    let (img, mask, _) = distfield::synth::synth_fingerprint(4, 128, 128).unwrap();
    let (out, m) = rectify(&img, &mask, &DistortionField::zeros(8, 8, 16)).unwrap();
    assert_eq!(out.data(), img.data());
    assert_eq!(m, mask);
    let f = DistortionField::from_fn(8, 8, 16, |_| Vec2::new(16.0, 0.0));
    let (shifted, _) = rectify(&img, &mask, &f).unwrap();
    for y in 0..128 {
        for x in 16..128 {
            assert_eq!(shifted.get(x, y), img.get(x - 16, y));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_residual_invariant_under_common_motion(
        seed in 0u64..1000, phi in -3.0f64..3.0, tx in -40.0f64..40.0, ty in -40.0f64..40.0
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_points(&mut rng, 12, 100.0);
        let dst: Vec<Vec2> = src.iter().map(|p| *p + Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
        let w = vec![1.0; 12];
        let r0 = rigid_residual(&fit_rigid(&src, &dst, &w).unwrap(), &src, &dst, &w);
        let g = RigidTransform::from_angle(phi, Vec2::new(tx, ty));
        let (gs, gd): (Vec<Vec2>, Vec<Vec2>) = src.iter().zip(&dst).map(|(a, b)| (g.apply(*a), g.apply(*b))).unzip();
        let r1 = rigid_residual(&fit_rigid(&gs, &gd, &w).unwrap(), &gs, &gd, &w);
        prop_assert!((r0 - r1).abs() <= 1e-9 * r0.max(1.0));
    }

    #[test]
    fn sparse_field_invariant_to_rigid_motion_of_normal_set(
        seed in 0u64..1000, phi in -3.0f64..3.0, tx in -40.0f64..40.0
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 15, 200.0);
        let normal = MinutiaSet::from_points(pts);
        let distorted = normal.map(|p| p + Vec2::new((p.y / 30.0).sin() * 2.0, (p.x / 40.0).cos()));
        let mask = FingerMask::full(256, 256);
        let (a, _) = sparse_field(&normal, &distorted, &mask).unwrap();
        let g = RigidTransform::from_angle(phi, Vec2::new(tx, 0.0));
        let (b, _) = sparse_field(&normal.map(|p| g.apply(p)), &distorted, &mask).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u.displacement - v.displacement).norm() <= 1e-6);
        }
    }

    #[test]
    fn remove_dc_satisfies_invariants(seed in 0u64..10_000, gw in 2usize..10, gh in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_smooth_field(&mut rng, gw, gh);
        let bits: Vec<bool> = (0..gw * gh).map(|_| rng.random_bool(0.7)).collect();
        prop_assume!(bits.iter().any(|b| *b));
        let mask = GridMask { width: gw, height: gh, bits };
        let r = remove_dc(&f, &mask).unwrap();
        let (mean, moment) = dc_residual(&r, &mask).unwrap();
        prop_assert!(mean.norm() <= 1e-6);
        prop_assert!(moment.abs() <= 1e-6);
    }
}
