use distfield::nn::loss::loss_total_gradient;
use distfield::nn::network::{forward_traced, loss_and_gradient, prepare_input, Weights};
use distfield::nn::tensor::Tensor;
use distfield::nn::{forward, loss_total, NetworkConfig, NetworkParams};
use distfield::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const KINK_STEP: f64 = 1e-7;
const FLOOR: f64 = 1e-6;

struct Problem {
    config: NetworkConfig,
    input: Tensor,
    mask_channel: Tensor,
    gt: DistortionField,
    grid_mask: GridMask,
}

fn problem(seed: u64) -> Problem {
    let config = NetworkConfig::tiny();
    let n = config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = GrayImage::from_fn(n, n, |x, y| {
        (0.5 + 0.4 * ((x as f64 * 0.7 + y as f64 * 0.3).sin()) + rng.random_range(-0.1..0.1)) as f32
    });
    let mask = FingerMask::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - 15.5, y as f64 - 15.5);
        dx * dx / 196.0 + dy * dy / 144.0 <= 1.0 || x < 16
    });
    let (input, mask_channel) = prepare_input(&config, &image, &mask).unwrap();
    let g = config.grid_side();
    let gt = DistortionField::from_fn(g, g, 16, |_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
    Problem { grid_mask: mask.to_grid(16), config, input, mask_channel, gt }
}

fn loss_and_pattern(p: &Problem, wt: &Weights) -> (f64, Vec<bool>) {
    let trace = forward_traced(&p.config, wt, &p.input, &p.mask_channel).unwrap();
    let l = loss_total(&trace.field(), &p.gt, &p.grid_mask, 1.0).unwrap();
    (l.total, trace.activation_pattern())
}

fn central(p: &Problem, wt: &mut Weights, t: usize, k: usize, eps: f64) -> (f64, bool) {
    let orig = wt.tensors[t][k];
    wt.tensors[t][k] = orig + eps;
    let (lp, pp) = loss_and_pattern(p, wt);
    wt.tensors[t][k] = orig - eps;
    let (lm, pm) = loss_and_pattern(p, wt);
    wt.tensors[t][k] = orig;
    ((lp - lm) / (2.0 * eps), pp == pm)
}

#[test]
fn every_parameter_matches_central_differences() {
    let p = problem(1);
    let params = NetworkParams::init(&p.config, 3).unwrap();
    let mut wt = Weights::from_params(&params);
    let (_, grads) = loss_and_gradient(&p.config, &wt, &p.input, &p.mask_channel, &p.gt, &p.grid_mask, 1.0).unwrap();
    let base_pattern = loss_and_pattern(&p, &wt).1;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    for t in 0..wt.tensors.len() {
        let name = params.tensors[t].name.clone();
        let mut group_worst = 0.0f64;
        for k in 0..wt.tensors[t].len() {
            let (mut num, same) = central(&p, &mut wt, t, k, STEP);
            if !same {
                num = central(&p, &mut wt, t, k, KINK_STEP).0;
            }
            let a = grads.tensors[t][k];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(FLOOR);
            group_worst = group_worst.max(rel);
            checked += 1;
        }
        if group_worst > worst.0 {
            worst = (group_worst, name.clone());
        }
        assert!(group_worst <= 1e-3, "{name}: relative error {group_worst:e}");
    }
    assert_eq!(checked, params.count());
    assert_eq!(base_pattern, loss_and_pattern(&p, &wt).1);
    eprintln!("checked {checked} parameters, worst {:e} in {}", worst.0, worst.1);
}

#[test]
fn zero_parameters_give_zero_field() {
    let config = NetworkConfig::tiny();
    let params = NetworkParams::zeros(&config).unwrap();
    let image = GrayImage::from_fn(32, 32, |x, y| ((x * 7 + y * 3) % 11) as f32 / 11.0);
    let f = forward(&params, &image, &FingerMask::full(32, 32)).unwrap();
    assert_eq!((f.grid_w(), f.grid_h()), (2, 2));
    assert!(f.vectors().iter().all(|v| *v == Vec2::ZERO));
}

#[test]
fn output_grid_is_input_over_sixteen() {
    for (n, base) in [(32, 4), (64, 4), (96, 4)] {
        let config = NetworkConfig { input_size: n, base_channels: base, ..NetworkConfig::tiny() };
        let params = NetworkParams::init(&config, 0).unwrap();
        let f = forward(&params, &GrayImage::filled(n, n, 0.3), &FingerMask::full(n, n)).unwrap();
        assert_eq!((f.grid_w(), f.grid_h()), (n / 16, n / 16));
        assert!(f.is_finite());
    }
    let params = NetworkParams::init(&NetworkConfig::tiny(), 0).unwrap();
    let err = forward(&params, &GrayImage::filled(48, 48, 0.0), &FingerMask::full(48, 48));
    assert!(matches!(err, Err(Error::ShapeMismatch(_))));
}

#[test]
fn output_bias_gradient_has_closed_form() {
    let p = problem(2);
    let params = NetworkParams::init(&p.config, 5).unwrap();
    let wt = Weights::from_params(&params);
    let (_, grads) = loss_and_gradient(&p.config, &wt, &p.input, &p.mask_channel, &p.gt, &p.grid_mask, 1.0).unwrap();
    let est = forward_traced(&p.config, &wt, &p.input, &p.mask_channel).unwrap().field();
    let d = loss_total_gradient(&est, &p.gt, &p.grid_mask, 1.0).unwrap();
    let sx: f64 = d.iter().map(|v| v.x).sum();
    let sy: f64 = d.iter().map(|v| v.y).sum();
    let t = params.tensors.iter().position(|t| t.name == "head.out.bias").unwrap();
    let scale = p.config.output_scale;
    assert!((grads.tensors[t][0] - scale * sx).abs() <= 1e-12 * sx.abs().max(1.0));
    assert!((grads.tensors[t][1] - scale * sy).abs() <= 1e-12 * sy.abs().max(1.0));
}

#[test]
fn targets_outside_mask_do_not_affect_gradients() {
    let mut p = problem(4);
    p.grid_mask.bits = vec![true, false, true, true];
    let params = NetworkParams::init(&p.config, 9).unwrap();
    let wt = Weights::from_params(&params);
    let (l0, g0) = loss_and_gradient(&p.config, &wt, &p.input, &p.mask_channel, &p.gt, &p.grid_mask, 1.0).unwrap();
    p.gt.set(1, 0, Vec2::new(123.0, -77.0));
    let (l1, g1) = loss_and_gradient(&p.config, &wt, &p.input, &p.mask_channel, &p.gt, &p.grid_mask, 1.0).unwrap();
    assert_eq!(l0, l1);
    assert_eq!(g0.tensors, g1.tensors);
}

fn fnv(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn reference_output() -> Vec<f64> {
    let config = NetworkConfig { input_size: 64, ..NetworkConfig::tiny() };
    let params = NetworkParams::init(&config, 2024).unwrap();
    let (image, mask, _) = distfield::synth::synth_fingerprint(6, 64, 64).unwrap();
    forward(&params, &image, &mask).unwrap().to_flat()
}

#[test]
fn forward_is_deterministic_across_thread_counts() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(reference_output);
    let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap().install(reference_output);
    assert_eq!(fnv(&one), fnv(&two));
    assert_eq!(fnv(&one), fnv(&reference_output()));
    assert_eq!(fnv(&one), FROZEN_OUTPUT_HASH, "hash {:#x}", fnv(&one));
}

const FROZEN_OUTPUT_HASH: u64 = 0x279d84281f43fdb9;
