//! Mini-batch AdamW training with on-the-fly symmetry augmentation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::reg_error_root;
use crate::field::DistortionField;
use crate::nn::config::NetworkConfig;
use crate::nn::loss::{LossBreakdown, DEFAULT_LAMBDA_SMO};
use crate::nn::network::{forward_traced, loss_and_gradient, prepare_input, Weights};
use crate::nn::params::{Gradients, NetworkParams};
use crate::nn::tensor::Tensor;
use crate::raster::GridMask;
use crate::synth::{Symmetry, TrainingSample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_smo: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Draw a random element of the eight-fold symmetry group per sample
    /// and epoch.
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 8,
            seed: 0,
            lambda_smo: DEFAULT_LAMBDA_SMO,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augment: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.lambda_smo >= 0.0) {
            return Err(Error::Config("learning_rate must be positive, weight_decay and lambda_smo non-negative".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        match key {
            "epochs" => self.epochs = value.parse().map_err(|e| bad(&e))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|e| bad(&e))?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
            "lambda_smo" => self.lambda_smo = value.parse().map_err(|e| bad(&e))?,
            "beta1" => self.beta1 = value.parse().map_err(|e| bad(&e))?,
            "beta2" => self.beta2 = value.parse().map_err(|e| bad(&e))?,
            "adam_eps" => self.adam_eps = value.parse().map_err(|e| bad(&e))?,
            "augment" => self.augment = value.parse().map_err(|e| bad(&e))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("learning_rate".into(), format!("{:?}", self.learning_rate)),
            ("weight_decay".into(), format!("{:?}", self.weight_decay)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lambda_smo".into(), format!("{:?}", self.lambda_smo)),
            ("beta1".into(), format!("{:?}", self.beta1)),
            ("beta2".into(), format!("{:?}", self.beta2)),
            ("adam_eps".into(), format!("{:?}", self.adam_eps)),
            ("augment".into(), self.augment.to_string()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    /// Mean per-sample root regression error on the validation set.
    pub val_reg_root: Option<f64>,
}

pub const LOG_HEADER: [&str; 9] = [
    "epoch",
    "learning_rate",
    "train_reg",
    "train_smo",
    "train_total",
    "val_reg",
    "val_smo",
    "val_total",
    "val_reg_root",
];

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(LOG_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in log {
        wr.write_record([
            e.epoch.to_string(),
            e.learning_rate.to_string(),
            e.train.reg.to_string(),
            e.train.smo.to_string(),
            e.train.total.to_string(),
            opt(e.val.map(|v| v.reg)),
            opt(e.val.map(|v| v.smo)),
            opt(e.val.map(|v| v.total)),
            opt(e.val_reg_root),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation root error (or
    /// training loss when no validation set is given).
    pub params: NetworkParams,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

struct Prepared {
    input: Tensor,
    mask: Tensor,
    grid: GridMask,
    gt: DistortionField,
}

fn prepare(config: &NetworkConfig, s: &TrainingSample) -> Result<Prepared> {
    let (input, mask) = prepare_input(config, &s.distorted, &s.mask)?;
    let grid = s.mask.to_grid(config.block_size);
    s.gt.check_mask(&grid)?;
    if grid.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Prepared { input, mask, grid, gt: s.gt.clone() })
}

/// Mean losses and mean root error of `params` over `samples`.
pub fn evaluate_loss(
    params: &NetworkParams,
    samples: &[TrainingSample],
    lambda_smo: f64,
) -> Result<(LossBreakdown, f64)> {
    let wt = Weights::from_params(params);
    let per: Vec<(LossBreakdown, f64)> = samples
        .par_iter()
        .map(|s| {
            let p = prepare(&params.config, s)?;
            let est = forward_traced(&params.config, &wt, &p.input, &p.mask)?.field();
            let l = crate::nn::loss::loss_total(&est, &p.gt, &p.grid, lambda_smo)?;
            Ok((l, reg_error_root(&est, &p.gt, &p.grid)?))
        })
        .collect::<Result<_>>()?;
    Ok(mean_losses(&per, lambda_smo))
}

fn mean_losses(per: &[(LossBreakdown, f64)], lambda_smo: f64) -> (LossBreakdown, f64) {
    let n = per.len().max(1) as f64;
    let (mut r, mut s, mut root) = (0.0, 0.0, 0.0);
    for (l, e) in per {
        r += l.reg;
        s += l.smo;
        root += e;
    }
    (LossBreakdown::new(r / n, s / n, lambda_smo), root / n)
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn adamw_step(params: &mut NetworkParams, g: &Gradients, st: &mut AdamState, lr: f64, o: &TrainOptions) {
    st.t += 1;
    let c1 = 1.0 - o.beta1.powi(st.t);
    let c2 = 1.0 - o.beta2.powi(st.t);
    for (k, t) in params.tensors.iter_mut().enumerate() {
        let decay = if t.is_weight() { o.weight_decay } else { 0.0 };
        let (m, v) = (&mut st.m[k], &mut st.v[k]);
        for (i, p) in t.data.iter_mut().enumerate() {
            let gi = g.tensors[k][i];
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
            let step = (m[i] / c1) / ((v[i] / c2).sqrt() + o.adam_eps);
            let x = *p as f64;
            *p = (x - lr * (step + decay * x)) as f32;
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 3;

pub fn train(
    config: &NetworkConfig,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    train_with_progress(config, train_set, val_set, opts, |_| {})
}

/// As [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    config: &NetworkConfig,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    opts: &TrainOptions,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    opts.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let init = NetworkParams::init(config, opts.seed)?;
    if opts.epochs == 0 {
        return Ok(TrainOutcome { params: init, best_epoch: None, log: Vec::new() });
    }
    for s in train_set.iter().chain(val_set) {
        prepare(config, s)?;
    }
    let mut params = init;
    let mut st = AdamState {
        m: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        v: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(7);
    let batches_per_epoch = train_set.len().div_ceil(opts.batch_size);
    let total_steps = batches_per_epoch * opts.epochs;
    let mut step = 0;
    let mut log = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    let mut initial: Option<f64> = None;
    let mut bad_epochs = 0;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let syms: Vec<Symmetry> = order
            .iter()
            .map(|_| {
                if opts.augment {
                    Symmetry::all()[rng.random_range(0..8)]
                } else {
                    Symmetry::IDENTITY
                }
            })
            .collect();
        let lr_epoch = cosine_lr(opts.learning_rate, step, total_steps);
        let (mut sum_reg, mut sum_smo, mut count) = (0.0, 0.0, 0usize);
        let mut nan_epoch = false;
        for (chunk, sym_chunk) in order.chunks(opts.batch_size).zip(syms.chunks(opts.batch_size)) {
            let wt = Weights::from_params(&params);
            let results: Vec<(LossBreakdown, Gradients)> = chunk
                .par_iter()
                .zip(sym_chunk)
                .map(|(&i, &g)| {
                    let s = if g == Symmetry::IDENTITY {
                        prepare(config, &train_set[i])?
                    } else {
                        prepare(config, &g.apply_sample(&train_set[i])?)?
                    };
                    match loss_and_gradient(config, &wt, &s.input, &s.mask, &s.gt, &s.grid, opts.lambda_smo) {
                        Err(Error::NonFiniteActivation(_)) | Err(Error::NonFiniteGradient(_)) => {
                            Ok((LossBreakdown::new(f64::NAN, f64::NAN, opts.lambda_smo), Gradients::zeros_like(&params)))
                        }
                        r => r,
                    }
                })
                .collect::<Result<_>>()?;
            let mut grad = Gradients::zeros_like(&params);
            for (l, g) in &results {
                sum_reg += l.reg;
                sum_smo += l.smo;
                count += 1;
                grad.add_assign(g);
            }
            grad.scale(1.0 / chunk.len() as f64);
            let lr = cosine_lr(opts.learning_rate, step, total_steps);
            step += 1;
            if !grad.is_finite() || results.iter().any(|(l, _)| !l.total.is_finite()) {
                nan_epoch = true;
                continue;
            }
            adamw_step(&mut params, &grad, &mut st, lr, opts);
        }
        let mut train_loss = LossBreakdown::new(sum_reg / count as f64, sum_smo / count as f64, opts.lambda_smo);
        if nan_epoch {
            train_loss.total = f64::NAN;
        }
        let (val, val_root) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, r) = evaluate_loss(&params, val_set, opts.lambda_smo)?;
            (Some(l), Some(r))
        };
        let entry = EpochLog { epoch, learning_rate: lr_epoch, train: train_loss, val, val_reg_root: val_root };
        progress(&entry);
        log.push(entry);

        let first = *initial.get_or_insert(train_loss.total);
        let diverged = !train_loss.total.is_finite() || train_loss.total > DIVERGENCE_FACTOR * first;
        bad_epochs = if diverged { bad_epochs + 1 } else { 0 };
        if bad_epochs >= DIVERGENCE_PATIENCE {
            return Err(Error::DivergenceDetected { epoch, loss: train_loss.total });
        }

        let score = val_root.unwrap_or(train_loss.total);
        if score.is_finite() && params.is_finite() && best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) => (Some(e), p),
        None => (None, params),
    };
    Ok(TrainOutcome { params, best_epoch, log })
}

/// Writes one progress line per epoch.
pub fn print_epoch(out: &mut impl Write, e: &EpochLog) -> std::io::Result<()> {
    match (e.val, e.val_reg_root) {
        (Some(v), Some(r)) => writeln!(
            out,
            "epoch {:>3}  lr {:.2e}  train reg {:.4} smo {:.4}  val reg {:.4} root {:.4}",
            e.epoch, e.learning_rate, e.train.reg, e.train.smo, v.reg, r
        ),
        _ => writeln!(
            out,
            "epoch {:>3}  lr {:.2e}  train reg {:.4} smo {:.4}",
            e.epoch, e.learning_rate, e.train.reg, e.train.smo
        ),
    }
}
