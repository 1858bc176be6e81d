//! Root regression error, distortion-magnitude binning, the wrong-vector
//! rule, an image-correlation matching proxy and CSV reports.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{rectify, DistortionField};
use crate::geom::Vec2;
use crate::nn::{forward, NetworkParams};
use crate::pca::{pca_oracle_rectify, PcaModel};
use crate::raster::{check_same_size, FingerMask, GrayImage, GridMask};
use crate::synth::TrainingSample;

/// Mean over in-mask cells of the per-cell error norm.
pub fn reg_error_root(est: &DistortionField, gt: &DistortionField, mask: &GridMask) -> Result<f64> {
    est.check_grid(gt)?;
    est.check_mask(mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let s: f64 = est
        .vectors()
        .iter()
        .zip(gt.vectors())
        .zip(&mask.bits)
        .filter(|(_, m)| **m)
        .map(|((a, b), _)| (*a - *b).norm())
        .sum();
    Ok(s / n as f64)
}

pub const NUM_BINS: usize = 7;
pub const DEFAULT_EDGES: [f64; NUM_BINS + 1] = [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, f64::INFINITY];

pub fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() != NUM_BINS + 1 {
        return Err(Error::BadEdges(format!("need {} edges, got {}", NUM_BINS + 1, edges.len())));
    }
    if edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadEdges(format!("edges must be strictly increasing: {edges:?}")));
    }
    Ok(())
}

/// Per-bin error sums and counts; bins are `[edge_k, edge_{k+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedErrorReport {
    pub edges: Vec<f64>,
    pub sums: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BinnedErrorReport {
    pub fn empty(edges: &[f64]) -> Result<Self> {
        check_edges(edges)?;
        Ok(BinnedErrorReport { edges: edges.to_vec(), sums: vec![0.0; NUM_BINS], counts: vec![0; NUM_BINS] })
    }

    /// `None` for empty bins.
    pub fn per_bin_mean(&self) -> Vec<Option<f64>> {
        self.sums.iter().zip(&self.counts).map(|(s, c)| (*c > 0).then(|| s / *c as f64)).collect()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn overall_mean(&self) -> Option<f64> {
        let n = self.total_count();
        (n > 0).then(|| self.sums.iter().sum::<f64>() / n as f64)
    }

    /// Pools cells of two reports with identical edges.
    pub fn merge(&mut self, other: &BinnedErrorReport) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::BadEdges("cannot merge reports with different edges".into()));
        }
        self.sums.iter_mut().zip(&other.sums).for_each(|(a, b)| *a += b);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn bin_of(&self, magnitude: f64) -> Option<usize> {
        (0..NUM_BINS).find(|&k| magnitude >= self.edges[k] && magnitude < self.edges[k + 1])
    }
}

/// Assigns every in-mask cell to a bin by `|gt|` and accumulates its error
/// norm. Cells outside all bins are dropped.
pub fn bin_by_distortion(
    est: &DistortionField,
    gt: &DistortionField,
    mask: &GridMask,
    edges: &[f64],
) -> Result<BinnedErrorReport> {
    est.check_grid(gt)?;
    est.check_mask(mask)?;
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let mut r = BinnedErrorReport::empty(edges)?;
    for ((e, g), m) in est.vectors().iter().zip(gt.vectors()).zip(&mask.bits) {
        if !*m {
            continue;
        }
        if let Some(k) = r.bin_of(g.norm()) {
            r.sums[k] += (*e - *g).norm();
            r.counts[k] += 1;
        }
    }
    Ok(r)
}

pub const WRONG_ANGLE_DEG: f64 = 45.0;
pub const WRONG_RATIO: f64 = 1.2;
pub const DEFAULT_MIN_NORM: f64 = 0.5;

/// Angle between two vectors in degrees, in `[0, 180]`.
pub fn angle_between_deg(a: Vec2, b: Vec2) -> f64 {
    a.cross(b).atan2(a.dot(b)).abs().to_degrees()
}

/// Wrong when the directions differ by more than 45° or the difference norm
/// exceeds 1.2 times the shorter vector. When the shorter vector is below
/// `min_norm` only the ratio test applies, with the denominator clamped.
pub fn is_wrong_vector(est: Vec2, gt: Vec2, min_norm: f64) -> bool {
    let m = est.norm().min(gt.norm());
    let ratio = (est - gt).norm() / m.max(min_norm);
    if ratio > WRONG_RATIO {
        return true;
    }
    m >= min_norm && angle_between_deg(est, gt) > WRONG_ANGLE_DEG
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrongVectors {
    pub grid_w: usize,
    pub grid_h: usize,
    /// True for in-mask cells judged wrong.
    pub wrong: Vec<bool>,
    pub wrong_fraction: f64,
}

pub fn wrong_vector_mask(est: &DistortionField, gt: &DistortionField, mask: &GridMask) -> Result<WrongVectors> {
    wrong_vector_mask_with(est, gt, mask, DEFAULT_MIN_NORM)
}

pub fn wrong_vector_mask_with(
    est: &DistortionField,
    gt: &DistortionField,
    mask: &GridMask,
    min_norm: f64,
) -> Result<WrongVectors> {
    est.check_grid(gt)?;
    est.check_mask(mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let wrong: Vec<bool> = est
        .vectors()
        .iter()
        .zip(gt.vectors())
        .zip(&mask.bits)
        .map(|((e, g), m)| *m && is_wrong_vector(*e, *g, min_norm))
        .collect();
    let k = wrong.iter().filter(|w| **w).count();
    Ok(WrongVectors { grid_w: est.grid_w(), grid_h: est.grid_h(), wrong, wrong_fraction: k as f64 / n as f64 })
}

pub const DEFAULT_NCC_EROSION: usize = 3 * crate::field::BLOCK_SIZE;
pub const MIN_OVERLAP_PIXELS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchScore {
    pub score: f64,
    /// Fewer than [`MIN_OVERLAP_PIXELS`] pixels survived; `score` is 0.
    pub empty_overlap: bool,
}

pub fn proxy_match_score(a: &GrayImage, b: &GrayImage, mask_a: &FingerMask, mask_b: &FingerMask) -> Result<MatchScore> {
    proxy_match_score_with(a, b, mask_a, mask_b, DEFAULT_NCC_EROSION)
}

/// Normalised cross-correlation over the intersection of both masks eroded
/// by `erosion` pixels.
pub fn proxy_match_score_with(
    a: &GrayImage,
    b: &GrayImage,
    mask_a: &FingerMask,
    mask_b: &FingerMask,
    erosion: usize,
) -> Result<MatchScore> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} vs {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    check_same_size(a, mask_a)?;
    check_same_size(b, mask_b)?;
    let region = mask_a.intersect(mask_b)?.erode(erosion);
    let n = region.count();
    if n < MIN_OVERLAP_PIXELS {
        return Ok(MatchScore { score: 0.0, empty_overlap: true });
    }
    let pick = |img: &GrayImage| -> Vec<f64> {
        img.data().iter().zip(region.bits()).filter(|(_, m)| **m).map(|(v, _)| *v as f64).collect()
    };
    let (xa, xb) = (pick(a), pick(b));
    let ma = xa.iter().sum::<f64>() / n as f64;
    let mb = xb.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (u, v) in xa.iter().zip(&xb) {
        let (du, dv) = (u - ma, v - mb);
        sab += du * dv;
        saa += du * du;
        sbb += dv * dv;
    }
    let den = (saa * sbb).sqrt();
    let score = if den > 0.0 { (sab / den).clamp(-1.0, 1.0) } else { 0.0 };
    Ok(MatchScore { score, empty_overlap: false })
}

/// Metrics of one evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleReport {
    pub seed: u64,
    pub reg_root: f64,
    pub bins: BinnedErrorReport,
    pub wrong_fraction: f64,
    pub ncc_before: f64,
    pub ncc_after: f64,
    pub empty_overlap: bool,
    /// Root error and bins of the PCA projection oracle, when evaluated.
    pub pca: Option<(f64, BinnedErrorReport)>,
}

pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = vec!["seed".into(), "reg_root".into()];
    h.extend((1..=NUM_BINS).map(|k| format!("bin{k}_mean")));
    h.extend(["wrong_fraction", "ncc_before", "ncc_after", "empty_overlap", "pca_reg_root"].map(String::from));
    h
}

pub const BINS_HEADER: [&str; 7] = ["bin", "lower", "upper", "cells", "regressor_mean", "pca_cells", "pca_mean"];

/// Writes `summary.csv` (one row per sample) and `bins.csv` (pooled over
/// samples) into `dir`.
pub fn emit_report(reports: &[SampleReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut wr = csv::Writer::from_path(dir.join("summary.csv"))?;
    wr.write_record(summary_header())?;
    for r in reports {
        let mut row = vec![r.seed.to_string(), r.reg_root.to_string()];
        row.extend(r.bins.per_bin_mean().into_iter().map(fmt_opt));
        row.push(r.wrong_fraction.to_string());
        row.push(r.ncc_before.to_string());
        row.push(r.ncc_after.to_string());
        row.push(r.empty_overlap.to_string());
        row.push(fmt_opt(r.pca.as_ref().map(|p| p.0)));
        wr.write_record(&row)?;
    }
    wr.flush()?;

    let (reg, pca) = pooled_bins(reports)?;
    let edges = reg.as_ref().map(|r| r.edges.clone()).unwrap_or_else(|| DEFAULT_EDGES.to_vec());
    let mut wr = csv::Writer::from_path(dir.join("bins.csv"))?;
    wr.write_record(BINS_HEADER)?;
    for k in 0..NUM_BINS {
        let cell = |b: &Option<BinnedErrorReport>| -> (String, String) {
            match b {
                Some(b) => (b.counts[k].to_string(), fmt_opt(b.per_bin_mean()[k])),
                None => (String::new(), String::new()),
            }
        };
        let (rc, rm) = cell(&reg);
        let (pc, pm) = cell(&pca);
        wr.write_record([(k + 1).to_string(), edges[k].to_string(), edges[k + 1].to_string(), rc, rm, pc, pm])?;
    }
    wr.flush()?;
    Ok(())
}

/// Bins pooled over all reports, for the regressor and (if every report has
/// one) the PCA oracle.
pub fn pooled_bins(reports: &[SampleReport]) -> Result<(Option<BinnedErrorReport>, Option<BinnedErrorReport>)> {
    let mut reg: Option<BinnedErrorReport> = None;
    let mut pca: Option<BinnedErrorReport> = None;
    let all_pca = !reports.is_empty() && reports.iter().all(|r| r.pca.is_some());
    for r in reports {
        match &mut reg {
            Some(acc) => acc.merge(&r.bins)?,
            None => reg = Some(r.bins.clone()),
        }
        if let (true, Some((_, b))) = (all_pca, &r.pca) {
            match &mut pca {
                Some(acc) => acc.merge(b)?,
                None => pca = Some(b.clone()),
            }
        }
    }
    Ok((reg, pca))
}

/// Parses a `summary.csv` back into `(seed, reg_root, wrong_fraction,
/// ncc_before, ncc_after)` rows.
pub fn read_summary(path: &Path) -> Result<Vec<(u64, f64, f64, f64, f64)>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let parse = |s: Option<&str>| -> Result<f64> {
        s.ok_or_else(|| Error::Format("short summary row".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("summary: {e}")))
    };
    for rec in rd.records() {
        let rec = rec?;
        let seed = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad seed".into()))?;
        let base = 2 + NUM_BINS;
        out.push((seed, parse(rec.get(1))?, parse(rec.get(base))?, parse(rec.get(base + 1))?, parse(rec.get(base + 2))?));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub edges: Vec<f64>,
    pub ncc_erosion: usize,
    pub wrong_min_norm: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { edges: DEFAULT_EDGES.to_vec(), ncc_erosion: DEFAULT_NCC_EROSION, wrong_min_norm: DEFAULT_MIN_NORM }
    }
}

/// Runs the regressor on one sample and scores the estimate, the
/// rectified image and (optionally) the PCA projection oracle.
pub fn evaluate_sample(
    params: &NetworkParams,
    sample: &TrainingSample,
    seed: u64,
    pca: Option<&PcaModel>,
    settings: &EvalSettings,
) -> Result<SampleReport> {
    let est = forward(params, &sample.distorted, &sample.mask)?;
    let grid = sample.mask.to_grid(est.block_size());
    let gt = &sample.gt;
    let reg_root = reg_error_root(&est, gt, &grid)?;
    let bins = bin_by_distortion(&est, gt, &grid, &settings.edges)?;
    let wrong = wrong_vector_mask_with(&est, gt, &grid, settings.wrong_min_norm)?;
    let (rect, rect_mask) = rectify(&sample.distorted, &sample.mask, &est)?;
    let before =
        proxy_match_score_with(&sample.distorted, &sample.normal, &sample.mask, &sample.normal_mask, settings.ncc_erosion)?;
    let after = proxy_match_score_with(&rect, &sample.normal, &rect_mask, &sample.normal_mask, settings.ncc_erosion)?;
    let pca = match pca {
        Some(m) => {
            let oracle = pca_oracle_rectify(m, gt)?;
            Some((reg_error_root(&oracle, gt, &grid)?, bin_by_distortion(&oracle, gt, &grid, &settings.edges)?))
        }
        None => None,
    };
    Ok(SampleReport {
        seed,
        reg_root,
        bins,
        wrong_fraction: wrong.wrong_fraction,
        ncc_before: before.score,
        ncc_after: after.score,
        empty_overlap: before.empty_overlap || after.empty_overlap,
        pca,
    })
}
