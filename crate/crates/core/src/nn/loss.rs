//! Masked regression loss, smoothness loss and their gradients.

use crate::error::{Error, Result};
use crate::field::DistortionField;
use crate::geom::Vec2;
use crate::raster::GridMask;

pub const DEFAULT_LAMBDA_SMO: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reg: f64,
    pub smo: f64,
    pub total: f64,
    pub lambda_smo: f64,
}

impl LossBreakdown {
    pub fn new(reg: f64, smo: f64, lambda_smo: f64) -> Self {
        LossBreakdown { reg, smo, total: reg + lambda_smo * smo, lambda_smo }
    }
}

/// Squared error summed over in-mask cells (both components), divided by
/// the number of in-mask cells.
pub fn loss_reg(est: &DistortionField, gt: &DistortionField, mask: &GridMask) -> Result<f64> {
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
        .map(|((a, b), _)| (*a - *b).norm_sq())
        .sum();
    Ok(s / n as f64)
}

fn check_smo(est: &DistortionField) -> Result<()> {
    if est.grid_w() < 2 || est.grid_h() < 2 {
        return Err(Error::GridTooSmall { width: est.grid_w(), height: est.grid_h() });
    }
    Ok(())
}

/// Forward differences along both grid axes with a replicated border (the
/// difference leaving the grid is zero), squared and averaged over cells.
pub fn loss_smo(est: &DistortionField) -> Result<f64> {
    check_smo(est)?;
    let (w, h) = (est.grid_w(), est.grid_h());
    let mut s = 0.0;
    for j in 0..h {
        for i in 0..w {
            let v = est.get(i, j);
            if i + 1 < w {
                s += (est.get(i + 1, j) - v).norm_sq();
            }
            if j + 1 < h {
                s += (est.get(i, j + 1) - v).norm_sq();
            }
        }
    }
    Ok(s / (w * h) as f64)
}

pub fn loss_total(est: &DistortionField, gt: &DistortionField, mask: &GridMask, lambda_smo: f64) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(loss_reg(est, gt, mask)?, loss_smo(est)?, lambda_smo))
}

/// `∂ loss_total / ∂ est`, one vector per cell.
pub fn loss_total_gradient(
    est: &DistortionField,
    gt: &DistortionField,
    mask: &GridMask,
    lambda_smo: f64,
) -> Result<Vec<Vec2>> {
    est.check_grid(gt)?;
    est.check_mask(mask)?;
    check_smo(est)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (est.grid_w(), est.grid_h());
    let kr = 2.0 / n as f64;
    let mut g: Vec<Vec2> = est
        .vectors()
        .iter()
        .zip(gt.vectors())
        .zip(&mask.bits)
        .map(|((a, b), m)| if *m { (*a - *b) * kr } else { Vec2::new(0.0, 0.0) })
        .collect();
    let ks = 2.0 * lambda_smo / (w * h) as f64;
    for j in 0..h {
        for i in 0..w {
            let v = est.get(i, j);
            if i + 1 < w {
                let d = (est.get(i + 1, j) - v) * ks;
                g[j * w + i + 1] += d;
                g[j * w + i] -= d;
            }
            if j + 1 < h {
                let d = (est.get(i, j + 1) - v) * ks;
                g[(j + 1) * w + i] += d;
                g[j * w + i] -= d;
            }
        }
    }
    Ok(g)
}
