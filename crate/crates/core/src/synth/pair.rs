//! Distorted/ground-truth training pairs.

use crate::error::{Error, Result};
use crate::field::{remove_dc, DistortionField};
use crate::geom::Vec2;
use crate::minutiae::{sparse_field, MinutiaSet};
use crate::raster::{FingerMask, GrayImage};
use crate::tps::{tps_eval_dense, tps_fit, TpsCoefficients};
use crate::field::warp_backward;

/// One supervised example. `gt` points from the distorted image toward the
/// normal one and has its rigid component removed over `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub distorted: GrayImage,
    pub mask: FingerMask,
    pub gt: DistortionField,
    pub normal: GrayImage,
    pub normal_mask: FingerMask,
    pub normal_minutiae: MinutiaSet,
    pub distorted_minutiae: MinutiaSet,
}

impl TrainingSample {
    pub fn width(&self) -> usize {
        self.distorted.width()
    }

    pub fn height(&self) -> usize {
        self.distorted.height()
    }
}

const INVERSE_MAX_ITERS: usize = 500;
const INVERSE_TOL: f64 = 1e-10;

/// Solves `p + g(p) = target` for `p` by damped fixed-point iteration.
fn invert_point(g: &TpsCoefficients, target: Vec2) -> Vec2 {
    let mut p = target - g.eval(target);
    let mut damping = 1.0;
    let mut prev_err = f64::INFINITY;
    for _ in 0..INVERSE_MAX_ITERS {
        let r = p + g.eval(p) - target;
        let err = r.norm();
        if err < INVERSE_TOL {
            break;
        }
        if err > prev_err {
            damping *= 0.5;
        }
        prev_err = err;
        p -= r * damping;
    }
    p
}

/// Ground-truth field from corresponding minutiae: rigid alignment over the
/// distorted mask, sparse residual displacements, thin-plate-spline
/// densification at block centers, then rigid-component removal.
pub fn reconstruct_gt(
    normal: &MinutiaSet,
    distorted: &MinutiaSet,
    distorted_mask: &FingerMask,
    block: usize,
    regularization: f64,
) -> Result<DistortionField> {
    let (sparse, _) = sparse_field(normal, distorted, distorted_mask)?;
    let anchors: Vec<Vec2> = sparse.iter().map(|s| s.anchor).collect();
    let values: Vec<Vec2> = sparse.iter().map(|s| s.displacement).collect();
    let coeffs = tps_fit(&anchors, &values, regularization)?;
    let gw = distorted_mask.width().div_ceil(block);
    let gh = distorted_mask.height().div_ceil(block);
    let dense = tps_eval_dense(&coeffs, gw, gh, block);
    remove_dc(&dense, &distorted_mask.to_grid(block))
}

/// Distorts a normal impression by `field` and rebuilds the ground truth
/// from the mapped minutiae.
///
/// The grid field is densified to full resolution with a thin-plate spline
/// through the block centers; the distorted image at `p` reads the normal
/// image at `p + g(p)`. Each normal minutia `m` maps to the `p` solving
/// `p + g(p) = m`.
pub fn make_pair(
    normal: &GrayImage,
    mask: &FingerMask,
    minutiae: &MinutiaSet,
    field: &DistortionField,
) -> Result<TrainingSample> {
    if normal.width() != mask.width() || normal.height() != mask.height() {
        return Err(Error::DimensionMismatch("image and mask sizes differ".into()));
    }
    let block = field.block_size();
    if normal.width().div_ceil(block) != field.grid_w() || normal.height().div_ceil(block) != field.grid_h() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image vs {}x{} field grid",
            normal.width(),
            normal.height(),
            field.grid_w(),
            field.grid_h()
        )));
    }
    let centers: Vec<Vec2> = (0..field.grid_h())
        .flat_map(|j| (0..field.grid_w()).map(move |i| (i, j)))
        .map(|(i, j)| field.center(i, j))
        .collect();
    let dense = if field.vectors().iter().all(|v| *v == Vec2::ZERO) {
        TpsCoefficients::zero()
    } else {
        tps_fit(&centers, field.vectors(), 0.0)?
    };

    let (distorted, dmask) = warp_backward(normal, mask, |p| p + dense.eval(p))?;
    let dmask = dmask.largest_component();
    if dmask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let distorted_minutiae = minutiae.map(|m| invert_point(&dense, m));
    let gt = reconstruct_gt(minutiae, &distorted_minutiae, &dmask, block, 0.0)?;
    Ok(TrainingSample {
        distorted,
        mask: dmask,
        gt,
        normal: normal.clone(),
        normal_mask: mask.clone(),
        normal_minutiae: minutiae.clone(),
        distorted_minutiae,
    })
}
