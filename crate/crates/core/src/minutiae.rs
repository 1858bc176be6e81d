//! Corresponding landmark sets and the sparse rigid-free displacement
//! between a normal and a distorted impression.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{fit_rigid, RigidTransform, Vec2};
use crate::raster::FingerMask;

/// Landmarks with correspondence labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinutiaSet {
    pub ids: Vec<u32>,
    pub points: Vec<Vec2>,
}

impl MinutiaSet {
    pub fn new(ids: Vec<u32>, points: Vec<Vec2>) -> Result<Self> {
        if ids.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} points",
                ids.len(),
                points.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Format(format!("duplicate minutia id {dup}")));
        }
        Ok(MinutiaSet { ids, points })
    }

    /// Points labelled `0..n` in order.
    pub fn from_points(points: Vec<Vec2>) -> Self {
        let ids = (0..points.len() as u32).collect();
        MinutiaSet { ids, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn map(&self, f: impl Fn(Vec2) -> Vec2) -> MinutiaSet {
        MinutiaSet { ids: self.ids.clone(), points: self.points.iter().map(|p| f(*p)).collect() }
    }
}

/// Matched point pairs `(a, b)` for the ids present in both sets, in the
/// order of `a`.
pub fn pair_by_id(a: &MinutiaSet, b: &MinutiaSet) -> (Vec<Vec2>, Vec<Vec2>) {
    let index: HashMap<u32, usize> = b.ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for (id, p) in a.ids.iter().zip(&a.points) {
        if let Some(k) = index.get(id) {
            pa.push(*p);
            pb.push(b.points[*k]);
        }
    }
    (pa, pb)
}

/// A displacement anchored at a point of the distorted image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseVector {
    pub anchor: Vec2,
    pub displacement: Vec2,
}

/// Sparse distorted→normal displacements with the rigid (DC) component
/// removed.
///
/// The normal points are rigidly aligned onto the distorted ones using only
/// pairs whose distorted location lies inside `mask`; each residual
/// `(R·Pᴺ + t) − Pᴰ` is anchored at `Pᴰ`.
pub fn sparse_field(
    normal: &MinutiaSet,
    distorted: &MinutiaSet,
    mask: &FingerMask,
) -> Result<(Vec<SparseVector>, RigidTransform)> {
    let (pn, pd) = pair_by_id(normal, distorted);
    if pn.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} corresponding minutiae, need at least 2",
            pn.len()
        )));
    }
    let weights: Vec<f64> = pd
        .iter()
        .map(|p| if mask.contains_point(p.x, p.y) { 1.0 } else { 0.0 })
        .collect();
    let tf = fit_rigid(&pn, &pd, &weights)?;
    let vectors = pn
        .iter()
        .zip(&pd)
        .map(|(n, d)| SparseVector { anchor: *d, displacement: tf.apply(*n) - *d })
        .collect();
    Ok((vectors, tf))
}
