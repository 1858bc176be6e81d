//! Thin-plate spline interpolation of 2-vector values over scattered anchors.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{DistortionField, PixelField};
use crate::geom::Vec2;

/// Radial basis `U(r) = r² log r`, written in terms of `r²` to avoid a sqrt.
#[inline]
pub fn tps_kernel_sq(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// Fitted spline, one per displacement channel, sharing anchors.
///
/// Anchors are stored centred and scaled to unit RMS radius; the kernel is
/// evaluated in those units. This only reshuffles the affine part and keeps
/// the linear system well conditioned for pixel-scale coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsCoefficients {
    center: Vec2,
    scale: f64,
    anchors: Vec<Vec2>,
    weights: Vec<Vec2>,
    /// `[constant, x, y]` coefficients per output channel.
    affine: [[f64; 3]; 2],
}

impl TpsCoefficients {
    /// Spline that is identically zero.
    pub fn zero() -> Self {
        TpsCoefficients {
            center: Vec2::ZERO,
            scale: 1.0,
            anchors: Vec::new(),
            weights: Vec::new(),
            affine: [[0.0; 3]; 2],
        }
    }

    /// Pure affine map `v(p) = A p + b` in pixel coordinates.
    pub fn affine(a: [[f64; 2]; 2], b: Vec2) -> Self {
        let mut c = Self::zero();
        c.affine = [[b.x, a[0][0], a[0][1]], [b.y, a[1][0], a[1][1]]];
        c
    }

    /// Kernel weights in normalised units.
    pub fn nonlinear_weights(&self) -> &[Vec2] {
        &self.weights
    }

    #[inline]
    pub fn eval(&self, p: Vec2) -> Vec2 {
        let q = (p - self.center) * (1.0 / self.scale);
        let mut vx = self.affine[0][0] + self.affine[0][1] * q.x + self.affine[0][2] * q.y;
        let mut vy = self.affine[1][0] + self.affine[1][1] * q.x + self.affine[1][2] * q.y;
        for (a, w) in self.anchors.iter().zip(&self.weights) {
            let u = tps_kernel_sq((q - *a).norm_sq());
            vx += w.x * u;
            vy += w.y * u;
        }
        Vec2::new(vx, vy)
    }
}

/// Fits a thin-plate spline with kernel `r² log r` plus an affine part to the
/// given anchor values. `regularization` is added to the kernel diagonal
/// (normalised units); 0 interpolates exactly.
pub fn tps_fit(anchors: &[Vec2], values: &[Vec2], regularization: f64) -> Result<TpsCoefficients> {
    let n = anchors.len();
    if n != values.len() {
        return Err(Error::DimensionMismatch(format!("{n} anchors but {} values", values.len())));
    }
    if n < 3 {
        return Err(Error::SingularSystem(format!("need at least 3 anchors, got {n}")));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::SingularSystem("regularization must be finite and >= 0".into()));
    }

    let center = anchors.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / n as f64);
    let rms = (anchors.iter().map(|p| (*p - center).norm_sq()).sum::<f64>() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::SingularSystem("anchors coincide".into()));
    }
    let scaled: Vec<Vec2> = anchors.iter().map(|p| (*p - center) * (1.0 / rms)).collect();

    // Collinearity: the affine block is rank-deficient when the anchor
    // scatter matrix is.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &scaled {
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-10 * (n as f64) * (n as f64) {
        return Err(Error::SingularSystem("anchors are collinear".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (scaled[i] - scaled[j]).norm_sq() < 1e-20 {
                return Err(Error::SingularSystem(format!("anchors {i} and {j} coincide")));
            }
        }
    }

    let m = n + 3;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = tps_kernel_sq((scaled[i] - scaled[j]).norm_sq());
        }
        a[(i, i)] += regularization;
        let p = scaled[i];
        for (k, v) in [1.0, p.x, p.y].into_iter().enumerate() {
            a[(i, n + k)] = v;
            a[(n + k, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(m, 2);
    for (i, v) in values.iter().enumerate() {
        rhs[(i, 0)] = v.x;
        rhs[(i, 1)] = v.y;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("LU factorisation is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }

    let weights = (0..n).map(|i| Vec2::new(sol[(i, 0)], sol[(i, 1)])).collect();
    let affine = [
        [sol[(n, 0)], sol[(n + 1, 0)], sol[(n + 2, 0)]],
        [sol[(n, 1)], sol[(n + 1, 1)], sol[(n + 2, 1)]],
    ];
    Ok(TpsCoefficients { center, scale: rms, anchors: scaled, weights, affine })
}

/// Evaluates the spline at every block center of a `grid_w × grid_h` grid.
pub fn tps_eval_dense(coeffs: &TpsCoefficients, grid_w: usize, grid_h: usize, block: usize) -> DistortionField {
    DistortionField::from_fn(grid_w, grid_h, block, |p| coeffs.eval(p))
}

/// Evaluates the spline at every pixel of a `width × height` raster.
pub fn tps_eval_pixels(coeffs: &TpsCoefficients, width: usize, height: usize) -> PixelField {
    let mut data = vec![Vec2::ZERO; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = coeffs.eval(Vec2::new(x as f64, y as f64));
        }
    });
    PixelField { width, height, data }
}

/// Largest interpolation error over the anchors.
pub fn max_anchor_error(coeffs: &TpsCoefficients, anchors: &[Vec2], values: &[Vec2]) -> f64 {
    anchors
        .iter()
        .zip(values)
        .map(|(a, v)| (coeffs.eval(*a) - *v).norm())
        .fold(0.0, f64::max)
}
