//! Planar points and weighted rigid alignment.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// A 2D point or displacement, in pixels.
///
/// Pixel `(x, y)` of a raster sits at the point `(x, y)`; blocks of a field
/// grid are anchored at `((i + 0.5) * block, (j + 0.5) * block)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Counter-clockwise quarter turn (in x-right, y-down raster axes this
    /// reads as clockwise on screen).
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Rotation followed by translation: `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub angle: f64,
    pub rotation: [[f64; 2]; 2],
    pub translation: Vec2,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::from_angle(0.0, Vec2::ZERO)
    }

    pub fn from_angle(angle: f64, translation: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        RigidTransform {
            angle,
            rotation: [[c, -s], [s, c]],
            translation,
        }
    }

    #[inline]
    pub fn rotate(&self, p: Vec2) -> Vec2 {
        let r = &self.rotation;
        Vec2::new(r[0][0] * p.x + r[0][1] * p.y, r[1][0] * p.x + r[1][1] * p.y)
    }

    #[inline]
    pub fn apply(&self, p: Vec2) -> Vec2 {
        self.rotate(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let t = self.rotate(other.translation) + self.translation;
        RigidTransform::from_angle(self.angle + other.angle, t)
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = RigidTransform::from_angle(-self.angle, Vec2::ZERO);
        let t = -inv.rotate(self.translation);
        RigidTransform::from_angle(-self.angle, t)
    }
}

/// Weighted least-squares rigid transform minimising
/// `Σ wᵢ ‖R·srcᵢ + t − dstᵢ‖²`.
///
/// The optimal angle is `atan2(Σ w (s × d), Σ w (s · d))` over centred points;
/// translation maps the weighted source centroid onto the destination one.
pub fn fit_rigid(src: &[Vec2], dst: &[Vec2], weights: &[f64]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "fit_rigid: {} source points, {} destination points, {} weights",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::DegenerateConfiguration(
            "weights must be finite and non-negative".into(),
        ));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateConfiguration("all weights are zero".into()));
    }

    let mut cs = Vec2::ZERO;
    let mut cd = Vec2::ZERO;
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        cs += *s * *w;
        cd += *d * *w;
    }
    cs = cs * (1.0 / wsum);
    cd = cd * (1.0 / wsum);

    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut spread = 0.0;
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let a = *s - cs;
        let b = *d - cd;
        dot += w * a.dot(b);
        cross += w * a.cross(b);
        spread += w * a.norm_sq();
    }
    let scale = src
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(1.0, f64::max);
    if spread <= (1e-12 * scale) * (1e-12 * scale) * wsum {
        return Err(Error::DegenerateConfiguration(
            "weighted source points coincide".into(),
        ));
    }

    let angle = cross.atan2(dot);
    let mut tf = RigidTransform::from_angle(angle, Vec2::ZERO);
    tf.translation = cd - tf.rotate(cs);
    Ok(tf)
}

/// Weighted sum of squared alignment residuals.
pub fn rigid_residual(tf: &RigidTransform, src: &[Vec2], dst: &[Vec2], weights: &[f64]) -> f64 {
    src.iter()
        .zip(dst)
        .zip(weights)
        .map(|((s, d), w)| w * (tf.apply(*s) - *d).norm_sq())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Vec<Vec2> {
        vec![
            Vec2::new(10.0, 20.0),
            Vec2::new(55.0, 31.0),
            Vec2::new(23.0, 70.0),
        ]
    }

    #[test]
    fn identity_and_translation() {
        let p = tri();
        let w = vec![1.0; 3];
        let tf = fit_rigid(&p, &p, &w).unwrap();
        assert!(tf.angle.abs() < 1e-12);
        assert!(tf.translation.norm() < 1e-12);

        let q: Vec<_> = p.iter().map(|v| *v + Vec2::new(5.0, 0.0)).collect();
        let tf = fit_rigid(&p, &q, &w).unwrap();
        assert!(tf.angle.abs() < 1e-12);
        assert!((tf.translation - Vec2::new(5.0, 0.0)).norm() < 1e-12);
        assert!(rigid_residual(&tf, &p, &q, &w) < 1e-20);
    }

    #[test]
    fn thirty_degrees_matches_brute_force_sweep() {
        let p = tri();
        let c = p.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / 3.0);
        let rot = RigidTransform::from_angle(30f64.to_radians(), Vec2::ZERO);
        let q: Vec<_> = p.iter().map(|v| rot.rotate(*v - c) + c).collect();
        let w = vec![1.0; 3];
        let tf = fit_rigid(&p, &q, &w).unwrap();
        assert!((tf.angle - 30f64.to_radians()).abs() < 1e-9);

        // Brute force: for fixed angle the optimal t is centroid-matching, so
        // sweep the angle alone at 1e-6 rad then polish with a finer local sweep.
        let objective = |phi: f64| {
            let r = RigidTransform::from_angle(phi, Vec2::ZERO);
            let cs = p.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / 3.0);
            let cd = q.iter().fold(Vec2::ZERO, |a, b| a + *b) * (1.0 / 3.0);
            let t = RigidTransform::from_angle(phi, cd - r.rotate(cs));
            rigid_residual(&t, &p, &q, &w)
        };
        let n = (2.0 * std::f64::consts::PI / 1e-6) as usize;
        let mut best = (f64::INFINITY, 0.0);
        let mut i = 0;
        while i < n {
            let phi = -std::f64::consts::PI + i as f64 * 1e-6;
            let v = objective(phi);
            if v < best.0 {
                best = (v, phi);
            }
            i += 1;
        }
        assert!((best.1 - tf.angle).abs() <= 1e-6);
        assert!(objective(tf.angle) <= best.0 + 1e-12);
    }

    #[test]
    fn errors() {
        let p = tri();
        assert!(matches!(
            fit_rigid(&p, &p[..2], &[1.0, 1.0, 1.0]),
            Err(Error::DimensionMismatch(_))
        ));
        let same = vec![Vec2::new(3.0, 3.0); 3];
        assert!(matches!(
            fit_rigid(&same, &p, &[1.0; 3]),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            fit_rigid(&p, &p, &[0.0; 3]),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn compose_and_inverse() {
        let a = RigidTransform::from_angle(0.3, Vec2::new(1.0, -2.0));
        let b = a.compose(&a.inverse());
        let p = Vec2::new(7.0, 11.0);
        assert!((b.apply(p) - p).norm() < 1e-12);
    }
}
