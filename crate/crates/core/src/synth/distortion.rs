//! Parametric elastic distortion prototypes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{remove_dc, DistortionField};
use crate::geom::Vec2;
use crate::raster::GridMask;

/// Ten distortion types: pushes in the eight compass directions plus the two
/// torques. The push name is the direction of the displacement vectors in
/// raster axes (x right, y down).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistortionKind {
    PushUp,
    PushDown,
    PushLeft,
    PushRight,
    PushUpLeft,
    PushUpRight,
    PushDownLeft,
    PushDownRight,
    TorqueCw,
    TorqueCcw,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 10] = [
        DistortionKind::PushUp,
        DistortionKind::PushDown,
        DistortionKind::PushLeft,
        DistortionKind::PushRight,
        DistortionKind::PushUpLeft,
        DistortionKind::PushUpRight,
        DistortionKind::PushDownLeft,
        DistortionKind::PushDownRight,
        DistortionKind::TorqueCw,
        DistortionKind::TorqueCcw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::PushUp => "push-up",
            DistortionKind::PushDown => "push-down",
            DistortionKind::PushLeft => "push-left",
            DistortionKind::PushRight => "push-right",
            DistortionKind::PushUpLeft => "push-up-left",
            DistortionKind::PushUpRight => "push-up-right",
            DistortionKind::PushDownLeft => "push-down-left",
            DistortionKind::PushDownRight => "push-down-right",
            DistortionKind::TorqueCw => "torque-cw",
            DistortionKind::TorqueCcw => "torque-ccw",
        }
    }

    /// Unit push direction, `None` for torques.
    pub fn direction(self) -> Option<Vec2> {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        Some(match self {
            DistortionKind::PushUp => Vec2::new(0.0, -1.0),
            DistortionKind::PushDown => Vec2::new(0.0, 1.0),
            DistortionKind::PushLeft => Vec2::new(-1.0, 0.0),
            DistortionKind::PushRight => Vec2::new(1.0, 0.0),
            DistortionKind::PushUpLeft => Vec2::new(-d, -d),
            DistortionKind::PushUpRight => Vec2::new(d, -d),
            DistortionKind::PushDownLeft => Vec2::new(-d, d),
            DistortionKind::PushDownRight => Vec2::new(d, d),
            DistortionKind::TorqueCw | DistortionKind::TorqueCcw => return None,
        })
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown distortion kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionPrototype {
    pub kind: DistortionKind,
    /// Peak push displacement in pixels; for torques, the tangential
    /// speed scale (`|u| = magnitude · r/falloff · exp(−r²/falloff²)`).
    pub magnitude: f64,
    pub center: Vec2,
    /// Gaussian radius in pixels.
    pub falloff: f64,
}

impl DistortionPrototype {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::Config(format!("magnitude must be >= 0, got {}", self.magnitude)));
        }
        if !(self.falloff > 0.0 && self.falloff.is_finite()) {
            return Err(Error::Config(format!("falloff must be > 0, got {}", self.falloff)));
        }
        if !self.center.is_finite() {
            return Err(Error::Config("center must be finite".into()));
        }
        Ok(())
    }

    /// Closed-form displacement before rigid-component removal.
    ///
    /// Pushes: `m · exp(−r²/f²) · dir`. Torques: `m · exp(−r²/f²) · rot90(p − c)/f`,
    /// which keeps the field C¹ at the center with gradient bounded by `m/f`.
    #[inline]
    pub fn eval(&self, p: Vec2) -> Vec2 {
        let d = p - self.center;
        let g = self.magnitude * (-d.norm_sq() / (self.falloff * self.falloff)).exp();
        match self.kind.direction() {
            Some(dir) => dir * g,
            None => {
                let t = d.perp() * (g / self.falloff);
                if self.kind == DistortionKind::TorqueCw {
                    t
                } else {
                    -t
                }
            }
        }
    }
}

/// Samples the prototype at block centers, then removes the rigid component
/// over `mask`.
pub fn synth_distortion(
    proto: &DistortionPrototype,
    grid_w: usize,
    grid_h: usize,
    block: usize,
    mask: &GridMask,
) -> Result<DistortionField> {
    proto.validate()?;
    let raw = DistortionField::from_fn(grid_w, grid_h, block, |p| proto.eval(p));
    remove_dc(&raw, mask)
}

/// Ranges for drawing random prototypes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrototypeSampler {
    pub magnitude: (f64, f64),
    /// Falloff as a fraction of the image side.
    pub falloff_fraction: (f64, f64),
    /// Center offset from the mask centroid, as a fraction of the image side.
    pub center_jitter: f64,
}

impl Default for PrototypeSampler {
    fn default() -> Self {
        PrototypeSampler { magnitude: (5.0, 30.0), falloff_fraction: (0.35, 0.6), center_jitter: 0.2 }
    }
}

impl PrototypeSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R, centroid: Vec2, side: f64) -> DistortionPrototype {
        let kind = DistortionKind::ALL[rng.random_range(0..DistortionKind::ALL.len())];
        let magnitude = rng.random_range(self.magnitude.0..=self.magnitude.1);
        let falloff = side * rng.random_range(self.falloff_fraction.0..=self.falloff_fraction.1);
        let j = self.center_jitter * side;
        let center = centroid
            + if j > 0.0 { Vec2::new(rng.random_range(-j..=j), rng.random_range(-j..=j)) } else { Vec2::ZERO };
        DistortionPrototype { kind, magnitude, center, falloff }
    }
}
