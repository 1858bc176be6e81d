//! The eight-element symmetry group of the square (flip × quarter turns)
//! acting jointly on rasters, landmarks and displacement fields.

use crate::error::{Error, Result};
use crate::field::DistortionField;
use crate::geom::Vec2;
use crate::minutiae::MinutiaSet;
use crate::raster::{FingerMask, GrayImage};
use crate::synth::pair::TrainingSample;

/// `quarter_turns` clockwise (on screen) turns applied after an optional
/// horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symmetry {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry { flip: false, quarter_turns: 0 };

    pub fn all() -> [Symmetry; 8] {
        std::array::from_fn(|k| Symmetry { flip: k >= 4, quarter_turns: (k % 4) as u8 })
    }

    pub fn index(self) -> usize {
        (self.flip as usize) * 4 + self.quarter_turns as usize
    }

    pub fn inverse(self) -> Symmetry {
        if self.flip {
            // (R^k F)^-1 = F R^-k = R^k F
            self
        } else {
            Symmetry { flip: false, quarter_turns: (4 - self.quarter_turns) % 4 }
        }
    }

    /// Image of the lattice point `(x, y)` in an `n × n` lattice.
    #[inline]
    pub fn map_index(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let (mut x, mut y) = if self.flip { (n - 1 - x, y) } else { (x, y) };
        for _ in 0..self.quarter_turns {
            (x, y) = (n - 1 - y, x);
        }
        (x, y)
    }

    /// Linear part acting on vectors.
    #[inline]
    pub fn map_vector(self, v: Vec2) -> Vec2 {
        let mut v = if self.flip { Vec2::new(-v.x, v.y) } else { v };
        for _ in 0..self.quarter_turns {
            v = Vec2::new(-v.y, v.x);
        }
        v
    }

    /// Continuous point map consistent with [`Symmetry::map_index`] on an
    /// `n`-pixel side.
    #[inline]
    pub fn map_point(self, p: Vec2, n: usize) -> Vec2 {
        let m = (n - 1) as f64;
        let mut p = if self.flip { Vec2::new(m - p.x, p.y) } else { p };
        for _ in 0..self.quarter_turns {
            p = Vec2::new(m - p.y, p.x);
        }
        p
    }

    pub fn apply_image(self, img: &GrayImage) -> Result<GrayImage> {
        let n = square_side(img.width(), img.height())?;
        let mut out = vec![0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let (u, v) = self.map_index(x, y, n);
                out[v * n + u] = img.get(x, y);
            }
        }
        GrayImage::new(n, n, out)
    }

    pub fn apply_mask(self, mask: &FingerMask) -> Result<FingerMask> {
        let n = square_side(mask.width(), mask.height())?;
        let mut out = vec![false; n * n];
        for y in 0..n {
            for x in 0..n {
                let (u, v) = self.map_index(x, y, n);
                out[v * n + u] = mask.get(x, y);
            }
        }
        FingerMask::from_bits(n, n, out)
    }

    /// Moves each block to its image block and rotates/reflects the vector.
    pub fn apply_field(self, field: &DistortionField) -> Result<DistortionField> {
        let n = square_side(field.grid_w(), field.grid_h())?;
        let mut out = DistortionField::zeros(n, n, field.block_size());
        for j in 0..n {
            for i in 0..n {
                let (u, v) = self.map_index(i, j, n);
                out.set(u, v, self.map_vector(field.get(i, j)));
            }
        }
        Ok(out)
    }

    pub fn apply_minutiae(self, set: &MinutiaSet, n: usize) -> MinutiaSet {
        set.map(|p| self.map_point(p, n))
    }

    pub fn apply_sample(self, s: &TrainingSample) -> Result<TrainingSample> {
        let n = square_side(s.width(), s.height())?;
        Ok(TrainingSample {
            distorted: self.apply_image(&s.distorted)?,
            mask: self.apply_mask(&s.mask)?,
            gt: self.apply_field(&s.gt)?,
            normal: self.apply_image(&s.normal)?,
            normal_mask: self.apply_mask(&s.normal_mask)?,
            normal_minutiae: self.apply_minutiae(&s.normal_minutiae, n),
            distorted_minutiae: self.apply_minutiae(&s.distorted_minutiae, n),
        })
    }
}

fn square_side(w: usize, h: usize) -> Result<usize> {
    if w != h {
        return Err(Error::NonSquareInput { width: w, height: h });
    }
    Ok(w)
}

/// All eight symmetric copies, identity first.
pub fn augment(sample: &TrainingSample) -> Result<Vec<TrainingSample>> {
    Symmetry::all().iter().map(|g| g.apply_sample(sample)).collect()
}
