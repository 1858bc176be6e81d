//! Block-grid displacement fields, rigid (DC) removal, resampling and
//! image warping.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::raster::{check_same_size, FingerMask, GrayImage, GridMask};

/// Default block edge in pixels: one displacement vector per 16×16 block.
pub const BLOCK_SIZE: usize = 16;

/// Fixed-point iterations used to invert the displacement during rectification.
pub const RECTIFY_ITERATIONS: usize = 2;

/// Displacements on a coarse grid, pointing from the distorted image toward
/// the rectification target. Vector `(i, j)` is anchored at
/// `((i + 0.5) * block, (j + 0.5) * block)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionField {
    grid_w: usize,
    grid_h: usize,
    block: usize,
    vectors: Vec<Vec2>,
}

impl DistortionField {
    pub fn new(grid_w: usize, grid_h: usize, block: usize, vectors: Vec<Vec2>) -> Result<Self> {
        if grid_w == 0 || grid_h == 0 || block == 0 {
            return Err(Error::GridMismatch("empty grid".into()));
        }
        if vectors.len() != grid_w * grid_h {
            return Err(Error::GridMismatch(format!(
                "{} vectors for a {grid_w}x{grid_h} grid",
                vectors.len()
            )));
        }
        Ok(DistortionField { grid_w, grid_h, block, vectors })
    }

    pub fn zeros(grid_w: usize, grid_h: usize, block: usize) -> Self {
        DistortionField { grid_w, grid_h, block, vectors: vec![Vec2::ZERO; grid_w * grid_h] }
    }

    /// Grid covering a `width × height` image.
    pub fn zeros_for_image(width: usize, height: usize, block: usize) -> Self {
        Self::zeros(width.div_ceil(block), height.div_ceil(block), block)
    }

    /// Builds a field by evaluating `f` at every block center.
    pub fn from_fn(grid_w: usize, grid_h: usize, block: usize, mut f: impl FnMut(Vec2) -> Vec2) -> Self {
        let mut vectors = Vec::with_capacity(grid_w * grid_h);
        for j in 0..grid_h {
            for i in 0..grid_w {
                vectors.push(f(block_center(i, j, block)));
            }
        }
        DistortionField { grid_w, grid_h, block, vectors }
    }

    #[inline]
    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    #[inline]
    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.block
    }

    #[inline]
    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    #[inline]
    pub fn vectors_mut(&mut self) -> &mut [Vec2] {
        &mut self.vectors
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        self.vectors[j * self.grid_w + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Vec2) {
        self.vectors[j * self.grid_w + i] = v;
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        block_center(i, j, self.block)
    }

    pub fn same_grid(&self, other: &DistortionField) -> bool {
        self.grid_w == other.grid_w && self.grid_h == other.grid_h && self.block == other.block
    }

    pub fn check_grid(&self, other: &DistortionField) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(format!(
                "{}x{}@{} vs {}x{}@{}",
                self.grid_w, self.grid_h, self.block, other.grid_w, other.grid_h, other.block
            )));
        }
        Ok(())
    }

    pub fn check_mask(&self, mask: &GridMask) -> Result<()> {
        if mask.width != self.grid_w || mask.height != self.grid_h {
            return Err(Error::GridMismatch(format!(
                "field grid {}x{} vs mask grid {}x{}",
                self.grid_w, self.grid_h, mask.width, mask.height
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> DistortionField {
        let mut out = self.clone();
        out.vectors.iter_mut().for_each(|v| *v = *v * s);
        out
    }

    /// Flattened `[x0, y0, x1, y1, ...]` in row-major cell order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vectors.iter().flat_map(|v| [v.x, v.y]).collect()
    }

    pub fn from_flat(grid_w: usize, grid_h: usize, block: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid_w * grid_h {
            return Err(Error::GridMismatch(format!(
                "{} values for a {grid_w}x{grid_h} grid",
                flat.len()
            )));
        }
        let vectors = flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
        Self::new(grid_w, grid_h, block, vectors)
    }

    /// Bilinear interpolation between block centers, clamped at the border.
    #[inline]
    pub fn sample(&self, p: Vec2) -> Vec2 {
        let b = self.block as f64;
        let gx = (p.x / b - 0.5).clamp(0.0, (self.grid_w - 1) as f64);
        let gy = (p.y / b - 0.5).clamp(0.0, (self.grid_h - 1) as f64);
        let i0 = gx.floor() as usize;
        let j0 = gy.floor() as usize;
        let fx = gx - i0 as f64;
        let fy = gy - j0 as f64;
        let i1 = (i0 + 1).min(self.grid_w - 1);
        let j1 = (j0 + 1).min(self.grid_h - 1);
        let v00 = self.get(i0, j0);
        let v10 = self.get(i1, j0);
        let v01 = self.get(i0, j1);
        let v11 = self.get(i1, j1);
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[inline]
pub fn block_center(i: usize, j: usize, block: usize) -> Vec2 {
    let b = block as f64;
    Vec2::new((i as f64 + 0.5) * b, (j as f64 + 0.5) * b)
}

/// Translation plus infinitesimal rotation about a centroid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcComponent {
    pub centroid: Vec2,
    pub translation: Vec2,
    /// Rotation rate; the rotational part is `omega * perp(p - centroid)`.
    pub omega: f64,
}

impl DcComponent {
    #[inline]
    pub fn eval(&self, p: Vec2) -> Vec2 {
        self.translation + (p - self.centroid).perp() * self.omega
    }
}

/// Least-squares rigid-motion component of a field over the masked cells.
pub fn dc_component(field: &DistortionField, mask: &GridMask) -> Result<DcComponent> {
    field.check_mask(mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mut centroid = Vec2::ZERO;
    let mut translation = Vec2::ZERO;
    for j in 0..field.grid_h {
        for i in 0..field.grid_w {
            if mask.get(i, j) {
                centroid += field.center(i, j);
                translation += field.get(i, j);
            }
        }
    }
    centroid = centroid * (1.0 / n as f64);
    translation = translation * (1.0 / n as f64);
    let mut moment = 0.0;
    let mut inertia = 0.0;
    for j in 0..field.grid_h {
        for i in 0..field.grid_w {
            if mask.get(i, j) {
                let r = field.center(i, j) - centroid;
                moment += r.cross(field.get(i, j) - translation);
                inertia += r.norm_sq();
            }
        }
    }
    let omega = if inertia > 0.0 { moment / inertia } else { 0.0 };
    Ok(DcComponent { centroid, translation, omega })
}

/// Subtracts the best-fit translation and rotation (about the masked
/// centroid) so that only elastic deformation remains. Idempotent.
pub fn remove_dc(field: &DistortionField, mask: &GridMask) -> Result<DistortionField> {
    let dc = dc_component(field, mask)?;
    let mut out = field.clone();
    for j in 0..field.grid_h {
        for i in 0..field.grid_w {
            let c = field.center(i, j);
            out.set(i, j, field.get(i, j) - dc.eval(c));
        }
    }
    Ok(out)
}

/// Masked mean displacement and mean moment about the masked centroid.
pub fn dc_residual(field: &DistortionField, mask: &GridMask) -> Result<(Vec2, f64)> {
    field.check_mask(mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mut centroid = Vec2::ZERO;
    let mut mean = Vec2::ZERO;
    for j in 0..field.grid_h {
        for i in 0..field.grid_w {
            if mask.get(i, j) {
                centroid += field.center(i, j);
                mean += field.get(i, j);
            }
        }
    }
    centroid = centroid * (1.0 / n as f64);
    mean = mean * (1.0 / n as f64);
    let mut moment = 0.0;
    for j in 0..field.grid_h {
        for i in 0..field.grid_w {
            if mask.get(i, j) {
                moment += (field.center(i, j) - centroid).cross(field.get(i, j));
            }
        }
    }
    Ok((mean, moment / n as f64))
}

/// Per-pixel displacement raster.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec2>,
}

impl PixelField {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        self.data[y * self.width + x]
    }
}

fn check_raster_grid(field: &DistortionField, w: usize, h: usize) -> Result<()> {
    if w.div_ceil(field.block) != field.grid_w || h.div_ceil(field.block) != field.grid_h {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} raster does not match a {}x{} grid of {}-px blocks",
            field.grid_w, field.grid_h, field.block
        )));
    }
    Ok(())
}

/// Bilinear interpolation of the grid to a full-resolution raster.
pub fn upsample_field(field: &DistortionField, out_w: usize, out_h: usize) -> Result<PixelField> {
    check_raster_grid(field, out_w, out_h)?;
    let mut data = vec![Vec2::ZERO; out_w * out_h];
    data.par_chunks_mut(out_w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = field.sample(Vec2::new(x as f64, y as f64));
        }
    });
    Ok(PixelField { width: out_w, height: out_h, data })
}

/// Bilinear image sample; `None` outside the pixel lattice.
#[inline]
pub fn sample_bilinear(data: &[f32], w: usize, h: usize, p: Vec2) -> Option<f64> {
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (w - 1) as f64 && p.y <= (h - 1) as f64) {
        return None;
    }
    let x0 = p.x.floor() as usize;
    let y0 = p.y.floor() as usize;
    let fx = p.x - x0 as f64;
    let fy = p.y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v = |x: usize, y: usize| data[y * w + x] as f64;
    Some(
        v(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + v(x1, y0) * fx * (1.0 - fy)
            + v(x0, y1) * (1.0 - fx) * fy
            + v(x1, y1) * fx * fy,
    )
}

/// Backward warp: output pixel `p` reads the input at `source(p)`.
/// Out-of-lattice reads give background 0 and mask false.
pub fn warp_backward<F>(image: &GrayImage, mask: &FingerMask, source: F) -> Result<(GrayImage, FingerMask)>
where
    F: Fn(Vec2) -> Vec2 + Sync,
{
    check_same_size(image, mask)?;
    let (w, h) = (image.width(), image.height());
    let mask_f: Vec<f32> = mask.bits().iter().map(|b| *b as u8 as f32).collect();
    let mut out = vec![0f32; w * h];
    let mut out_mask = vec![false; w * h];
    out.par_chunks_mut(w)
        .zip(out_mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mrow))| {
            for x in 0..w {
                let src = source(Vec2::new(x as f64, y as f64));
                if let Some(v) = sample_bilinear(image.data(), w, h, src) {
                    row[x] = v as f32;
                    mrow[x] = sample_bilinear(&mask_f, w, h, src).unwrap_or(0.0) >= 0.5;
                }
            }
        });
    Ok((GrayImage::new(w, h, out)?, FingerMask::from_bits(w, h, out_mask)?))
}

/// Applies a field as a distortion: output `p` reads the input at `p + u(p)`.
/// This is the inverse of [`rectify`].
pub fn apply_distortion(
    image: &GrayImage,
    mask: &FingerMask,
    field: &DistortionField,
) -> Result<(GrayImage, FingerMask)> {
    check_raster_grid(field, image.width(), image.height())?;
    warp_backward(image, mask, |p| p + field.sample(p))
}

/// Inverse displacement at `q`: solves `u*(q) = u(q − u*(q))` by fixed-point
/// iteration starting from `u(q)`.
#[inline]
pub fn inverse_displacement(field: &DistortionField, q: Vec2, iterations: usize) -> Vec2 {
    let mut u = field.sample(q);
    for _ in 0..iterations {
        u = field.sample(q - u);
    }
    u
}

/// Rectifies a distorted image: output pixel `q` reads the input at
/// `q − u*(q)` where `u*` inverts the distorted→target displacement.
pub fn rectify(image: &GrayImage, mask: &FingerMask, field: &DistortionField) -> Result<(GrayImage, FingerMask)> {
    rectify_with_iterations(image, mask, field, RECTIFY_ITERATIONS)
}

pub fn rectify_with_iterations(
    image: &GrayImage,
    mask: &FingerMask,
    field: &DistortionField,
    iterations: usize,
) -> Result<(GrayImage, FingerMask)> {
    check_raster_grid(field, image.width(), image.height())?;
    warp_backward(image, mask, |q| q - inverse_displacement(field, q, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_smooth(rng: &mut ChaCha8Rng, gw: usize, gh: usize) -> DistortionField {
        let a: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let ph = rng.random_range(0.0..6.0);
        DistortionField::from_fn(gw, gh, 16, |p| {
            let (x, y) = (p.x / 40.0, p.y / 40.0);
            Vec2::new(
                3.0 * a[0] + a[1] * x * y + 2.0 * (x + ph).sin() * a[2],
                -a[3] + a[4] * x * x + 2.0 * (y * a[5]).cos(),
            )
        })
    }

    fn disk_mask(gw: usize, gh: usize) -> GridMask {
        let (cx, cy, r) = (gw as f64 / 2.0, gh as f64 / 2.0, gw.min(gh) as f64 * 0.45);
        let bits = (0..gw * gh)
            .map(|k| {
                let (i, j) = ((k % gw) as f64 + 0.5, (k / gw) as f64 + 0.5);
                (i - cx).powi(2) + (j - cy).powi(2) <= r * r
            })
            .collect();
        GridMask { width: gw, height: gh, bits }
    }

    #[test]
    fn remove_dc_kills_translation_and_rotation() {
        let mask = disk_mask(10, 8);
        let f = DistortionField::from_fn(10, 8, 16, |_| Vec2::new(5.0, 0.0));
        assert!(remove_dc(&f, &mask).unwrap().max_norm() < 1e-12);

        let dc = dc_component(&DistortionField::zeros(10, 8, 16), &mask).unwrap();
        let c = dc.centroid;
        let f = DistortionField::from_fn(10, 8, 16, |p| (p - c).perp() * 0.01);
        assert!(remove_dc(&f, &mask).unwrap().max_norm() < 1e-6);
    }

    #[test]
    fn remove_dc_idempotent_and_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = disk_mask(9, 11);
        for _ in 0..100 {
            let f = random_smooth(&mut rng, 9, 11);
            let a = remove_dc(&f, &mask).unwrap();
            let b = remove_dc(&a, &mask).unwrap();
            for (u, v) in a.vectors().iter().zip(b.vectors()) {
                assert!((*u - *v).norm() <= 1e-9);
            }
            let (mean, moment) = dc_residual(&a, &mask).unwrap();
            assert!(mean.norm() <= 1e-6 && moment.abs() <= 1e-6);
        }
        let empty = GridMask { width: 9, height: 11, bits: vec![false; 99] };
        assert!(matches!(
            remove_dc(&DistortionField::zeros(9, 11, 16), &empty),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn upsample_constant_ramp_and_centers() {
        let f = DistortionField::from_fn(4, 3, 16, |_| Vec2::new(1.5, -2.0));
        let px = upsample_field(&f, 64, 48).unwrap();
        assert!(px.data.iter().all(|v| *v == Vec2::new(1.5, -2.0)));

        let mut ramp = DistortionField::zeros(4, 3, 16);
        for j in 0..3 {
            for i in 0..4 {
                ramp.set(i, j, Vec2::new(i as f64, 0.0));
            }
        }
        let px = upsample_field(&ramp, 64, 48).unwrap();
        for x in 8..=56 {
            assert!((px.get(x, 20).x - (x as f64 / 16.0 - 0.5)).abs() < 1e-6);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = DistortionField::from_fn(5, 4, 16, |_| Vec2::new(rng.random(), rng.random()));
        let px = upsample_field(&r, 80, 64).unwrap();
        for j in 0..4 {
            for i in 0..5 {
                assert_eq!(px.get(i * 16 + 8, j * 16 + 8), r.get(i, j));
            }
        }
        assert!(upsample_field(&r, 100, 64).is_err());
    }

    #[test]
    fn rectify_identity_and_shift() {
        let img = GrayImage::from_fn(64, 48, |x, y| ((x * 31 + y * 17) % 97) as f32 / 97.0);
        let mask = FingerMask::from_fn(64, 48, |x, y| x > 4 && y > 3 && x < 60);
        let (out, m) = rectify(&img, &mask, &DistortionField::zeros(4, 3, 16)).unwrap();
        assert_eq!(out, img);
        assert_eq!(m, mask);

        let shift = DistortionField::from_fn(4, 3, 16, |_| Vec2::new(16.0, 0.0));
        let (out, _) = rectify(&img, &mask, &shift).unwrap();
        for y in 0..48 {
            for x in 16..64 {
                assert_eq!(out.get(x, y), img.get(x - 16, y));
            }
            for x in 0..16 {
                assert_eq!(out.get(x, y), 0.0);
            }
        }
        assert!(rectify(&img, &mask, &DistortionField::zeros(3, 3, 16)).is_err());
    }

    #[test]
    fn inverse_displacement_inverts_smooth_field() {
        let f = DistortionField::from_fn(8, 8, 16, |p| Vec2::new(2.0 * (p.y / 50.0).sin(), (p.x / 60.0).cos()));
        let p = Vec2::new(50.0, 70.0);
        let q = p + f.sample(p);
        let u = inverse_displacement(&f, q, 20);
        assert!((q - u - p).norm() < 1e-9);
    }
}
