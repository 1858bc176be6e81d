//! Grayscale images, binary finger masks and the morphology they need.

use crate::error::{Error, Result};

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch("image must be non-empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0);
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Zero-mean, unit-variance view computed over the mask; pixels outside
    /// the mask map to 0.
    pub fn normalized(&self, mask: &FingerMask) -> Result<Vec<f64>> {
        check_same_size(self, mask)?;
        let n = mask.count();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        let mut mean = 0.0;
        for (v, m) in self.data.iter().zip(mask.bits()) {
            if *m {
                mean += *v as f64;
            }
        }
        mean /= n as f64;
        let mut var = 0.0;
        for (v, m) in self.data.iter().zip(mask.bits()) {
            if *m {
                let d = *v as f64 - mean;
                var += d * d;
            }
        }
        var /= n as f64;
        let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
        Ok(self
            .data
            .iter()
            .zip(mask.bits())
            .map(|(v, m)| if *m { (*v as f64 - mean) * inv } else { 0.0 })
            .collect())
    }
}

/// Binary fingerprint region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FingerMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FingerMask {
    /// Wraps raw bits without checking connectivity; see [`FingerMask::validate`].
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(FingerMask { width, height, bits })
    }

    pub fn full(width: usize, height: usize) -> Self {
        FingerMask { width, height, bits: vec![true; width * height] }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        FingerMask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        FingerMask { width, height, bits }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Membership of an arbitrary point; out-of-bounds is outside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let xi = x.round();
        let yi = y.round();
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn intersect(&self, other: &FingerMask) -> Result<FingerMask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch("mask sizes differ".into()));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(FingerMask { width: self.width, height: self.height, bits })
    }

    /// Checks the invariants of a segmentation mask: nonempty and a single
    /// 8-connected component.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyMask);
        }
        let (_, n) = self.components();
        if n != 1 {
            return Err(Error::ShapeMismatch(format!(
                "mask has {n} connected components, expected 1"
            )));
        }
        Ok(())
    }

    /// 8-connected component labels (0 = background) and component count.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let (w, h) = (self.width, self.height);
        let mut labels = vec![0u32; w * h];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if self.bits[j] && labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        (labels, next as usize)
    }

    /// Keeps only the largest 8-connected component (ties go to the one found
    /// first in raster order).
    pub fn largest_component(&self) -> FingerMask {
        let (labels, n) = self.components();
        if n <= 1 {
            return self.clone();
        }
        let mut sizes = vec![0usize; n + 1];
        for l in &labels {
            sizes[*l as usize] += 1;
        }
        let mut best = 1;
        for l in 2..=n {
            if sizes[l] > sizes[best] {
                best = l;
            }
        }
        let bits = labels.iter().map(|l| *l as usize == best).collect();
        FingerMask { width: self.width, height: self.height, bits }
    }

    /// Erosion by a (2r+1)² square.
    pub fn erode(&self, radius: usize) -> FingerMask {
        self.morph(radius, true)
    }

    /// Dilation by a (2r+1)² square.
    pub fn dilate(&self, radius: usize) -> FingerMask {
        self.morph(radius, false)
    }

    /// Closing (dilate then erode) with a disk of the given radius.
    pub fn close_disk(&self, radius: usize) -> FingerMask {
        let d = self.disk_morph(radius, false);
        d.disk_morph(radius, true)
    }

    fn disk_morph(&self, radius: usize, erode: bool) -> FingerMask {
        let (w, h) = (self.width as isize, self.height as isize);
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut bits = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = erode;
                for (dx, dy) in &offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    // Outside the raster counts as background for both ops.
                    let v = nx >= 0 && ny >= 0 && nx < w && ny < h && self.bits[(ny * w + nx) as usize];
                    if erode && !v {
                        acc = false;
                        break;
                    }
                    if !erode && v {
                        acc = true;
                        break;
                    }
                }
                bits[(y * w + x) as usize] = acc;
            }
        }
        FingerMask { width: self.width, height: self.height, bits }
    }

    fn morph(&self, radius: usize, erode: bool) -> FingerMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
            let mut out = vec![false; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let (c, len) = if horizontal { (x, w) } else { (y, h) };
                    let lo = c.saturating_sub(radius);
                    let hi = (c + radius).min(len - 1);
                    let clipped = c < radius || c + radius > len - 1;
                    let mut acc = if erode { !clipped } else { false };
                    if !erode || acc {
                        for k in lo..=hi {
                            let idx = if horizontal { y * w + k } else { k * w + x };
                            if erode && !src[idx] {
                                acc = false;
                                break;
                            }
                            if !erode && src[idx] {
                                acc = true;
                                break;
                            }
                        }
                    }
                    out[y * w + x] = acc;
                }
            }
            out
        };
        let a = pass(&self.bits, true);
        let bits = pass(&a, false);
        FingerMask { width: w, height: h, bits }
    }

    /// Block-level membership: a block is inside when at least half of its
    /// (existing) pixels are inside.
    pub fn to_grid(&self, block: usize) -> GridMask {
        let gw = self.width.div_ceil(block);
        let gh = self.height.div_ceil(block);
        let mut bits = vec![false; gw * gh];
        for j in 0..gh {
            for i in 0..gw {
                let (x0, y0) = (i * block, j * block);
                let (x1, y1) = ((x0 + block).min(self.width), (y0 + block).min(self.height));
                let mut inside = 0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        inside += self.get(x, y) as usize;
                    }
                }
                let total = (x1 - x0) * (y1 - y0);
                bits[j * gw + i] = 2 * inside >= total;
            }
        }
        GridMask { width: gw, height: gh, bits }
    }

    /// Fraction of foreground pixels per block, used as the scaled mask
    /// channel of the network.
    pub fn block_fraction(&self, block: usize) -> Vec<f64> {
        let gw = self.width.div_ceil(block);
        let gh = self.height.div_ceil(block);
        let mut out = vec![0.0; gw * gh];
        for j in 0..gh {
            for i in 0..gw {
                let (x0, y0) = (i * block, j * block);
                let (x1, y1) = ((x0 + block).min(self.width), (y0 + block).min(self.height));
                let mut inside = 0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        inside += self.get(x, y) as usize;
                    }
                }
                out[j * gw + i] = inside as f64 / ((x1 - x0) * (y1 - y0)) as f64;
            }
        }
        out
    }

    /// Area-weighted centroid of the foreground.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Mask at field-grid resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl GridMask {
    pub fn full(width: usize, height: usize) -> Self {
        GridMask { width, height, bits: vec![true; width * height] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn check_same_size(img: &GrayImage, mask: &FingerMask) -> Result<()> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

/// Gradient-threshold segmentation parameters.
#[derive(Clone, Copy, Debug)]
pub struct SegmentParams {
    /// Threshold on the Sobel magnitude of `[0,1]` intensities.
    pub threshold: f64,
    /// Box window over which the magnitude is averaged before thresholding.
    pub smooth_radius: usize,
    pub close_radius: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { threshold: 0.08, smooth_radius: 4, close_radius: 2 }
    }
}

/// Finger region as the largest connected area of high local gradient.
pub fn segment(img: &GrayImage, params: SegmentParams) -> Result<FingerMask> {
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        img.get(x, y) as f64
    };
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = gx.hypot(gy) / 8.0;
        }
    }
    let smoothed = box_mean(&mag, w, h, params.smooth_radius);
    let raw = FingerMask::from_fn(w, h, |x, y| smoothed[y * w + x] > params.threshold);
    if raw.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mask = raw.largest_component().close_disk(params.close_radius).largest_component();
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Separable box mean with edge clamping.
pub(crate) fn box_mean(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let s: f64 = src[y * w + lo..=y * w + hi].iter().sum();
            tmp[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut s = 0.0;
            for k in lo..=hi {
                s += tmp[k * w + x];
            }
            out[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    out
}
