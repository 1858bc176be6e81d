//! Procedural ridge patterns: orientation field with optional singular
//! points, iterated oriented Gabor filtering, elliptical finger support.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::minutiae::MinutiaSet;
use crate::raster::{FingerMask, GrayImage};

const ORIENTATION_BINS: usize = 32;
const GABOR_ITERATIONS: usize = 6;
/// Minimum spacing between sampled minutiae, pixels.
const MINUTIA_SPACING: f64 = 6.0;
/// Minutiae are drawn from the mask eroded by this many pixels.
const MINUTIA_MARGIN: usize = 8;

/// Parameters drawn for one synthetic finger, exposed for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerParams {
    pub ridge_frequency: f64,
    pub base_orientation: f64,
    pub singular_points: Vec<(Vec2, f64)>,
    pub ellipse_center: Vec2,
    pub ellipse_axes: (f64, f64),
}

/// Renders a deterministic synthetic fingerprint with its mask and 20–60
/// landmark points inside the eroded mask.
pub fn synth_fingerprint(seed: u64, width: usize, height: usize) -> Result<(GrayImage, FingerMask, MinutiaSet)> {
    let (img, mask, min, _) = synth_fingerprint_with_params(seed, width, height)?;
    Ok((img, mask, min))
}

pub fn synth_fingerprint_with_params(
    seed: u64,
    width: usize,
    height: usize,
) -> Result<(GrayImage, FingerMask, MinutiaSet, FingerParams)> {
    if width < 64 || height < 64 {
        return Err(Error::DimensionMismatch(format!(
            "synthetic fingerprints need at least 64x64, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (w, h) = (width as f64, height as f64);

    // Support: wobbly ellipse.
    let ellipse_center = Vec2::new(
        w / 2.0 + rng.random_range(-0.04..0.04) * w,
        h / 2.0 + rng.random_range(-0.04..0.04) * h,
    );
    let ellipse_axes = (rng.random_range(0.30..0.40) * w, rng.random_range(0.36..0.45) * h);
    let wobble: [f64; 4] = [
        rng.random_range(-0.04..0.04),
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(-0.03..0.03),
        rng.random_range(0.0..2.0 * PI),
    ];
    let mask = FingerMask::from_fn(width, height, |x, y| {
        if x < 2 || y < 2 || x + 2 >= width || y + 2 >= height {
            return false;
        }
        let dx = (x as f64 - ellipse_center.x) / ellipse_axes.0;
        let dy = (y as f64 - ellipse_center.y) / ellipse_axes.1;
        let t = dy.atan2(dx);
        let limit = 1.0 + wobble[0] * (2.0 * t + wobble[1]).sin() + wobble[2] * (3.0 * t + wobble[3]).sin();
        dx.hypot(dy) <= limit
    })
    .largest_component();

    // Orientation field.
    let base_orientation = rng.random_range(0.0..PI);
    let poly: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let n_singular = rng.random_range(0..=2usize);
    let mut singular_points = Vec::new();
    for k in 0..n_singular {
        let r = rng.random_range(0.0..0.6);
        let a = rng.random_range(0.0..2.0 * PI);
        let p = Vec2::new(
            ellipse_center.x + r * ellipse_axes.0 * a.cos(),
            ellipse_center.y + r * ellipse_axes.1 * a.sin(),
        );
        // core then delta
        let sign = if k == 0 { 0.5 } else { -0.5 };
        singular_points.push((p, sign));
    }
    let orientation = |x: f64, y: f64| -> f64 {
        let (u, v) = ((x - ellipse_center.x) / w, (y - ellipse_center.y) / h);
        let mut t = base_orientation + poly[0] * u + poly[1] * v + poly[2] * 4.0 * u * v;
        for (p, s) in &singular_points {
            t += s * (y - p.y).atan2(x - p.x);
        }
        t.rem_euclid(PI)
    };

    let ridge_frequency = rng.random_range(1.0 / 12.0..1.0 / 8.0);
    let kernels = gabor_bank(ridge_frequency);
    let radius = kernels.radius as isize;

    let mut bins = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let t = orientation(x as f64, y as f64);
            bins[y * width + x] = ((t / PI * ORIENTATION_BINS as f64).round() as usize % ORIENTATION_BINS) as u8;
        }
    }

    let mut field: Vec<f64> = (0..width * height)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut next = vec![0.0; width * height];
    let (wi, hi) = (width as isize, height as isize);
    for _ in 0..GABOR_ITERATIONS {
        for y in 0..hi {
            for x in 0..wi {
                let k = &kernels.taps[bins[(y * wi + x) as usize] as usize];
                let side = 2 * radius + 1;
                let mut acc = 0.0;
                for dy in -radius..=radius {
                    let yy = (y + dy).clamp(0, hi - 1);
                    let row = &field[(yy * wi) as usize..((yy + 1) * wi) as usize];
                    let krow = &k[((dy + radius) * side) as usize..((dy + radius + 1) * side) as usize];
                    for (kk, dx) in (-radius..=radius).enumerate() {
                        let xx = (x + dx).clamp(0, wi - 1);
                        acc += krow[kk] * row[xx as usize];
                    }
                }
                next[(y * wi + x) as usize] = if acc >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        std::mem::swap(&mut field, &mut next);
    }

    // One 3×3 binomial smoothing pass; ridges dark.
    let mut data = vec![0f32; width * height];
    for y in 0..hi {
        for x in 0..wi {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            let mut acc = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let wgt = [1.0, 2.0, 1.0][(dx + 1) as usize] * [1.0, 2.0, 1.0][(dy + 1) as usize];
                    let xx = (x + dx).clamp(0, wi - 1);
                    let yy = (y + dy).clamp(0, hi - 1);
                    acc += wgt * field[(yy * wi + xx) as usize];
                }
            }
            data[(y * wi + x) as usize] = (0.5 - 0.4 * acc / 16.0) as f32;
        }
    }
    let image = GrayImage::new(width, height, data)?;

    let minutiae = sample_minutiae(&mut rng, &mask);
    let params = FingerParams { ridge_frequency, base_orientation, singular_points, ellipse_center, ellipse_axes };
    Ok((image, mask, minutiae, params))
}

struct GaborBank {
    radius: usize,
    taps: Vec<Vec<f64>>,
}

/// Even-symmetric Gabor kernels; bin `b` has ridges running at angle
/// `b·π/BINS`, i.e. the carrier oscillates along the normal direction.
fn gabor_bank(freq: f64) -> GaborBank {
    let sigma = 0.45 / freq;
    let radius = (2.2 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let taps = (0..ORIENTATION_BINS)
        .map(|b| {
            let t = b as f64 * PI / ORIENTATION_BINS as f64;
            let (s, c) = t.sin_cos();
            let mut k = vec![0.0; side * side];
            for dy in 0..side {
                for dx in 0..side {
                    let (x, y) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
                    let along = x * c + y * s;
                    let across = -x * s + y * c;
                    let env = (-(along * along + across * across) / (2.0 * sigma * sigma)).exp();
                    k[dy * side + dx] = env * (2.0 * PI * freq * across).cos();
                }
            }
            k
        })
        .collect();
    GaborBank { radius, taps }
}

fn sample_minutiae(rng: &mut ChaCha8Rng, mask: &FingerMask) -> MinutiaSet {
    let inner = mask.erode(MINUTIA_MARGIN);
    let candidates: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|(x, y)| inner.get(*x, *y))
        .collect();
    let target = rng.random_range(20..=60usize);
    let mut points: Vec<Vec2> = Vec::with_capacity(target);
    if candidates.is_empty() {
        return MinutiaSet::default();
    }
    let mut attempts = 0;
    while points.len() < target && attempts < 50 * target {
        attempts += 1;
        let (x, y) = candidates[rng.random_range(0..candidates.len())];
        let p = Vec2::new(x as f64 + rng.random_range(0.0..1.0), y as f64 + rng.random_range(0.0..1.0));
        if points.iter().all(|q| (*q - p).norm() >= MINUTIA_SPACING) {
            points.push(p);
        }
    }
    MinutiaSet::from_points(points)
}
