//! Principal-component representation of distortion fields.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field::DistortionField;

pub const DPCA_MAGIC: &[u8; 4] = b"DPCA";
pub const DPCA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 8;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub grid_w: usize,
    pub grid_h: usize,
    pub block: usize,
    /// Flattened as `x0, y0, x1, y1, …` in row-major cell order.
    pub mean: Vec<f64>,
    /// Orthonormal rows, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_field(&self, f: &DistortionField) -> Result<()> {
        if (f.grid_w(), f.grid_h(), f.block_size()) != (self.grid_w, self.grid_h, self.block) {
            return Err(Error::GridMismatch(format!(
                "model grid {}×{}/{} vs field {}×{}/{}",
                self.grid_w,
                self.grid_h,
                self.block,
                f.grid_w(),
                f.grid_h(),
                f.block_size()
            )));
        }
        Ok(())
    }

    /// Keeps the first `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.k());
        PcaModel {
            components: self.components[..k].to_vec(),
            variances: self.variances[..k].to_vec(),
            ..self.clone()
        }
    }

    /// Largest deviation of `C·Cᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    /// Magic, version, grid width/height/block and `k` as `u32`, then mean,
    /// components and variances as little-endian `f32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DPCA_MAGIC);
        for v in [DPCA_VERSION, self.grid_w as u32, self.grid_h as u32, self.block as u32, self.k() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let vals = self.mean.iter().chain(self.components.iter().flatten()).chain(&self.variances);
        for v in vals {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PcaModel> {
        if bytes.len() < 24 || &bytes[..4] != DPCA_MAGIC {
            return Err(Error::Format("missing DPCA header".into()));
        }
        let u = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        if u(0) != DPCA_VERSION as usize {
            return Err(Error::Format(format!("unsupported DPCA version {}", u(0))));
        }
        let (grid_w, grid_h, block, k) = (u(1), u(2), u(3), u(4));
        let d = 2 * grid_w * grid_h;
        let n = d + k * d + k;
        let body = &bytes[24..];
        if body.len() != 4 * n {
            return Err(Error::Format(format!("DPCA body has {} bytes, expected {}", body.len(), 4 * n)));
        }
        let vals: Vec<f64> =
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(PcaModel {
            grid_w,
            grid_h,
            block,
            mean: vals[..d].to_vec(),
            components: vals[d..d + k * d].chunks(d).map(|c| c.to_vec()).collect(),
            variances: vals[d + k * d..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PcaModel> {
        PcaModel::decode(&fs::read(path)?)
    }
}

/// Mean-centred PCA through the eigendecomposition of the `n × n` Gram
/// matrix. At most `min(k, n − 1, dim)` components are kept, fewer when the
/// data has lower rank. Samples are sorted internally so the result does not
/// depend on their order.
pub fn pca_fit(fields: &[DistortionField], k: usize) -> Result<PcaModel> {
    if fields.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: fields.len() });
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let f0 = &fields[0];
    for f in &fields[1..] {
        if !f0.same_grid(f) {
            return Err(Error::GridMismatch("fields have different grids".into()));
        }
    }
    let mut rows: Vec<Vec<f64>> = fields.iter().map(|f| f.to_flat()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let keep = k.min(n - 1).min(d);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(keep);
    let mut variances = Vec::with_capacity(keep);
    for &idx in order.iter().take(keep) {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > RANK_TOL * top) || lambda <= 0.0 {
            break;
        }
        let u = eig.eigenvectors.column(idx);
        let mut v: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)] * u[i]).sum()).collect();
        // two passes of Gram-Schmidt against earlier components
        for _ in 0..2 {
            for c in &components {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        canonical_sign(&mut v);
        components.push(v);
        variances.push(lambda / (n - 1) as f64);
    }
    Ok(PcaModel { grid_w: f0.grid_w(), grid_h: f0.grid_h(), block: f0.block_size(), mean, components, variances })
}

/// Flips `v` so its first clearly nonzero entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if let Some(first) = v.iter().find(|a| a.abs() > 1e-9 * big) {
        if *first < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
    }
}

pub fn pca_project(model: &PcaModel, field: &DistortionField) -> Result<Vec<f64>> {
    model.check_field(field)?;
    let f = field.to_flat();
    Ok(model
        .components
        .iter()
        .map(|c| c.iter().zip(&f).zip(&model.mean).map(|((c, x), m)| c * (x - m)).sum())
        .collect())
}

pub fn pca_reconstruct(model: &PcaModel, coeffs: &[f64]) -> Result<DistortionField> {
    if coeffs.len() > model.k() {
        return Err(Error::TooManyCoefficients { given: coeffs.len(), available: model.k() });
    }
    let mut f = model.mean.clone();
    for (a, c) in coeffs.iter().zip(&model.components) {
        f.iter_mut().zip(c).for_each(|(v, ci)| *v += a * ci);
    }
    DistortionField::from_flat(model.grid_w, model.grid_h, model.block, &f)
}

/// Best approximation of `gt` any method predicting the model's
/// coefficients could reach.
pub fn pca_oracle_rectify(model: &PcaModel, gt: &DistortionField) -> Result<DistortionField> {
    pca_reconstruct(model, &pca_project(model, gt)?)
}
