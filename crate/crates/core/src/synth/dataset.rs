//! Seeded sample generation and the on-disk dataset archive.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::io;
use crate::synth::distortion::{synth_distortion, DistortionKind, DistortionPrototype, PrototypeSampler};
use crate::synth::fingerprint::synth_fingerprint;
use crate::synth::pair::{make_pair, TrainingSample};

/// Generates the sample for `seed`: finger, random prototype, pair.
pub fn generate_sample(
    seed: u64,
    size: usize,
    block: usize,
    sampler: &PrototypeSampler,
) -> Result<(TrainingSample, DistortionPrototype)> {
    let (normal, mask, minutiae) = synth_fingerprint(seed, size, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (cx, cy) = mask.centroid().ok_or(Error::EmptyMask)?;
    let proto = sampler.sample(&mut rng, Vec2::new(cx, cy), size as f64);
    let grid = mask.to_grid(block);
    let field = synth_distortion(&proto, grid.width, grid.height, block, &grid)?;
    let sample = make_pair(&normal, &mask, &minutiae, &field)?;
    Ok((sample, proto))
}

/// Generates consecutive seeds in parallel; output order follows the seeds.
pub fn generate_samples(
    seeds: &[u64],
    size: usize,
    block: usize,
    sampler: &PrototypeSampler,
) -> Result<Vec<(u64, TrainingSample, DistortionPrototype)>> {
    seeds
        .par_iter()
        .map(|&s| generate_sample(s, size, block, sampler).map(|(t, p)| (s, t, p)))
        .collect()
}

pub fn sample_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("sample_{seed:05}"))
}

pub const MANIFEST_HEADER: [&str; 6] = ["seed", "kind", "magnitude", "falloff", "center_x", "center_y"];

/// Writes one sample directory.
pub fn write_sample(root: &Path, seed: u64, s: &TrainingSample) -> Result<()> {
    let dir = sample_dir(root, seed);
    fs::create_dir_all(&dir)?;
    io::write_gray(&dir.join("normal.png"), &s.normal)?;
    io::write_gray(&dir.join("distorted.png"), &s.distorted)?;
    io::write_mask(&dir.join("mask.png"), &s.mask)?;
    io::write_mask(&dir.join("normal_mask.png"), &s.normal_mask)?;
    io::write_dfld(&dir.join("gt.dfld"), &s.gt)?;
    io::write_minutiae_file(&dir.join("minutiae_normal.csv"), &s.normal_minutiae)?;
    io::write_minutiae_file(&dir.join("minutiae_distorted.csv"), &s.distorted_minutiae)?;
    Ok(())
}

/// Writes the full archive: one directory per sample plus `manifest.csv`.
pub fn write_dataset(root: &Path, samples: &[(u64, TrainingSample, DistortionPrototype)]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut wr = csv::Writer::from_path(root.join("manifest.csv"))?;
    wr.write_record(MANIFEST_HEADER)?;
    for (seed, s, p) in samples {
        write_sample(root, *seed, s)?;
        wr.write_record([
            seed.to_string(),
            p.kind.name().to_string(),
            p.magnitude.to_string(),
            p.falloff.to_string(),
            p.center.x.to_string(),
            p.center.y.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub seed: u64,
    pub prototype: DistortionPrototype,
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rd = csv::Reader::from_path(root.join("manifest.csv"))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let get = |k: usize| rec.get(k).ok_or_else(|| Error::Format("short manifest row".into()));
        let num = |k: usize| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| Error::Format(format!("manifest: {e}")))
        };
        out.push(ManifestEntry {
            seed: get(0)?.parse().map_err(|e| Error::Format(format!("manifest: {e}")))?,
            prototype: DistortionPrototype {
                kind: get(1)?.parse::<DistortionKind>()?,
                magnitude: num(2)?,
                falloff: num(3)?,
                center: Vec2::new(num(4)?, num(5)?),
            },
        });
    }
    Ok(out)
}

/// Loads one sample directory. Pixel values come back quantised to 8 bits.
pub fn read_sample(root: &Path, seed: u64) -> Result<TrainingSample> {
    let dir = sample_dir(root, seed);
    Ok(TrainingSample {
        distorted: io::read_gray(&dir.join("distorted.png"))?,
        mask: io::read_mask(&dir.join("mask.png"))?,
        gt: io::read_dfld(&dir.join("gt.dfld"))?,
        normal: io::read_gray(&dir.join("normal.png"))?,
        normal_mask: io::read_mask(&dir.join("normal_mask.png"))?,
        normal_minutiae: io::read_minutiae_file(&dir.join("minutiae_normal.csv"))?,
        distorted_minutiae: io::read_minutiae_file(&dir.join("minutiae_distorted.csv"))?,
    })
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn read_dataset(root: &Path) -> Result<Vec<(u64, TrainingSample)>> {
    read_manifest(root)?
        .par_iter()
        .map(|e| read_sample(root, e.seed).map(|s| (e.seed, s)))
        .collect()
}
