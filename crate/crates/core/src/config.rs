//! Flat `key=value` run configuration shared by all commands.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{check_edges, DEFAULT_EDGES, DEFAULT_MIN_NORM, DEFAULT_NCC_EROSION};
use crate::nn::config::NetworkConfig;
use crate::nn::train::TrainOptions;
use crate::pca::DEFAULT_K;
use crate::synth::PrototypeSampler;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainOptions,
    pub sampler: PrototypeSampler,
    /// Fraction of a dataset held out for validation during training.
    pub validation_fraction: f64,
    pub bin_edges: Vec<f64>,
    pub ncc_erosion: usize,
    pub wrong_min_norm: f64,
    pub pca_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainOptions::default(),
            sampler: PrototypeSampler::default(),
            validation_fraction: 0.1,
            bin_edges: DEFAULT_EDGES.to_vec(),
            ncc_erosion: DEFAULT_NCC_EROSION,
            wrong_min_norm: DEFAULT_MIN_NORM,
            pca_k: DEFAULT_K,
        }
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("{key}={value}: expected two comma-separated numbers"));
    if parts.len() != 2 {
        return Err(bad());
    }
    Ok((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?))
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() { "inf".into() } else { format!("{v:?}") }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.network.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        match key {
            "magnitude_range" => self.sampler.magnitude = parse_pair(key, value)?,
            "falloff_range" => self.sampler.falloff_fraction = parse_pair(key, value)?,
            "center_jitter" => self.sampler.center_jitter = value.parse().map_err(|e| bad(&e))?,
            "validation_fraction" => self.validation_fraction = value.parse().map_err(|e| bad(&e))?,
            "bin_edges" => {
                self.bin_edges = value
                    .split(',')
                    .map(|s| match s.trim() {
                        "inf" | "+inf" => Ok(f64::INFINITY),
                        t => t.parse::<f64>(),
                    })
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            "ncc_erosion" => self.ncc_erosion = value.parse().map_err(|e| bad(&e))?,
            "wrong_min_norm" => self.wrong_min_norm = value.parse().map_err(|e| bad(&e))?,
            "pca_k" => self.pca_k = value.parse().map_err(|e| bad(&e))?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        check_edges(&self.bin_edges)?;
        let (a, b) = self.sampler.magnitude;
        let (c, d) = self.sampler.falloff_fraction;
        if !(a > 0.0 && a <= b && c > 0.0 && c <= d && self.sampler.center_jitter >= 0.0) {
            return Err(Error::Config("sampler ranges must be positive and ordered".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.pca_k == 0 || !(self.wrong_min_norm > 0.0) {
            return Err(Error::Config("pca_k and wrong_min_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn from_key_values(kv: &[(String, String)]) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&crate::io::read_key_values(fs::File::open(path)?)?)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = self.network.to_key_values();
        kv.extend(self.train.to_key_values());
        let s = &self.sampler;
        kv.push(("magnitude_range".into(), format!("{},{}", fmt_f(s.magnitude.0), fmt_f(s.magnitude.1))));
        kv.push((
            "falloff_range".into(),
            format!("{},{}", fmt_f(s.falloff_fraction.0), fmt_f(s.falloff_fraction.1)),
        ));
        kv.push(("center_jitter".into(), fmt_f(s.center_jitter)));
        kv.push(("validation_fraction".into(), fmt_f(self.validation_fraction)));
        let edges: Vec<String> = self.bin_edges.iter().map(|e| fmt_f(*e)).collect();
        kv.push(("bin_edges".into(), edges.join(",")));
        kv.push(("ncc_erosion".into(), self.ncc_erosion.to_string()));
        kv.push(("wrong_min_norm".into(), fmt_f(self.wrong_min_norm)));
        kv.push(("pca_k".into(), self.pca_k.to_string()));
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes the resolved configuration as `resolved_config.txt` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("resolved_config.txt"), self.to_text())?;
        Ok(())
    }
}
