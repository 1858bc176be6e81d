//! Named parameter tensors, their gradients and the `DFNN` checkpoint file.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::config::NetworkConfig;

pub const DFNN_MAGIC: &[u8; 4] = b"DFNN";
pub const DFNN_VERSION: u32 = 1;

/// How a tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(gain / fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamTensor {
    /// Weight tensors (rank ≥ 2) receive weight decay; biases and
    /// normalisation affines do not.
    pub fn is_weight(&self) -> bool {
        self.shape.len() >= 2
    }
}

/// All learnable tensors of a network, in architecture order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub tensors: Vec<ParamTensor>,
}

impl NetworkParams {
    /// Seeded fan-in-scaled uniform initialisation.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = crate::nn::network::param_specs(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .into_iter()
            .map(|s| {
                let n = s.len();
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::FanIn { fan_in, gain } => {
                        let b = (gain / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-b..b) as f32).collect()
                    }
                };
                ParamTensor { name: s.name, shape: s.shape, data }
            })
            .collect();
        Ok(NetworkParams { config: config.clone(), tensors })
    }

    /// Every tensor set to zero (including normalisation scales).
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        p.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        Ok(p)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn to_f64(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data.iter().map(|v| *v as f64).collect()).collect()
    }

    /// Checks names and shapes against the architecture of `self.config`.
    pub fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        let specs = crate::nn::network::param_specs(&self.config);
        if specs.len() != self.tensors.len() {
            return Err(Error::ModelConfigMismatch(format!(
                "config implies {} tensors, checkpoint has {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if s.name != t.name || s.shape != t.shape || t.data.len() != s.len() {
                return Err(Error::ModelConfigMismatch(format!(
                    "expected {} {:?}, found {} {:?}",
                    s.name, s.shape, t.name, t.shape
                )));
            }
        }
        Ok(())
    }

    /// `DFNN` encoding: magic, version, config echo (length-prefixed
    /// `key=value` text), tensor count, then per tensor the name, shape and
    /// little-endian `f32` data. All integers are little-endian `u32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        out.extend_from_slice(DFNN_MAGIC);
        put(&mut out, DFNN_VERSION);
        let cfg: String = self
            .config
            .to_key_values()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        put(&mut out, self.tensors.len() as u32);
        for t in &self.tensors {
            put(&mut out, t.name.len() as u32);
            out.extend_from_slice(t.name.as_bytes());
            put(&mut out, t.shape.len() as u32);
            for d in &t.shape {
                put(&mut out, *d as u32);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != DFNN_MAGIC {
            return Err(Error::Format("missing DFNN magic".into()));
        }
        let version = r.u32()?;
        if version != DFNN_VERSION {
            return Err(Error::Format(format!("unsupported DFNN version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
        let kv = crate::io::read_key_values(cfg_text.as_bytes())?;
        let config = NetworkConfig::from_key_values(&kv)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(ParamTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after DFNN tensors".into()));
        }
        let params = NetworkParams { config, tensors };
        params.check_layout()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated DFNN file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Gradient buffers laid out like [`NetworkParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients { tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
