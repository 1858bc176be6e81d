use crate::error::{Error, Result};

/// Number of stride-2 downsampling blocks; the output grid is 1/16 of the
/// input.
pub const DOWNSAMPLING_BLOCKS: usize = 4;

/// Architecture hyper-parameters of the field regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Square input side in pixels; must be a multiple of 16.
    pub input_size: usize,
    /// Width of the first downsampling block; doubles at each of the four.
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub pyramid_dilations: Vec<usize>,
    pub include_gap_branch: bool,
    pub block_size: usize,
    /// Fixed multiplier on the linear output layer, in pixels.
    pub output_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 128,
            base_channels: 16,
            num_residual_blocks: 4,
            pyramid_dilations: vec![1, 2, 4],
            include_gap_branch: true,
            block_size: 16,
            output_scale: 4.0,
        }
    }
}

impl NetworkConfig {
    /// 32×32 input, 4 base channels; small enough for exhaustive gradient
    /// checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            input_size: 32,
            base_channels: 4,
            num_residual_blocks: 2,
            pyramid_dilations: vec![1, 2],
            include_gap_branch: true,
            block_size: 16,
            output_scale: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let down = 1usize << DOWNSAMPLING_BLOCKS;
        if self.block_size != down {
            return Err(Error::Config(format!(
                "block_size must be {down} (four stride-2 blocks), got {}",
                self.block_size
            )));
        }
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of {down}, got {}",
                self.input_size
            )));
        }
        if self.base_channels < 4 {
            return Err(Error::Config(format!("base_channels must be >= 4, got {}", self.base_channels)));
        }
        if self.pyramid_dilations.is_empty() {
            return Err(Error::Config("pyramid_dilations must be nonempty".into()));
        }
        if self.pyramid_dilations[0] == 0 || self.pyramid_dilations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "pyramid_dilations must be positive and strictly increasing, got {:?}",
                self.pyramid_dilations
            )));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Config("output_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.input_size / self.block_size
    }

    /// Channels after the downsampling stage.
    pub fn feature_channels(&self) -> usize {
        self.base_channels << (DOWNSAMPLING_BLOCKS - 1)
    }

    pub fn pyramid_channels(&self) -> usize {
        (self.feature_channels() / 2).max(4)
    }

    pub fn head_channels(&self) -> usize {
        (self.feature_channels() / 4).max(4)
    }

    /// `key=value` lines, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let dil: Vec<String> = self.pyramid_dilations.iter().map(|d| d.to_string()).collect();
        vec![
            ("input_size".into(), self.input_size.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("num_residual_blocks".into(), self.num_residual_blocks.to_string()),
            ("pyramid_dilations".into(), dil.join(",")),
            ("include_gap_branch".into(), self.include_gap_branch.to_string()),
            ("block_size".into(), self.block_size.to_string()),
            ("output_scale".into(), format!("{:?}", self.output_scale)),
        ]
    }

    /// Applies one `key=value` setting; returns `false` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        match key {
            "input_size" => self.input_size = value.parse().map_err(|e| bad(&e))?,
            "base_channels" => self.base_channels = value.parse().map_err(|e| bad(&e))?,
            "num_residual_blocks" => self.num_residual_blocks = value.parse().map_err(|e| bad(&e))?,
            "pyramid_dilations" => {
                self.pyramid_dilations = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            "include_gap_branch" => self.include_gap_branch = value.parse().map_err(|e| bad(&e))?,
            "block_size" => self.block_size = value.parse().map_err(|e| bad(&e))?,
            "output_scale" => self.output_scale = value.parse().map_err(|e| bad(&e))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_key_values(kv: &[(String, String)]) -> Result<Self> {
        let mut c = NetworkConfig::default();
        for (k, v) in kv {
            if !c.set(k, v)? {
                return Err(Error::Config(format!("unknown network key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }
}
