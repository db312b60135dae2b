use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of encoder blocks `k`.
    pub levels: usize,
    /// Frames to predict (odd).
    pub frames: usize,
    /// Channel width per encoder level before the multiplier; the last entry
    /// repeats when `levels` exceeds the list.
    pub base_widths: Vec<usize>,
    pub width_multiplier: f64,
    /// Densely connected convolutions per decoder block.
    pub dense_layers: usize,
    pub leaky_slope: f64,
    pub use_lw: bool,
    pub use_itn: bool,
    pub use_refiner: bool,
    /// Experimental: one decoder shared by every non-middle frame.
    pub share_nonmiddle_decoders: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            frames: 3,
            base_widths: vec![32, 64, 128, 256, 256],
            width_multiplier: 1.0,
            dense_layers: 5,
            leaky_slope: 0.2,
            use_lw: true,
            use_itn: true,
            use_refiner: true,
            share_nonmiddle_decoders: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.frames < 3 || self.frames % 2 == 0 {
            return Err(Error::Config(format!(
                "frames must be odd and >= 3, got {}",
                self.frames
            )));
        }
        if self.base_widths.is_empty() || self.base_widths.contains(&0) {
            return Err(Error::Config("base_widths must be non-empty and positive".into()));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config("width_multiplier must be positive".into()));
        }
        if self.dense_layers == 0 {
            return Err(Error::Config("dense_layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Encoder channel width of level `l` for `l = 1..=levels` (index `l - 1`).
    pub fn widths(&self) -> Vec<usize> {
        (0..self.levels)
            .map(|i| {
                let base = self.base_widths[i.min(self.base_widths.len() - 1)];
                ((base as f64 * self.width_multiplier).round() as usize).max(4)
            })
            .collect()
    }

    pub fn growth(width: usize) -> usize {
        (width / 2).max(4)
    }

    /// 0-based index of the middle frame.
    pub fn middle(&self) -> usize {
        self.frames / 2
    }

    /// Inputs must be divisible by `2^levels` in both dimensions.
    pub fn required_multiple(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.required_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Input(format!(
                "input {width}x{height} must have both dimensions divisible by 2^{} = {m}",
                self.levels
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; identifies the parameter layout.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}
