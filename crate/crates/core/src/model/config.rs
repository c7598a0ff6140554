use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Indoor-style depth cap.
pub const INDOOR_RANGE: (f64, f64) = (1e-3, 10.0);
/// Outdoor-style depth cap.
pub const OUTDOOR_RANGE: (f64, f64) = (1e-3, 80.0);

/// Downsampling factor of the coarsest pyramid level.
pub const MAX_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Strided dense convs plus residual conv blocks, four stages.
    ToyPyramid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels of the finest pyramid level; levels carry `C, 2C, 4C, 8C`.
    pub base_channels: usize,
    pub n_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub use_glkam: bool,
    /// Off: fixed uniform bins.
    pub use_gbpm: bool,
    pub encoder: EncoderKind,
    pub ppm_grids: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            n_bins: 32,
            d_min: INDOOR_RANGE.0,
            d_max: INDOOR_RANGE.1,
            use_glkam: true,
            use_gbpm: true,
            encoder: EncoderKind::ToyPyramid,
            ppm_grids: vec![1, 2, 3, 6],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size hyperparameters: `C = 192`, 256 bins.
    pub fn full_size() -> Self {
        ModelConfig {
            base_channels: 192,
            n_bins: 256,
            ..Self::default()
        }
    }

    /// Drops pooling grids that do not fit the coarsest level of an
    /// `height×width` input.
    pub fn fit_to_input(mut self, height: usize, width: usize) -> Self {
        let coarse = (height / MAX_STRIDE).min(width / MAX_STRIDE).max(1);
        self.ppm_grids.retain(|&g| g <= coarse);
        if self.ppm_grids.is_empty() {
            self.ppm_grids.push(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(4) {
            return bad(format!("base channels {} must be a positive multiple of 4", self.base_channels));
        }
        if self.n_bins == 0 {
            return bad("n_bins must be positive".into());
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return bad(format!("invalid depth range ({}, {})", self.d_min, self.d_max));
        }
        if self.ppm_grids.is_empty() || self.ppm_grids.contains(&0) {
            return bad(format!("invalid pooling grids {:?}", self.ppm_grids));
        }
        Ok(())
    }

    pub fn validate_input(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || !height.is_multiple_of(MAX_STRIDE) || !width.is_multiple_of(MAX_STRIDE) {
            return Err(Error::invalid(
                "encode",
                format!("input {height}×{width} must be a positive multiple of {MAX_STRIDE}"),
            ));
        }
        let coarse = (height / MAX_STRIDE).min(width / MAX_STRIDE);
        let max_grid = self.ppm_grids.iter().copied().max().unwrap_or(1);
        if max_grid > coarse {
            return Err(Error::invalid(
                "ppm",
                format!("pooling grid {max_grid} larger than the {coarse}×{coarse} coarsest map"),
            ));
        }
        Ok(())
    }

    /// Flat numeric record stored next to parameters in checkpoints:
    /// `[C, n_bins, d_min, d_max, glkam, gbpm, encoder, seed_hi, seed_lo, grids...]`.
    pub fn to_record(&self) -> Vec<f64> {
        let mut r = vec![
            self.base_channels as f64,
            self.n_bins as f64,
            self.d_min,
            self.d_max,
            self.use_glkam as u8 as f64,
            self.use_gbpm as u8 as f64,
            0.0,
            (self.seed >> 32) as f64,
            (self.seed & 0xffff_ffff) as f64,
        ];
        r.extend(self.ppm_grids.iter().map(|&g| g as f64));
        r
    }

    pub fn from_record(r: &[f64]) -> Result<Self> {
        if r.len() < 10 {
            return Err(Error::invalid("model config", format!("record too short ({} values)", r.len())));
        }
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid("model config", format!("bad count {v}")))
            }
        };
        if r[6] != 0.0 {
            return Err(Error::invalid("model config", format!("unknown encoder code {}", r[6])));
        }
        let cfg = ModelConfig {
            base_channels: count(r[0])?,
            n_bins: count(r[1])?,
            d_min: r[2],
            d_max: r[3],
            use_glkam: r[4] != 0.0,
            use_gbpm: r[5] != 0.0,
            encoder: EncoderKind::ToyPyramid,
            seed: ((count(r[7])? as u64) << 32) | count(r[8])? as u64,
            ppm_grids: r[9..].iter().map(|&g| count(g)).collect::<Result<_>>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let cfg = ModelConfig {
            seed: u64::MAX - 5,
            use_glkam: false,
            ppm_grids: vec![1, 2],
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_record(&cfg.to_record()).unwrap(), cfg);
    }

    #[test]
    fn input_contract() {
        let cfg = ModelConfig::default();
        assert!(cfg.validate_input(64, 64).is_err(), "grid 6 does not fit a 2×2 map");
        let fitted = cfg.fit_to_input(64, 64);
        assert_eq!(fitted.ppm_grids, vec![1, 2]);
        assert!(fitted.validate_input(64, 64).is_ok());
        assert!(fitted.validate_input(48, 64).is_err());
        assert_eq!(ModelConfig::default().fit_to_input(192, 192).ppm_grids, vec![1, 2, 3, 6]);
    }

    #[test]
    fn channel_contract() {
        let cfg = ModelConfig {
            base_channels: 6,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::full_size().validate().is_ok());
    }
}
