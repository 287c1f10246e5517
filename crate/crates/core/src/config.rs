//! Search and reset hyperparameters.
//!
//! Two clocks are in play. `block_size` and `safeguard` count input frames
//! (10 ms each); `blank_threshold`, hypothesis heads and emit times count
//! encoder frames (`subsample_factor` input frames each).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Beam width B.
    pub beam_width: usize,
    /// Block length in input frames.
    pub block_size: usize,
    /// Per-block output length ratio; the step cap is `floor(T'_block * length_ratio)`.
    pub length_ratio: f64,
    /// Minimum input frames since the last reset before a reset may fire.
    pub safeguard: usize,
    /// Consecutive blank-equivalent encoder frames that trigger a reset.
    pub blank_threshold: usize,
    /// Non-blank CTC peaks below this probability count as blank.
    pub spike_threshold: f64,
    pub lm_weight: f64,
    /// MoChA chunk width w, in encoder frames.
    pub chunk_width: usize,
    pub subsample_factor: usize,
    /// Selection probabilities at or above this value stop the monotonic scan.
    pub boundary_threshold: f64,
    pub enable_length_norm: bool,
    pub enable_lm_carryover: bool,
    pub enable_safeguard: bool,
    pub enable_condition2: bool,
    pub enable_backoff_init: bool,
    /// Let hypotheses that find no boundary in a block complete with eos.
    pub enable_parked_eos: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 10,
            block_size: 32,
            length_ratio: 1.0,
            safeguard: 1600,
            blank_threshold: 40,
            spike_threshold: 0.1,
            lm_weight: 0.0,
            chunk_width: 4,
            subsample_factor: 4,
            boundary_threshold: 0.5,
            enable_length_norm: true,
            enable_lm_carryover: true,
            enable_safeguard: true,
            enable_condition2: true,
            enable_backoff_init: true,
            enable_parked_eos: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.beam_width == 0 {
            return fail("beam_width must be positive");
        }
        if self.block_size == 0 {
            return fail("block_size must be positive");
        }
        if !(self.length_ratio.is_finite() && self.length_ratio > 0.0) {
            return fail("length_ratio must be a positive real");
        }
        if self.blank_threshold == 0 {
            return fail("blank_threshold must be positive");
        }
        if !(0.0..=1.0).contains(&self.spike_threshold) {
            return fail("spike_threshold must lie in [0, 1]");
        }
        if !(self.lm_weight.is_finite() && self.lm_weight >= 0.0) {
            return fail("lm_weight must be a non-negative real");
        }
        if self.chunk_width == 0 {
            return fail("chunk_width must be positive");
        }
        if self.subsample_factor == 0 {
            return fail("subsample_factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.boundary_threshold) {
            return fail("boundary_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Encoder frames produced by `input_frames` input frames.
    pub fn encoder_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.subsample_factor)
    }

    /// Step cap for a block of `encoder_frames` frames: floor(T' * R_len), at least 1.
    pub fn max_steps(&self, encoder_frames: usize) -> usize {
        ((encoder_frames as f64 * self.length_ratio).floor() as usize).max(1)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            Error::parse(path, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_published_setup() {
        let c = DecodeConfig::default();
        assert_eq!(c.beam_width, 10);
        assert_eq!(c.chunk_width, 4);
        assert_eq!(c.safeguard, 1600);
        assert_eq!(c.blank_threshold, 40);
        assert_eq!(c.spike_threshold, 0.1);
        assert_eq!(c.length_ratio, 1.0);
        assert!(c.enable_length_norm && c.enable_lm_carryover && c.enable_safeguard);
        assert!(c.enable_condition2 && c.enable_backoff_init);
        c.validate().unwrap();
    }

    #[test]
    fn max_steps_floors_and_clamps() {
        let mut c = DecodeConfig::default();
        assert_eq!(c.max_steps(8), 8);
        c.length_ratio = 0.3;
        assert_eq!(c.max_steps(8), 2);
        assert_eq!(c.max_steps(1), 1);
    }

    #[test]
    fn encoder_frames_round_up() {
        let c = DecodeConfig::default();
        assert_eq!(c.encoder_frames(32), 8);
        assert_eq!(c.encoder_frames(33), 9);
        assert_eq!(c.encoder_frames(0), 0);
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let c = DecodeConfig::from_toml_str("beam_width = 3\nenable_safeguard = false\n").unwrap();
        assert_eq!(c.beam_width, 3);
        assert!(!c.enable_safeguard);
        assert_eq!(c.blank_threshold, 40);
    }

    #[test]
    fn unknown_key_and_bad_value_rejected() {
        assert!(DecodeConfig::from_toml_str("beam = 3\n").is_err());
        assert!(DecodeConfig::from_toml_str("beam_width = 0\n").is_err());
        assert!(DecodeConfig::from_toml_str("spike_threshold = 1.5\n").is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_exact(
            beam_width in 1usize..64,
            block_size in 1usize..4096,
            length_ratio in 1e-3f64..8.0,
            safeguard in 0usize..100_000,
            blank_threshold in 1usize..500,
            spike_threshold in 0.0f64..=1.0,
            lm_weight in 0.0f64..4.0,
            chunk_width in 1usize..16,
            subsample_factor in 1usize..16,
            flags in proptest::array::uniform6(any::<bool>()),
        ) {
            let cfg = DecodeConfig {
                beam_width, block_size, length_ratio, safeguard, blank_threshold,
                spike_threshold, lm_weight, chunk_width, subsample_factor,
                boundary_threshold: 0.5,
                enable_length_norm: flags[0],
                enable_lm_carryover: flags[1],
                enable_safeguard: flags[2],
                enable_condition2: flags[3],
                enable_backoff_init: flags[4],
                enable_parked_eos: flags[5],
            };
            let back = DecodeConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            prop_assert_eq!(back.length_ratio.to_bits(), cfg.length_ratio.to_bits());
            prop_assert_eq!(back.spike_threshold.to_bits(), cfg.spike_threshold.to_bits());
            prop_assert_eq!(back.lm_weight.to_bits(), cfg.lm_weight.to_bits());
            prop_assert_eq!(back, cfg);
        }
    }
}
