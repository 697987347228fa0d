//! Run configuration: TOML key-value file with built-in defaults.
//!
//! Precedence: CLI flag > `CONTOURDIFF_SEED` env var (seed only) > config
//! file > built-in default. The CLI layer applies flag overrides after
//! loading; `RunConfig::load` applies the env var.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Working resolution (square slices).
    pub resolution: usize,
    /// Diffusion step count T.
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Probability that the adjacent-slice channel carries a real neighbor.
    pub p_adj: f64,
    /// Canny thresholds on the 0-255 intensity scale, per domain.
    pub canny_low_input: f32,
    pub canny_high_input: f32,
    pub canny_low_output: f32,
    pub canny_high_output: f32,
    pub canny_sigma: f32,
    /// Candidate count for initial-slice selection.
    pub n_candidates: usize,
    pub ddim_steps: usize,
    /// Initial-slice candidate sampler: "ddpm" (stochastic full chain) or
    /// "ddim-seeded" (deterministic trajectory per candidate seed).
    pub initial_sampler: String,
    pub seg_epochs: usize,
    pub seg_lr: f64,
    pub seg_batch_size: usize,
    pub bit_depth: u8,
    pub seed: u64,
    /// Denoiser channel widths = reference widths scaled by this factor.
    pub width_factor: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Artifact filter toggle (phantoms carry no scanner table; on by default).
    pub artifact_filter: bool,
    pub data_dir: String,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: 256,
            t_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            p_adj: 0.2,
            canny_low_input: 30.0,
            canny_high_input: 50.0,
            canny_low_output: 50.0,
            canny_high_output: 100.0,
            canny_sigma: 1.0,
            n_candidates: 16,
            ddim_steps: 50,
            initial_sampler: "ddpm".to_string(),
            seg_epochs: 100,
            seg_lr: 1e-3,
            seg_batch_size: 8,
            bit_depth: 8,
            seed: 0,
            width_factor: 1.0,
            train_steps: 50_000,
            batch_size: 4,
            lr: 1e-4,
            artifact_filter: true,
            data_dir: "data".to_string(),
            out_dir: "out".to_string(),
        }
    }
}

impl RunConfig {
    /// A configuration sized for fast CPU-only runs on phantom data.
    pub fn desk_scale() -> Self {
        RunConfig {
            resolution: 32,
            n_candidates: 4,
            ddim_steps: 18,
            initial_sampler: "ddim-seeded".to_string(),
            seg_epochs: 24,
            width_factor: 0.25,
            train_steps: 900,
            batch_size: 8,
            lr: 1e-3,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_adj) {
            return Err(Error::Config(format!("p_adj {} outside [0, 1]", self.p_adj)));
        }
        if self.t_steps < 1 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        if self.ddim_steps > self.t_steps || self.ddim_steps == 0 {
            return Err(Error::Config(format!(
                "ddim_steps {} must be in [1, t_steps {}]",
                self.ddim_steps, self.t_steps
            )));
        }
        if self.n_candidates < 1 {
            return Err(Error::Config("n_candidates must be >= 1".into()));
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return Err(Error::Config(format!(
                "beta bounds ({}, {}) invalid",
                self.beta_min, self.beta_max
            )));
        }
        if self.bit_depth != 8 && self.bit_depth != 12 {
            return Err(Error::Config(format!("bit_depth {} not in {{8, 12}}", self.bit_depth)));
        }
        if !(self.canny_low_input >= 0.0 && self.canny_low_input < self.canny_high_input) {
            return Err(Error::Config("input canny thresholds must satisfy 0 <= low < high".into()));
        }
        if !(self.canny_low_output >= 0.0 && self.canny_low_output < self.canny_high_output) {
            return Err(Error::Config("output canny thresholds must satisfy 0 <= low < high".into()));
        }
        match self.initial_sampler.as_str() {
            "ddpm" | "ddim-seeded" => {}
            other => {
                return Err(Error::Config(format!(
                    "initial_sampler `{other}` not one of {{ddpm, ddim-seeded}}"
                )))
            }
        }
        Ok(())
    }

    /// Parse a TOML config file, apply `CONTOURDIFF_SEED` and validate.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        config.apply_env();
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Ok(value) = std::env::var("CONTOURDIFF_SEED") {
            if let Ok(seed) = value.parse::<u64>() {
                self.seed = seed;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn canny_thresholds(&self, domain: crate::dataio::Domain) -> (f32, f32) {
        match domain {
            crate::dataio::Domain::Input => (self.canny_low_input, self.canny_high_input),
            crate::dataio::Domain::Output => (self.canny_low_output, self.canny_high_output),
        }
    }
}
