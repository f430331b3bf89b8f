//! Conditional denoising diffusion model over small costate vectors.
//!
//! The denoiser is a plain fully connected network trained with
//! hand-written reverse-mode gradients; nothing here needs an ML runtime.

mod network;
mod normalize;
mod sample;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{Denoiser, DenoiserDims, Gradients};
pub use normalize::NormalizationStats;
pub use sample::{cfg_predict, sample};
pub use schedule::{forward_noise, noising_step, VarianceSchedule};
pub use train::{batch_loss, filter_worst, finetune, train, Adam, TrainingExample, TrainingReport};

pub const CHECKPOINT_FORMAT: &str = "costate-ddpm/1";

/// Upper bound on ᾱ_N accepted by [`DiffusionConfig::validate`].
pub const TERMINAL_ALPHA_BAR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("diffusion step {n} outside 0..={max}")]
    StepRange { n: usize, max: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("component {0} has zero spread; cannot normalize")]
    DegenerateNormalization(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Reverse-step noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorVariance {
    #[default]
    Beta,
    /// `(1 − ᾱ_{n−1}) / (1 − ᾱ_n) · β_n`.
    BetaTilde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub time_embedding: usize,
    pub condition_embedding: usize,
    pub p_drop: f64,
    pub guidance: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub finetune_steps: usize,
    /// Fraction of worst-objective records dropped before fine-tuning.
    pub finetune_discard: f64,
    pub posterior_variance: PosteriorVariance,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            n_steps: 500,
            // Linear schedule scaled for 500 steps so that ᾱ_N < 1e-4.
            beta_start: 2e-4,
            beta_end: 0.04,
            hidden_width: 128,
            hidden_layers: 3,
            time_embedding: 32,
            condition_embedding: 32,
            p_drop: 0.1,
            guidance: 0.3,
            learning_rate: 1e-3,
            batch_size: 256,
            train_steps: 20_000,
            finetune_steps: 5_000,
            finetune_discard: 0.1,
            posterior_variance: PosteriorVariance::Beta,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::Config(m.to_string()));
        if self.n_steps == 0 || self.hidden_width == 0 || self.hidden_layers == 0 || self.batch_size == 0 {
            return bad("n_steps, hidden_width, hidden_layers and batch_size must be positive");
        }
        if self.time_embedding == 0 || self.time_embedding % 2 != 0 || self.condition_embedding == 0 {
            return bad("time_embedding must be even and positive; condition_embedding positive");
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad("p_drop must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.finetune_discard) {
            return bad("finetune_discard must lie in [0, 1)");
        }
        let s = self.schedule()?;
        if s.alpha_bar(s.n_steps()) >= TERMINAL_ALPHA_BAR {
            return Err(DiffusionError::Schedule(format!(
                "terminal alpha_bar {:.3e} is not below {TERMINAL_ALPHA_BAR:e}; the last step is not close to pure noise",
                s.alpha_bar(s.n_steps())
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<VarianceSchedule, DiffusionError> {
        VarianceSchedule::linear(self.n_steps, self.beta_start, self.beta_end)
    }

    pub fn dims(&self, data_dim: usize) -> DenoiserDims {
        DenoiserDims {
            data: data_dim,
            hidden: self.hidden_width,
            layers: self.hidden_layers,
            time_embedding: self.time_embedding,
            condition_embedding: self.condition_embedding,
        }
    }
}

/// Trained model with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: DiffusionConfig,
    pub schedule: VarianceSchedule,
    pub stats: NormalizationStats,
    pub denoiser: Denoiser,
    /// Fingerprint of the training run that produced the weights.
    pub fingerprint: String,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, DiffusionError> {
        serde_json::to_string(self).map_err(|e| DiffusionError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, DiffusionError> {
        let ck: Self = serde_json::from_str(s).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(DiffusionError::Checkpoint(format!(
                "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        ck.denoiser.check()?;
        Ok(ck)
    }
}
