//! Pretraining: masking, streaming data, the training loop with early
//! stopping, checkpoint/resume and hyperparameter sampling.

pub mod checkpoint;
pub mod hpsearch;
pub mod loader;
mod mask;
mod trainer;

pub use checkpoint::{Checkpoint, TrainState};
pub use hpsearch::{sample_hyperparams, select_configs, HpConfig, SearchSpace};
pub use loader::{read_rows, shuffle_to_disk, Cursor, Row, StreamLoader};
pub use mask::{mask_count, mask_tokens, MASK_PROB};
pub use trainer::{fit_norm_stats, LogRecord, RunOutcome, StopReason, Trainer};

use std::fmt::Write as _;

use thiserror::Error;

use crate::featurize::FeaturizeError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::tokenizer::TokenizeError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("non-finite value at step {step} ({op}); diagnostic checkpoint written")]
    NonFinite { step: u64, op: String },
    #[error("search space is empty after rejecting {tried} draws")]
    SpaceEmpty { tried: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for TrainError {
    fn from(e: csv::Error) -> Self {
        TrainError::Csv(e.to_string())
    }
}

impl TrainError {
    /// Numerical failures as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. } | TrainError::Tensor(TensorError::NonFinite { .. })
        ) || matches!(self, TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })))
    }
}

/// Linear learning-rate scaling with batch size.
pub fn scaled_lr(base_lr: f64, base_batch_size: usize, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / base_batch_size as f64
}

/// Subsystem seed: 64-bit FNV-1a over the seed's little-endian bytes followed
/// by the label bytes.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Mlm,
    Mtr,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Mtr => "mtr",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s.to_ascii_lowercase().as_str() {
            "mlm" => Ok(Objective::Mlm),
            "mtr" => Ok(Objective::Mtr),
            _ => Err(TrainError::Config(format!("unknown objective '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub base_lr: f64,
    pub base_batch_size: usize,
    pub seed: u64,
    pub eval_interval: u64,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    /// Steps without improvement before stopping; 0 means one pass over the
    /// training rows.
    pub patience_steps: u64,
    pub mask_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Mlm,
            batch_size: 32,
            base_lr: 1e-3,
            base_batch_size: 32,
            seed: 0,
            eval_interval: 50,
            max_steps: 100_000,
            checkpoint_every: 500,
            patience_steps: 0,
            mask_prob: MASK_PROB,
        }
    }
}

pub(crate) const TRAIN_KEYS: [&str; 10] = [
    "objective",
    "batch_size",
    "base_lr",
    "base_batch_size",
    "seed",
    "eval_interval",
    "max_steps",
    "checkpoint_every",
    "patience_steps",
    "mask_prob",
];

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        scaled_lr(self.base_lr, self.base_batch_size, self.batch_size)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.base_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.eval_interval == 0 || self.checkpoint_every == 0 {
            return bad("eval_interval and checkpoint_every must be positive");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return bad("mask_prob must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            (TRAIN_KEYS[0], self.objective.name().to_string()),
            (TRAIN_KEYS[1], self.batch_size.to_string()),
            (TRAIN_KEYS[2], format!("{:?}", self.base_lr)),
            (TRAIN_KEYS[3], self.base_batch_size.to_string()),
            (TRAIN_KEYS[4], self.seed.to_string()),
            (TRAIN_KEYS[5], self.eval_interval.to_string()),
            (TRAIN_KEYS[6], self.max_steps.to_string()),
            (TRAIN_KEYS[7], self.checkpoint_every.to_string()),
            (TRAIN_KEYS[8], self.patience_steps.to_string()),
            (TRAIN_KEYS[9], format!("{:?}", self.mask_prob)),
        ]
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies one `key=value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn p<V: std::str::FromStr>(k: &str, v: &str) -> Result<V, TrainError> {
            v.parse().map_err(|_| TrainError::Config(format!("{k}: cannot parse '{v}'")))
        }
        match key {
            "objective" => self.objective = Objective::parse(value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "base_lr" => self.base_lr = p(key, value)?,
            "base_batch_size" => self.base_batch_size = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "eval_interval" => self.eval_interval = p(key, value)?,
            "max_steps" => self.max_steps = p(key, value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "patience_steps" => self.patience_steps = p(key, value)?,
            "mask_prob" => self.mask_prob = p(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (k, v) in checkpoint::parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
