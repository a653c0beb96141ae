//! Finetuning, downstream metrics, the pretraining analyses and embedding
//! export.

mod embed;
pub mod experiments;
mod finetune;
pub mod metrics;

pub use embed::{export_embeddings, EmbedMode, EmbedSummary, MAX_DISTANCE_ROWS};
pub use experiments::{
    experiment_loss_correlation, experiment_scaling, experiment_transfer, nested_subsets, pretrain_run, read_reports,
    read_smiles, write_scaling_csv, write_transfer_csv, CorrelationResult, CorrelationRow, PretrainData, ScalingRow,
    TransferFit, TransferRow,
};
pub use finetune::{finetune, Encoder, FinetuneGrid, FinetuneSpec, GridPoint, MetricReport, TaskType, TestSet, REPORT_SCHEMA_VERSION};
pub use metrics::{average_ranks, class_weights, linear_fit, pearson, roc_auc, rmse, spearman, LinearFit};

use thiserror::Error;

use crate::chem::ChemError;
use crate::featurize::FeaturizeError;
use crate::model::ModelError;
use crate::splits::SplitError;
use crate::tensor::TensorError;
use crate::tokenizer::TokenizeError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("only one class present")]
    SingleClass,
    #[error("invalid label '{0}'")]
    BadLabel(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{n} rows exceed the distance-matrix limit of {max}")]
    TooManyRows { n: usize, max: usize },
    #[error("every grid point diverged")]
    AllDiverged,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Csv(e.to_string())
    }
}

impl EvalError {
    /// Numerical failures as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            EvalError::NonFinite(_) | EvalError::AllDiverged => true,
            EvalError::Train(e) => e.is_numerical(),
            EvalError::Tensor(TensorError::NonFinite { .. }) => true,
            EvalError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => true,
            _ => false,
        }
    }
}
