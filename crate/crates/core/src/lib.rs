//! Molecular language-model pretraining toolkit.
//!
//! SMILES parsing and canonicalization, tokenization, descriptor labels,
//! scaffold splits, a small reverse-mode tensor library, a RoBERTa-style
//! encoder with masked-language-modeling and multi-task-regression heads,
//! pretraining with checkpoint resume, and finetuning/analysis utilities.
//!
//! Numeric code is generic over [`Scalar`]; training runs in `f32` and
//! gradient verification in `f64`.

pub mod chem;
pub mod scalar;

pub use scalar::Scalar;
pub mod evalbench;
pub mod featurize;
pub mod splits;
pub mod synth;
pub mod tokenizer;
pub mod model;
pub mod tensor;
pub mod train;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
