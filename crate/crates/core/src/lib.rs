//! Desk-scale transformer transfer learning: a tape-based autograd engine,
//! a subword tokenizer, a BERT-style encoder with pretraining and fine-tuning
//! loops, classical baselines and a cross-validated evaluation harness.

pub mod attention;
pub mod baselines;
pub mod autograd;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod train;
pub mod transformer;

pub use autograd::{ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
