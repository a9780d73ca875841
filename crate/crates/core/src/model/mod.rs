//! BERT-style model: embeddings, encoder, pretraining and classification heads.

mod bert;
mod checkpoint;
mod config;
mod masking;

pub use bert::{pretrain_loss, BertModel, BertParams, MlmRows, PretrainLogits, CLASSIFIER_WEIGHT};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_expecting, parse_checkpoint,
    save_checkpoint, FORMAT_VERSION,
};
pub use config::{ModelConfig, PositionEncoding};
pub use masking::{
    content_positions, encode_pairs, make_nsp_pairs, mask_tokens, MaskedBatch, MaskingConfig,
    NspPair, IGNORE, IS_NEXT, NOT_NEXT,
};
