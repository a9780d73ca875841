//! Bag-of-words and averaged word-vector representations with linear classifiers.

mod bow;
mod embeddings;
mod features;
mod linear;
mod stem;

pub use bow::{BowConfig, BowPipeline};
pub use embeddings::{avg_embedding_repr, AvgEmbedding, EmbeddingTable};
pub use features::{DenseMatrix, DocFeatureMatrix, FeatureMatrix};
pub use linear::{predict_linear, train_linear, LinearConfig, LinearLoss, LinearModel};
pub use stem::stem;
