//! The glyph-augmented BiLSTM-CRF tagger.
//!
//! Character representations concatenate a frozen context embedding
//! with a glyph-encoder vector, run through one BiLSTM layer, and are
//! scored by a linear-chain CRF (forward-algorithm training loss,
//! Viterbi decoding). Checkpoints are binary containers with a hashed
//! config block and named tensors.

mod bilstm;
mod checkpoint;
mod crf;
mod embeddings;
mod model;
mod train;

pub use bilstm::{bilstm_forward, bilstm_forward_nodes, BiLstmNodes, BiLstmParams, DEFAULT_HIDDEN};
pub use checkpoint::{
    load_autoencoder, load_tagger, load_tagger_checked, read_container, save_autoencoder,
    save_tagger, write_container, CheckpointError,
};
pub use crf::{
    crf_brute_oracle, crf_decode, crf_nll, crf_nll_graph, gold_score_graph, log_partition,
    log_partition_graph, CrfError, CrfParams, TagLattice,
};
pub use embeddings::{
    load_context_embeddings, write_contextual_embeddings, write_static_embeddings,
    ContextEmbeddings, EmbeddingError,
};
pub use model::{
    char_representation, emission_scores, emission_scores_nodes, encode_glyph_batch,
    predict_corpus, predict_sentence, representation_rows, EncoderChoice, GlyphBatch, HeadNodes,
    TaggerModel,
};
pub use train::{corpus_loss, train, EpochMetrics, TrainConfig, TrainOutcome};

use thiserror::Error;

/// Errors across representation building, training, and prediction.
#[derive(Debug, Error)]
pub enum TagError {
    #[error(transparent)]
    Tensor(#[from] crate::ndtensor::TensorError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error("a glyph encoder is configured but no dictionary was given")]
    MissingDictionary,
    #[error("tag '{0}' is not in the model's tag set")]
    UnknownTag(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}
