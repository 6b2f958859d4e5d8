//! Glyph-augmented sequence labeling for Chinese NER.
//!
//! The crate bundles everything needed to train and evaluate a
//! BiLSTM-CRF tagger whose per-character representation is the
//! concatenation of a frozen context embedding and the output of a
//! convolutional glyph encoder:
//!
//! * [`glyphdict`]: 64x64 grayscale glyph bitmaps keyed by codepoint,
//!   with black/white fallback resolution and an extended-dictionary mode.
//! * [`ndtensor`]: a small dense-tensor engine with reverse-mode
//!   differentiation; every layer primitive used by the models.
//! * [`encoders`]: the strided CNN, the GLYNN CNN, and autoencoder
//!   pretraining for GLYNN.
//! * [`tagger`]: context embeddings, BiLSTM, linear-chain CRF, the
//!   training loop, and binary checkpoints.
//! * [`optim`]: Adafactor, Adam, RMSprop, gradient clipping, and a
//!   cosine schedule with warm restarts.
//! * [`corpus`]: CoNLL-style character-tokenized NER files in IOB or
//!   BIOES, scheme conversion, statistics, and batching.
//! * [`eval`]: entity-level F1, trial summaries, and the two-sample
//!   t-test used for significance reporting.
//! * [`testkit`]: synthetic fixtures and independent reference
//!   implementations shared by the test suites.

pub mod corpus;
pub mod encoders;
pub mod eval;
pub mod glyphdict;
pub mod ndtensor;
pub mod optim;
pub mod tagger;
pub mod testkit;
