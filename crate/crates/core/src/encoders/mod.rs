//! Glyph encoders and autoencoder pretraining.
//!
//! Two CNNs turn a 64x64 glyph into a feature vector: the strided CNN
//! (four stride-2 convolutions into a layer-normalized 64-vector) and
//! GLYNN (two convolutions with batch norm, pooling and dropout into a
//! 256-vector). GLYNN can be initialized from an autoencoder trained to
//! reconstruct the glyph images.

mod autoencoder;
mod glynn;
mod strided;

pub use autoencoder::{
    ae_forward, ae_loss, ae_loss_graph, extract_encoder, pretrain_autoencoder, AeLayer,
    AutoencoderStack, PretrainConfig, PretrainError, PretrainReport,
};
pub use glynn::{glynn_forward, glynn_forward_traced, GlynnParams, GLYNN_OUT_DIM};
pub use strided::{strided_forward, strided_forward_traced, StridedParams, STRIDED_OUT_DIM};

use rand_chacha::ChaCha8Rng;

use crate::ndtensor::{Graph, NodeId, NormMode, ParamGroup, Parameter, TensorError};

/// A glyph encoder of either architecture, behind one interface.
#[allow(clippy::large_enum_variant)] // one model holds one encoder
pub enum EncoderParams {
    Strided(StridedParams),
    Glynn(GlynnParams),
}

impl EncoderParams {
    pub fn out_dim(&self) -> usize {
        match self {
            EncoderParams::Strided(_) => STRIDED_OUT_DIM,
            EncoderParams::Glynn(_) => GLYNN_OUT_DIM,
        }
    }

    /// Encodes a `[N, 64, 64, 1]` batch into `[N, out_dim]` rows.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        mode: NormMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, TensorError> {
        match self {
            EncoderParams::Strided(p) => strided_forward(g, x, p),
            EncoderParams::Glynn(p) => glynn_forward(g, x, p, mode, rng),
        }
    }

    /// Non-trainable state that still belongs in checkpoints
    /// (batch-norm running statistics).
    pub fn state_tensors(&self) -> Vec<(String, crate::ndtensor::Tensor)> {
        match self {
            EncoderParams::Strided(_) => Vec::new(),
            EncoderParams::Glynn(p) => p.state_tensors(),
        }
    }

    pub fn set_state_tensor(&mut self, name: &str, value: crate::ndtensor::Tensor) -> bool {
        match self {
            EncoderParams::Strided(_) => false,
            EncoderParams::Glynn(p) => p.set_state_tensor(name, value),
        }
    }
}

impl ParamGroup for EncoderParams {
    fn params(&self) -> Vec<&Parameter> {
        match self {
            EncoderParams::Strided(p) => p.params(),
            EncoderParams::Glynn(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            EncoderParams::Strided(p) => p.params_mut(),
            EncoderParams::Glynn(p) => p.params_mut(),
        }
    }
}
