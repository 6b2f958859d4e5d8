use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::glynn::{GlynnParams, GLYNN_CHANNELS, GLYNN_FLAT, GLYNN_OUT_DIM};
use crate::glyphdict::{GlyphDictionary, GLYPH_PIXELS, GLYPH_SIDE};
use crate::ndtensor::{
    truncated_normal, Activation, Graph, NodeId, Padding, ParamGroup, Parameter, Tensor,
    TensorError,
};
use crate::optim::{Optimizer, OptimizerKind};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("autoencoder diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("optimizer failure: {0}")]
    Optim(#[from] crate::optim::OptimError),
}

/// One encoder or decoder stage. The affine map of the reconstruction
/// equations is a dense matrix, a convolution, or an upsample followed
/// by a convolution; `act` of `None` means the identity nonlinearity.
pub enum AeLayer {
    Dense {
        w: Parameter,
        b: Parameter,
        act: Option<Activation>,
        /// Reshape the `[N, d]` output into `[N, h, w, c]` (decoder side).
        reshape_to: Option<[usize; 3]>,
    },
    Conv {
        kernel: Parameter,
        bias: Parameter,
        act: Option<Activation>,
        stride: (usize, usize),
        pool: Option<usize>,
    },
    Upconv {
        factor: usize,
        kernel: Parameter,
        bias: Parameter,
        act: Option<Activation>,
    },
}

impl AeLayer {
    fn params(&self) -> [&Parameter; 2] {
        match self {
            AeLayer::Dense { w, b, .. } => [w, b],
            AeLayer::Conv { kernel, bias, .. } => [kernel, bias],
            AeLayer::Upconv { kernel, bias, .. } => [kernel, bias],
        }
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        match self {
            AeLayer::Dense { w, b, .. } => [w, b],
            AeLayer::Conv { kernel, bias, .. } => [kernel, bias],
            AeLayer::Upconv { kernel, bias, .. } => [kernel, bias],
        }
    }

    fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, TensorError> {
        let act = |g: &mut Graph, id: NodeId, act: &Option<Activation>| match act {
            Some(a) => g.activation(id, *a),
            None => id,
        };
        match self {
            AeLayer::Dense { w, b, act: a, reshape_to } => {
                let n = g.value(x).shape()[0];
                let flat_dim = g.value(x).numel() / n;
                let flat = g.reshape(x, vec![n, flat_dim])?;
                let wi = g.param(w);
                let bi = g.param(b);
                let mut out = g.dense(flat, wi, bi)?;
                out = act(g, out, a);
                if let Some([h, w, c]) = reshape_to {
                    out = g.reshape(out, vec![n, *h, *w, *c])?;
                }
                Ok(out)
            }
            AeLayer::Conv { kernel, bias, act: a, stride, pool } => {
                let ki = g.param(kernel);
                let bi = g.param(bias);
                let mut out = g.conv2d(x, ki, bi, *stride, Padding::Same)?;
                out = act(g, out, a);
                if let Some(p) = pool {
                    out = g.maxpool2d(out, *p)?;
                }
                Ok(out)
            }
            AeLayer::Upconv { factor, kernel, bias, act: a } => {
                let up = g.upsample2d(x, *factor)?;
                let ki = g.param(kernel);
                let bi = g.param(bias);
                let out = g.conv2d(up, ki, bi, (1, 1), Padding::Same)?;
                Ok(act(g, out, a))
            }
        }
    }
}

/// N encoder layers followed by N decoder layers; the decoder mirrors
/// the encoder extents in reverse so the reconstruction matches the
/// input dimension.
pub struct AutoencoderStack {
    pub encoder: Vec<AeLayer>,
    pub decoder: Vec<AeLayer>,
}

impl ParamGroup for AutoencoderStack {
    fn params(&self) -> Vec<&Parameter> {
        self.encoder.iter().chain(&self.decoder).flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

impl AutoencoderStack {
    /// The stack whose encoder mirrors GLYNN's trainable layers, so
    /// extraction is a direct weight copy: conv (sigmoid, stride 2,
    /// pool 2), conv (ReLU, pool 2), dense to 256. The decoder walks
    /// the extents back up: dense 256 -> 2048, upsample+conv to
    /// 16x16x32, upsample+conv to the 64x64 image with a sigmoid so
    /// reconstructions live in [0,1].
    pub fn glynn_mirror(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let std1 = (2.0 / (k * k) as f64).sqrt();
        let std2 = (2.0 / (k * k * GLYNN_CHANNELS) as f64).sqrt();
        let std_code = (2.0 / GLYNN_FLAT as f64).sqrt();
        let std_dec = (2.0 / GLYNN_OUT_DIM as f64).sqrt();
        AutoencoderStack {
            encoder: vec![
                AeLayer::Conv {
                    kernel: Parameter::new(
                        "ae.enc1.kernel",
                        truncated_normal(&mut rng, &[k, k, 1, GLYNN_CHANNELS], std1),
                    ),
                    bias: Parameter::new("ae.enc1.bias", Tensor::zeros(&[GLYNN_CHANNELS])),
                    act: Some(Activation::Sigmoid),
                    stride: (2, 2),
                    pool: Some(2),
                },
                AeLayer::Conv {
                    kernel: Parameter::new(
                        "ae.enc2.kernel",
                        truncated_normal(&mut rng, &[k, k, GLYNN_CHANNELS, GLYNN_CHANNELS], std2),
                    ),
                    bias: Parameter::new("ae.enc2.bias", Tensor::zeros(&[GLYNN_CHANNELS])),
                    act: Some(Activation::Relu),
                    stride: (1, 1),
                    pool: Some(2),
                },
                AeLayer::Dense {
                    w: Parameter::new(
                        "ae.enc3.weight",
                        truncated_normal(&mut rng, &[GLYNN_FLAT, GLYNN_OUT_DIM], std_code),
                    ),
                    b: Parameter::new("ae.enc3.bias", Tensor::zeros(&[GLYNN_OUT_DIM])),
                    act: None,
                    reshape_to: None,
                },
            ],
            decoder: vec![
                AeLayer::Dense {
                    w: Parameter::new(
                        "ae.dec3.weight",
                        truncated_normal(&mut rng, &[GLYNN_OUT_DIM, GLYNN_FLAT], std_dec),
                    ),
                    b: Parameter::new("ae.dec3.bias", Tensor::zeros(&[GLYNN_FLAT])),
                    act: Some(Activation::Relu),
                    reshape_to: Some([8, 8, GLYNN_CHANNELS]),
                },
                AeLayer::Upconv {
                    factor: 2,
                    kernel: Parameter::new(
                        "ae.dec2.kernel",
                        truncated_normal(&mut rng, &[k, k, GLYNN_CHANNELS, GLYNN_CHANNELS], std2),
                    ),
                    bias: Parameter::new("ae.dec2.bias", Tensor::zeros(&[GLYNN_CHANNELS])),
                    act: Some(Activation::Relu),
                },
                AeLayer::Upconv {
                    factor: 4,
                    kernel: Parameter::new(
                        "ae.dec1.kernel",
                        truncated_normal(&mut rng, &[k, k, GLYNN_CHANNELS, 1], std2),
                    ),
                    bias: Parameter::new("ae.dec1.bias", Tensor::zeros(&[1])),
                    act: Some(Activation::Sigmoid),
                },
            ],
        }
    }
}

/// Runs the encoder-decoder chain on flat `[N, d]` inputs.
///
/// Returns `(code, reconstruction)`; the reconstruction is flattened
/// back to the input extents.
pub fn ae_forward(
    g: &mut Graph,
    x: NodeId,
    stack: &AutoencoderStack,
) -> Result<(NodeId, NodeId), TensorError> {
    let (n, d) = g.value(x).dims2("ae_forward")?;
    let mut h = x;
    if matches!(stack.encoder.first(), Some(AeLayer::Conv { .. })) {
        if d != GLYPH_PIXELS {
            return Err(TensorError::shape(
                "ae_forward",
                format!("convolutional encoder expects {GLYPH_PIXELS} inputs, got {d}"),
            ));
        }
        h = g.reshape(h, vec![n, GLYPH_SIDE, GLYPH_SIDE, 1])?;
    }
    for layer in &stack.encoder {
        h = layer.apply(g, h)?;
    }
    let code_dim = g.value(h).numel() / n;
    let code = g.reshape(h, vec![n, code_dim])?;
    let mut r = code;
    for layer in &stack.decoder {
        r = layer.apply(g, r)?;
    }
    let out_dim = g.value(r).numel() / n;
    if out_dim != d {
        return Err(TensorError::shape(
            "ae_forward",
            format!("decoder produced {out_dim} values per sample, input had {d}"),
        ));
    }
    let recon = g.reshape(r, vec![n, d])?;
    Ok((code, recon))
}

/// Graph node for the reconstruction objective: the batch mean of the
/// squared L2 distance between input and reconstruction.
pub fn ae_loss_graph(g: &mut Graph, x: NodeId, recon: NodeId) -> Result<NodeId, TensorError> {
    let n = g.value(x).shape()[0];
    let diff = g.sub(x, recon)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Reconstruction loss of a batch under the current stack weights.
pub fn ae_loss(stack: &AutoencoderStack, batch: &Tensor) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let (_, recon) = ae_forward(&mut g, x, stack)?;
    let loss = ae_loss_graph(&mut g, x, recon)?;
    g.value(loss).to_scalar()
}

/// Dataset-mean reconstruction loss, evaluated in chunks so large
/// dictionaries do not blow up the activation memory.
fn dataset_loss(stack: &AutoencoderStack, dataset: &[Tensor], chunk: usize) -> Result<f64, TensorError> {
    let mut total = 0.0;
    for rows in dataset.chunks(chunk.max(1)) {
        let mut data = Vec::with_capacity(rows.len() * rows[0].numel());
        for t in rows {
            data.extend_from_slice(t.data());
        }
        let batch = Tensor::from_vec(vec![rows.len(), rows[0].numel()], data)?;
        total += ae_loss(stack, &batch)? * rows.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// RMSprop settings for pretraining.
#[derive(Clone, Copy, Debug)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 200, learning_rate: 1e-3, decay: 0.9, eps: 1e-8, batch_size: 16, seed: 0 }
    }
}

/// Loss trajectory of a pretraining run.
#[derive(Clone, Debug)]
pub struct PretrainReport {
    /// Dataset loss before the first update.
    pub initial_loss: f64,
    /// Dataset loss after each epoch; `epochs` entries.
    pub epoch_losses: Vec<f64>,
}

impl PretrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Trains the stack to reconstruct every glyph in the dictionary.
///
/// The dataset is the dictionary's bitmaps in codepoint order; batches
/// are reshuffled per epoch under the seed. Aborts with the epoch index
/// if the loss stops being finite.
pub fn pretrain_autoencoder(
    dict: &GlyphDictionary,
    stack: &mut AutoencoderStack,
    config: &PretrainConfig,
) -> Result<PretrainReport, PretrainError> {
    if dict.is_empty() {
        return Err(PretrainError::EmptyDictionary);
    }
    let dataset: Vec<Tensor> = dict
        .iter()
        .map(|(_, bm)| bm.to_tensor().reshaped(vec![GLYPH_PIXELS]).unwrap())
        .collect();
    let batch = config.batch_size.max(1);
    let initial_loss = dataset_loss(stack, &dataset, batch)?;
    let mut opt = Optimizer::new(
        OptimizerKind::RmsProp { decay: config.decay, eps: config.eps },
        0.0,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut data = Vec::with_capacity(chunk.len() * GLYPH_PIXELS);
            for &i in chunk {
                data.extend_from_slice(dataset[i].data());
            }
            let minibatch = Tensor::from_vec(vec![chunk.len(), GLYPH_PIXELS], data).unwrap();
            let mut g = Graph::new();
            let x = g.constant(minibatch);
            let (_, recon) = ae_forward(&mut g, x, stack)?;
            let loss = ae_loss_graph(&mut g, x, recon)?;
            if !g.value(loss).to_scalar()?.is_finite() {
                return Err(PretrainError::Diverged(epoch));
            }
            g.backward(loss)?;
            stack.zero_grads();
            stack.accumulate_grads(&g);
            opt.step(&mut stack.params_mut(), Some(config.learning_rate))?;
        }
        let epoch_loss = dataset_loss(stack, &dataset, batch)?;
        if !epoch_loss.is_finite() {
            return Err(PretrainError::Diverged(epoch));
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(PretrainReport { initial_loss, epoch_losses })
}

/// Copies the encoder weights into a fresh GLYNN parameter set.
///
/// The stack's encoder must structurally match GLYNN (it does for
/// [`AutoencoderStack::glynn_mirror`]); everything stays trainable, so
/// downstream fine-tuning moves the copied weights too.
pub fn extract_encoder(stack: &AutoencoderStack) -> Result<GlynnParams, TensorError> {
    let mismatch = |what: &str| TensorError::shape("extract_encoder", what.to_string());
    let [l1, l2, l3] = stack.encoder.as_slice() else {
        return Err(mismatch("encoder must have exactly 3 layers"));
    };
    let AeLayer::Conv { kernel: k1, bias: b1, stride: (2, 2), pool: Some(2), .. } = l1 else {
        return Err(mismatch("first layer must be a stride-2 pooled convolution"));
    };
    let AeLayer::Conv { kernel: k2, bias: b2, stride: (1, 1), pool: Some(2), .. } = l2 else {
        return Err(mismatch("second layer must be a stride-1 pooled convolution"));
    };
    let AeLayer::Dense { w, b, .. } = l3 else {
        return Err(mismatch("third layer must be the dense projection"));
    };
    if k1.value.shape() != [3, 3, 1, GLYNN_CHANNELS]
        || k2.value.shape() != [3, 3, GLYNN_CHANNELS, GLYNN_CHANNELS]
        || w.value.shape() != [GLYNN_FLAT, GLYNN_OUT_DIM]
    {
        return Err(mismatch("encoder extents do not match GLYNN"));
    }
    Ok(GlynnParams::from_weights(
        k1.value.clone(),
        b1.value.clone(),
        k2.value.clone(),
        b2.value.clone(),
        w.value.clone(),
        b.value.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::glynn_forward;
    use rand::Rng;
    use crate::glyphdict::GlyphBitmap;
    use crate::ndtensor::NormMode;
    use std::collections::BTreeMap;

    fn identity_dense(name: &str, d: usize) -> AeLayer {
        let mut w = Tensor::zeros(&[d, d]);
        for i in 0..d {
            w.set(&[i, i], 1.0);
        }
        AeLayer::Dense {
            w: Parameter::new(format!("{name}.weight"), w),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[d])),
            act: None,
            reshape_to: None,
        }
    }

    #[test]
    fn identity_stack_reconstructs_input() {
        let stack = AutoencoderStack {
            encoder: vec![identity_dense("e", 4)],
            decoder: vec![identity_dense("d", 4)],
        };
        let x = Tensor::from_vec(vec![2, 4], vec![0.1, 0.9, 0.4, 0.0, 1.0, 0.2, 0.3, 0.7]).unwrap();
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (_, recon) = ae_forward(&mut g, xi, &stack).unwrap();
        assert_eq!(g.value(recon).data(), x.data());
        assert_eq!(ae_loss(&stack, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_input_zero_bias_relu_reconstructs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let relu_dense = |name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng| AeLayer::Dense {
            w: Parameter::new(format!("{name}.weight"), truncated_normal(rng, &[din, dout], 0.3)),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
            act: Some(Activation::Relu),
            reshape_to: None,
        };
        let stack = AutoencoderStack {
            encoder: vec![relu_dense("e", 6, 3, &mut rng)],
            decoder: vec![relu_dense("d", 3, 6, &mut rng)],
        };
        let x = Tensor::zeros(&[1, 6]);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let (_, recon) = ae_forward(&mut g, xi, &stack).unwrap();
        assert!(g.value(recon).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn code_dimension_is_last_encoder_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = |name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng| AeLayer::Dense {
            w: Parameter::new(format!("{name}.weight"), truncated_normal(rng, &[din, dout], 0.3)),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
            act: Some(Activation::Tanh),
            reshape_to: None,
        };
        let stack = AutoencoderStack {
            encoder: vec![dense("e1", 8, 5, &mut rng), dense("e2", 5, 3, &mut rng)],
            decoder: vec![dense("d2", 3, 5, &mut rng), dense("d1", 5, 8, &mut rng)],
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 8]));
        let (code, recon) = ae_forward(&mut g, x, &stack).unwrap();
        assert_eq!(g.value(code).shape(), &[2, 3]);
        assert_eq!(g.value(recon).shape(), &[2, 8]);
    }

    #[test]
    fn loss_of_all_ones_against_zero_reconstruction() {
        // Zero weights and biases, identity activations: reconstruction 0.
        let zero_dense = |name: &str, din: usize, dout: usize| AeLayer::Dense {
            w: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[din, dout])),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
            act: None,
            reshape_to: None,
        };
        let stack = AutoencoderStack {
            encoder: vec![zero_dense("e", GLYPH_PIXELS, 8)],
            decoder: vec![zero_dense("d", 8, GLYPH_PIXELS)],
        };
        let x = Tensor::ones(&[3, GLYPH_PIXELS]);
        let loss = ae_loss(&stack, &x).unwrap();
        assert!((loss - GLYPH_PIXELS as f64).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn loss_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = AutoencoderStack::glynn_mirror(7);
        let n = 2;
        let data: Vec<f64> = (0..n * GLYPH_PIXELS).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(vec![n, GLYPH_PIXELS], data).unwrap();
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (_, recon) = ae_forward(&mut g, xi, &stack).unwrap();
        let rv = g.value(recon).clone();
        let mut want = 0.0;
        for i in 0..x.numel() {
            let d = x.data()[i] - rv.data()[i];
            want += d * d;
        }
        want /= n as f64;
        let got = ae_loss(&stack, &x).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    fn tiny_dict(n: usize) -> GlyphDictionary {
        let mut entries = BTreeMap::new();
        for i in 0..n {
            let cp = 0x4E00 + i as u32;
            let mut pixels = [0u8; GLYPH_PIXELS];
            for (j, p) in pixels.iter_mut().enumerate() {
                *p = (((i + 1) * (j + 3)) % 256) as u8;
            }
            entries.insert(cp, GlyphBitmap::from_bytes(pixels));
        }
        GlyphDictionary::new_base(entries).unwrap()
    }

    #[test]
    fn pretraining_reduces_loss_at_desk_scale() {
        let dict = tiny_dict(8);
        let mut stack = AutoencoderStack::glynn_mirror(11);
        let config = PretrainConfig { epochs: 12, batch_size: 4, seed: 5, ..Default::default() };
        let report = pretrain_autoencoder(&dict, &mut stack, &config).unwrap();
        assert_eq!(report.epoch_losses.len(), 12);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(
            report.final_loss() <= report.initial_loss,
            "{} > {}",
            report.final_loss(),
            report.initial_loss
        );
    }

    #[test]
    fn zero_epochs_leaves_the_stack_unchanged() {
        let dict = tiny_dict(3);
        let mut stack = AutoencoderStack::glynn_mirror(11);
        let before: Vec<Vec<f64>> =
            stack.params().iter().map(|p| p.value.data().to_vec()).collect();
        let config = PretrainConfig { epochs: 0, ..Default::default() };
        let report = pretrain_autoencoder(&dict, &mut stack, &config).unwrap();
        assert!(report.epoch_losses.is_empty());
        let after: Vec<Vec<f64>> = stack.params().iter().map(|p| p.value.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_dictionary_is_an_error() {
        let mut stack = AutoencoderStack::glynn_mirror(11);
        let err = pretrain_autoencoder(
            &GlyphDictionary::empty_base(),
            &mut stack,
            &PretrainConfig::default(),
        );
        assert!(matches!(err, Err(PretrainError::EmptyDictionary)));
    }

    #[test]
    fn extract_copies_weights_bitwise_and_runs() {
        let stack = AutoencoderStack::glynn_mirror(42);
        let mut glynn = extract_encoder(&stack).unwrap();
        let AeLayer::Conv { kernel, .. } = &stack.encoder[0] else { unreachable!() };
        assert_eq!(glynn.conv1_kernel.value.data(), kernel.value.data());
        let AeLayer::Dense { w, .. } = &stack.encoder[2] else { unreachable!() };
        assert_eq!(glynn.dense_w.value.data(), w.value.data());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 64, 64, 1]));
        let y = glynn_forward(&mut g, x, &mut glynn, NormMode::Infer, &mut rng).unwrap();
        assert_eq!(g.value(y).shape(), &[2, GLYNN_OUT_DIM]);
    }

    #[test]
    fn extracted_weights_stay_trainable() {
        let stack = AutoencoderStack::glynn_mirror(42);
        let mut glynn = extract_encoder(&stack).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 64, 64, 1]));
        let y = glynn_forward(&mut g, x, &mut glynn, NormMode::Infer, &mut rng).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        glynn.accumulate_grads(&g);
        assert!(glynn.dense_w.grad.l2_norm() > 0.0);
    }

    #[test]
    fn extract_rejects_mismatched_stacks() {
        let stack = AutoencoderStack {
            encoder: vec![identity_dense("e", 4)],
            decoder: vec![identity_dense("d", 4)],
        };
        assert!(extract_encoder(&stack).is_err());
    }
}
