use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ndtensor::{
    truncated_normal, BatchNormStats, Graph, NodeId, NormMode, Padding, ParamGroup,
    Parameter, Tensor, TensorError,
};

/// Output dimension of the GLYNN encoder.
pub const GLYNN_OUT_DIM: usize = 256;

pub(crate) const GLYNN_CHANNELS: usize = 32;
pub(crate) const GLYNN_FLAT: usize = 8 * 8 * GLYNN_CHANNELS;
const KERNEL: usize = 3;
const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

/// Default dropout rates after the two pooling stages.
pub const GLYNN_DEFAULT_DROPOUT: (f64, f64) = (0.3, 0.5);

/// The GLYNN encoder: conv (32 filters, kernel 3, stride 2, sigmoid),
/// batch norm, pool 2, dropout; conv (32 filters, stride 1, ReLU),
/// batch norm, pool 2, dropout; dense projection to 256.
///
/// Spatially: 64 -> 32 (conv s2) -> 16 (pool) -> 16 (conv s1) -> 8
/// (pool), so the flattened feature is 8 * 8 * 32 = 2048 wide.
#[derive(Clone)]
pub struct GlynnParams {
    pub(crate) conv1_kernel: Parameter,
    pub(crate) conv1_bias: Parameter,
    bn1_gamma: Parameter,
    bn1_beta: Parameter,
    pub(crate) bn1_stats: BatchNormStats,
    pub(crate) conv2_kernel: Parameter,
    pub(crate) conv2_bias: Parameter,
    bn2_gamma: Parameter,
    bn2_beta: Parameter,
    pub(crate) bn2_stats: BatchNormStats,
    pub(crate) dense_w: Parameter,
    pub(crate) dense_b: Parameter,
    pub dropout1: f64,
    pub dropout2: f64,
}

impl GlynnParams {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let std1 = (2.0 / (KERNEL * KERNEL) as f64).sqrt();
        let std2 = (2.0 / (KERNEL * KERNEL * GLYNN_CHANNELS) as f64).sqrt();
        let std_dense = (2.0 / GLYNN_FLAT as f64).sqrt();
        GlynnParams::from_weights(
            truncated_normal(rng, &[KERNEL, KERNEL, 1, GLYNN_CHANNELS], std1),
            Tensor::zeros(&[GLYNN_CHANNELS]),
            truncated_normal(rng, &[KERNEL, KERNEL, GLYNN_CHANNELS, GLYNN_CHANNELS], std2),
            Tensor::zeros(&[GLYNN_CHANNELS]),
            truncated_normal(rng, &[GLYNN_FLAT, GLYNN_OUT_DIM], std_dense),
            Tensor::zeros(&[GLYNN_OUT_DIM]),
        )
    }

    /// Builds the encoder around given convolution/dense weights (the
    /// autoencoder extraction path); batch-norm state starts fresh.
    pub fn from_weights(
        conv1_kernel: Tensor,
        conv1_bias: Tensor,
        conv2_kernel: Tensor,
        conv2_bias: Tensor,
        dense_w: Tensor,
        dense_b: Tensor,
    ) -> Self {
        GlynnParams {
            conv1_kernel: Parameter::new("glynn.conv1.kernel", conv1_kernel),
            conv1_bias: Parameter::new("glynn.conv1.bias", conv1_bias),
            bn1_gamma: Parameter::new("glynn.bn1.gamma", Tensor::ones(&[GLYNN_CHANNELS])),
            bn1_beta: Parameter::new("glynn.bn1.beta", Tensor::zeros(&[GLYNN_CHANNELS])),
            bn1_stats: BatchNormStats::new(GLYNN_CHANNELS),
            conv2_kernel: Parameter::new("glynn.conv2.kernel", conv2_kernel),
            conv2_bias: Parameter::new("glynn.conv2.bias", conv2_bias),
            bn2_gamma: Parameter::new("glynn.bn2.gamma", Tensor::ones(&[GLYNN_CHANNELS])),
            bn2_beta: Parameter::new("glynn.bn2.beta", Tensor::zeros(&[GLYNN_CHANNELS])),
            bn2_stats: BatchNormStats::new(GLYNN_CHANNELS),
            dense_w: Parameter::new("glynn.dense.weight", dense_w),
            dense_b: Parameter::new("glynn.dense.bias", dense_b),
            dropout1: GLYNN_DEFAULT_DROPOUT.0,
            dropout2: GLYNN_DEFAULT_DROPOUT.1,
        }
    }

    /// Batch-norm running statistics, named for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("glynn.bn1.running_mean".into(), self.bn1_stats.mean.clone()),
            ("glynn.bn1.running_var".into(), self.bn1_stats.var.clone()),
            ("glynn.bn2.running_mean".into(), self.bn2_stats.mean.clone()),
            ("glynn.bn2.running_var".into(), self.bn2_stats.var.clone()),
        ]
    }

    pub fn set_state_tensor(&mut self, name: &str, value: Tensor) -> bool {
        match name {
            "glynn.bn1.running_mean" => self.bn1_stats.mean = value,
            "glynn.bn1.running_var" => self.bn1_stats.var = value,
            "glynn.bn2.running_mean" => self.bn2_stats.mean = value,
            "glynn.bn2.running_var" => self.bn2_stats.var = value,
            _ => return false,
        }
        true
    }
}

impl ParamGroup for GlynnParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.conv1_kernel,
            &self.conv1_bias,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.conv2_kernel,
            &self.conv2_bias,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.conv1_kernel,
            &mut self.conv1_bias,
            &mut self.bn1_gamma,
            &mut self.bn1_beta,
            &mut self.conv2_kernel,
            &mut self.conv2_bias,
            &mut self.bn2_gamma,
            &mut self.bn2_beta,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }
}

/// Encodes `[N, 64, 64, 1]` glyphs into `[N, 256]` rows.
///
/// Train mode needs `N >= 2` (batch statistics) and consumes randomness
/// for the dropout masks; infer mode is deterministic.
pub fn glynn_forward(
    g: &mut Graph,
    x: NodeId,
    params: &mut GlynnParams,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TensorError> {
    glynn_forward_traced(g, x, params, mode, rng, None)
}

/// Same as [`glynn_forward`] but records every intermediate shape.
pub fn glynn_forward_traced(
    g: &mut Graph,
    x: NodeId,
    params: &mut GlynnParams,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut Vec<Vec<usize>>>,
) -> Result<NodeId, TensorError> {
    let note = |g: &Graph, id: NodeId, trace: &mut Option<&mut Vec<Vec<usize>>>| {
        if let Some(t) = trace {
            t.push(g.value(id).shape().to_vec());
        }
    };
    let n = g.value(x).shape()[0];
    note(g, x, &mut trace);

    let k1 = g.param(&params.conv1_kernel);
    let b1 = g.param(&params.conv1_bias);
    let conv1 = g.conv2d(x, k1, b1, (2, 2), Padding::Same)?;
    let act1 = g.sigmoid(conv1);
    note(g, act1, &mut trace);
    let g1 = g.param(&params.bn1_gamma);
    let be1 = g.param(&params.bn1_beta);
    let bn1 = g.batch_norm(act1, g1, be1, &mut params.bn1_stats, mode, BN_MOMENTUM, BN_EPS)?;
    let pool1 = g.maxpool2d(bn1, 2)?;
    note(g, pool1, &mut trace);
    let drop1 = g.dropout(pool1, params.dropout1, mode, rng)?;

    let k2 = g.param(&params.conv2_kernel);
    let b2 = g.param(&params.conv2_bias);
    let conv2 = g.conv2d(drop1, k2, b2, (1, 1), Padding::Same)?;
    let act2 = g.relu(conv2);
    note(g, act2, &mut trace);
    let g2 = g.param(&params.bn2_gamma);
    let be2 = g.param(&params.bn2_beta);
    let bn2 = g.batch_norm(act2, g2, be2, &mut params.bn2_stats, mode, BN_MOMENTUM, BN_EPS)?;
    let pool2 = g.maxpool2d(bn2, 2)?;
    note(g, pool2, &mut trace);
    let drop2 = g.dropout(pool2, params.dropout2, mode, rng)?;

    let flat = g.reshape(drop2, vec![n, GLYNN_FLAT])?;
    let w = g.param(&params.dense_w);
    let b = g.param(&params.dense_b);
    let out = g.dense(flat, w, b)?;
    note(g, out, &mut trace);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::TensorError;
    use rand::SeedableRng;

    fn glyph_batch(n: usize) -> Tensor {
        let mut data = vec![0.0; n * 64 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i % 23) as f64) / 22.0;
        }
        Tensor::from_vec(vec![n, 64, 64, 1], data).unwrap()
    }

    #[test]
    fn infer_output_extent_is_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = GlynnParams::init(&mut rng);
        for n in [1, 2, 8] {
            let mut g = Graph::new();
            let x = g.constant(glyph_batch(n));
            let y = glynn_forward(&mut g, x, &mut params, NormMode::Infer, &mut rng).unwrap();
            assert_eq!(g.value(y).shape(), &[n, GLYNN_OUT_DIM]);
        }
    }

    #[test]
    fn spatial_trace_halves_then_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = GlynnParams::init(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(glyph_batch(2));
        let mut trace = Vec::new();
        glynn_forward_traced(&mut g, x, &mut params, NormMode::Infer, &mut rng, Some(&mut trace))
            .unwrap();
        let spatial: Vec<usize> = trace.iter().filter(|s| s.len() == 4).map(|s| s[1]).collect();
        assert_eq!(spatial, vec![64, 32, 16, 16, 8]);
        assert_eq!(trace.last().unwrap(), &vec![2, GLYNN_OUT_DIM]);
    }

    #[test]
    fn train_mode_rejects_batch_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = GlynnParams::init(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(glyph_batch(1));
        let err = glynn_forward(&mut g, x, &mut params, NormMode::Train, &mut rng);
        assert!(matches!(err, Err(TensorError::BatchTooSmall(1))));
    }

    #[test]
    fn infer_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = GlynnParams::init(&mut rng);
        let run = |params: &mut GlynnParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g = Graph::new();
            let x = g.constant(glyph_batch(2));
            let y = glynn_forward(&mut g, x, params, NormMode::Infer, &mut rng).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(&mut params), run(&mut params));
    }

    #[test]
    fn train_mode_updates_running_stats_and_flows_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = GlynnParams::init(&mut rng);
        let before = params.bn1_stats.mean.clone();
        let mut g = Graph::new();
        let x = g.constant(glyph_batch(2));
        let y = glynn_forward(&mut g, x, &mut params, NormMode::Train, &mut rng).unwrap();
        assert_ne!(params.bn1_stats.mean.data(), before.data());
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        params.accumulate_grads(&g);
        let kernel_grad_norm = params.conv1_kernel.grad.l2_norm();
        assert!(kernel_grad_norm > 0.0, "conv1 kernel got no gradient");
    }
}
