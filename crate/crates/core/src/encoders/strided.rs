use rand::Rng;

use crate::ndtensor::{
    truncated_normal, Activation, Graph, NodeId, Padding, ParamGroup, Parameter, Tensor,
    TensorError,
};

/// Output dimension of the strided encoder.
pub const STRIDED_OUT_DIM: usize = 64;

const CHANNELS: usize = 64;
const KERNEL: usize = 3;
const LEAKY_SLOPE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;

/// Four stride-2 convolutions (64 filters, kernel 3, leaky ReLU), a
/// dense projection to 64, and layer normalization on the output.
///
/// Spatially: 64 -> 32 -> 16 -> 8 -> 4, so the flattened feature is
/// 4 * 4 * 64 = 1024 wide.
#[derive(Clone)]
pub struct StridedParams {
    convs: Vec<(Parameter, Parameter)>,
    dense_w: Parameter,
    dense_b: Parameter,
    ln_gain: Parameter,
    ln_shift: Parameter,
}

impl StridedParams {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut cin = 1;
        for i in 1..=4 {
            let fan_in = KERNEL * KERNEL * cin;
            let std = (2.0 / fan_in as f64).sqrt();
            let kernel = Parameter::new(
                format!("strided.conv{i}.kernel"),
                truncated_normal(rng, &[KERNEL, KERNEL, cin, CHANNELS], std),
            );
            let bias = Parameter::new(format!("strided.conv{i}.bias"), Tensor::zeros(&[CHANNELS]));
            convs.push((kernel, bias));
            cin = CHANNELS;
        }
        let flat = 4 * 4 * CHANNELS;
        let std = (2.0 / flat as f64).sqrt();
        StridedParams {
            convs,
            dense_w: Parameter::new(
                "strided.dense.weight",
                truncated_normal(rng, &[flat, STRIDED_OUT_DIM], std),
            ),
            dense_b: Parameter::new("strided.dense.bias", Tensor::zeros(&[STRIDED_OUT_DIM])),
            ln_gain: Parameter::new("strided.norm.gain", Tensor::ones(&[STRIDED_OUT_DIM])),
            ln_shift: Parameter::new("strided.norm.shift", Tensor::zeros(&[STRIDED_OUT_DIM])),
        }
    }
}

impl ParamGroup for StridedParams {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for (k, b) in &self.convs {
            out.push(k);
            out.push(b);
        }
        out.extend([&self.dense_w, &self.dense_b, &self.ln_gain, &self.ln_shift]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for (k, b) in &mut self.convs {
            out.push(k);
            out.push(b);
        }
        out.extend([&mut self.dense_w, &mut self.dense_b, &mut self.ln_gain, &mut self.ln_shift]);
        out
    }
}

/// Encodes `[N, 64, 64, 1]` glyphs into layer-normalized `[N, 64]` rows.
pub fn strided_forward(
    g: &mut Graph,
    x: NodeId,
    params: &StridedParams,
) -> Result<NodeId, TensorError> {
    strided_forward_traced(g, x, params, None)
}

/// Same as [`strided_forward`] but records every intermediate shape.
pub fn strided_forward_traced(
    g: &mut Graph,
    x: NodeId,
    params: &StridedParams,
    mut trace: Option<&mut Vec<Vec<usize>>>,
) -> Result<NodeId, TensorError> {
    let note = |g: &Graph, id: NodeId, trace: &mut Option<&mut Vec<Vec<usize>>>| {
        if let Some(t) = trace {
            t.push(g.value(id).shape().to_vec());
        }
    };
    let n = g.value(x).shape()[0];
    let mut h = x;
    note(g, h, &mut trace);
    for (kernel, bias) in &params.convs {
        let k = g.param(kernel);
        let b = g.param(bias);
        let conv = g.conv2d(h, k, b, (2, 2), Padding::Same)?;
        h = g.activation(conv, Activation::LeakyRelu(LEAKY_SLOPE));
        note(g, h, &mut trace);
    }
    let flat = g.reshape(h, vec![n, 4 * 4 * CHANNELS])?;
    let w = g.param(&params.dense_w);
    let b = g.param(&params.dense_b);
    let dense = g.dense(flat, w, b)?;
    note(g, dense, &mut trace);
    let gain = g.param(&params.ln_gain);
    let shift = g.param(&params.ln_shift);
    let out = g.layer_norm(dense, gain, shift, LN_EPS)?;
    note(g, out, &mut trace);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn glyph_batch(n: usize) -> Tensor {
        let mut data = vec![0.0; n * 64 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i % 17) as f64) / 16.0;
        }
        Tensor::from_vec(vec![n, 64, 64, 1], data).unwrap()
    }

    #[test]
    fn output_extent_is_64_for_any_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = StridedParams::init(&mut rng);
        for n in [1, 2, 5] {
            let mut g = Graph::new();
            let x = g.constant(glyph_batch(n));
            let y = strided_forward(&mut g, x, &params).unwrap();
            assert_eq!(g.value(y).shape(), &[n, STRIDED_OUT_DIM]);
        }
    }

    #[test]
    fn spatial_trace_halves_to_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = StridedParams::init(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(glyph_batch(2));
        let mut trace = Vec::new();
        strided_forward_traced(&mut g, x, &params, Some(&mut trace)).unwrap();
        let spatial: Vec<usize> = trace.iter().filter(|s| s.len() == 4).map(|s| s[1]).collect();
        assert_eq!(spatial, vec![64, 32, 16, 8, 4]);
        assert_eq!(trace[trace.len() - 2], vec![2, 64]); // dense output
    }

    #[test]
    fn rows_are_layer_normalized_at_init() {
        // Unit gain and zero shift at init, so each row has mean ~0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = StridedParams::init(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(glyph_batch(3));
        let y = strided_forward(&mut g, x, &params).unwrap();
        for r in 0..3 {
            let row = &g.value(y).data()[r * 64..(r + 1) * 64];
            let mean = row.iter().sum::<f64>() / 64.0;
            assert!(mean.abs() <= 1e-6, "row {r} mean {mean}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = StridedParams::init(&mut rng);
        let once = {
            let mut g = Graph::new();
            let x = g.constant(glyph_batch(2));
            let y = strided_forward(&mut g, x, &params).unwrap();
            g.value(y).data().to_vec()
        };
        let twice = {
            let mut g = Graph::new();
            let x = g.constant(glyph_batch(2));
            let y = strided_forward(&mut g, x, &params).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(once, twice);
    }
}
