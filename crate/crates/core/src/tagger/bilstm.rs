use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ndtensor::{
    orthogonal_init, truncated_normal, Graph, NodeId, NormMode, ParamGroup, Parameter, Tensor,
    TensorError,
};

/// Default hidden size per direction.
pub const DEFAULT_HIDDEN: usize = 256;

/// Weights of one LSTM direction. Gates are packed `[i, f, g, o]`
/// along the last axis of the two kernels.
#[derive(Clone)]
struct Direction {
    input_kernel: Parameter,     // [D, 4H]
    recurrent_kernel: Parameter, // [H, 4H]
    bias: Parameter,             // [4H]
}

impl Direction {
    fn init<R: Rng>(rng: &mut R, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        let std = (2.0 / input_dim as f64).sqrt();
        let input_kernel = Parameter::new(
            format!("{prefix}.input.kernel"),
            truncated_normal(rng, &[input_dim, 4 * hidden], std),
        );
        // Orthogonal per gate block.
        let mut rec = Tensor::zeros(&[hidden, 4 * hidden]);
        for gate in 0..4 {
            let q = orthogonal_init(rng, hidden);
            for r in 0..hidden {
                for c in 0..hidden {
                    rec.set(&[r, gate * hidden + c], q.at(&[r, c]));
                }
            }
        }
        let recurrent_kernel = Parameter::new(format!("{prefix}.recurrent.kernel"), rec);
        // Forget-gate bias starts at 1 so early memories survive.
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for i in hidden..2 * hidden {
            bias.data_mut()[i] = 1.0;
        }
        let bias = Parameter::new(format!("{prefix}.bias"), bias);
        Direction { input_kernel, recurrent_kernel, bias }
    }
}

/// A single bidirectional LSTM layer with dropout on its output.
#[derive(Clone)]
pub struct BiLstmParams {
    pub hidden: usize,
    pub dropout: f64,
    fwd: Direction,
    bwd: Direction,
}

impl BiLstmParams {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize, dropout: f64) -> Self {
        BiLstmParams {
            hidden,
            dropout,
            fwd: Direction::init(rng, "bilstm.fwd", input_dim, hidden),
            bwd: Direction::init(rng, "bilstm.bwd", input_dim, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_kernel.value.shape()[0]
    }

    /// Copies the forward direction's weights into the backward one;
    /// only used by tests that rely on the mirror symmetry.
    pub fn tie_directions(&mut self) {
        self.bwd.input_kernel.value = self.fwd.input_kernel.value.clone();
        self.bwd.recurrent_kernel.value = self.fwd.recurrent_kernel.value.clone();
        self.bwd.bias.value = self.fwd.bias.value.clone();
    }
}

impl ParamGroup for BiLstmParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.fwd.input_kernel,
            &self.fwd.recurrent_kernel,
            &self.fwd.bias,
            &self.bwd.input_kernel,
            &self.bwd.recurrent_kernel,
            &self.bwd.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.fwd.input_kernel,
            &mut self.fwd.recurrent_kernel,
            &mut self.fwd.bias,
            &mut self.bwd.input_kernel,
            &mut self.bwd.recurrent_kernel,
            &mut self.bwd.bias,
        ]
    }
}

struct DirectionNodes {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

/// Graph handles for the BiLSTM parameters, inserted once per forward
/// pass and shared across the sentences of a batch.
pub struct BiLstmNodes {
    fwd: DirectionNodes,
    bwd: DirectionNodes,
    hidden: usize,
    dropout: f64,
}

impl BiLstmParams {
    /// Inserts the weights into a graph once; every sentence of the
    /// batch then reuses the same leaves.
    pub fn insert(&self, g: &mut Graph) -> BiLstmNodes {
        BiLstmNodes {
            fwd: DirectionNodes {
                wx: g.param(&self.fwd.input_kernel),
                wh: g.param(&self.fwd.recurrent_kernel),
                b: g.param(&self.fwd.bias),
            },
            bwd: DirectionNodes {
                wx: g.param(&self.bwd.input_kernel),
                wh: g.param(&self.bwd.recurrent_kernel),
                b: g.param(&self.bwd.bias),
            },
            hidden: self.hidden,
            dropout: self.dropout,
        }
    }
}

/// One LSTM cell step on `[1, D]` input; returns `(h, c)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_step(
    g: &mut Graph,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId), TensorError> {
    let from_x = g.matmul(x_t, wx)?;
    let from_h = g.matmul(h_prev, wh)?;
    let pre = g.add(from_x, from_h)?;
    let gates = g.add_bias(pre, b)?;
    let i_gate = g.slice_cols(gates, 0, hidden)?;
    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.slice_cols(gates, hidden, hidden)?;
    let f_gate = g.sigmoid(f_gate);
    let g_gate = g.slice_cols(gates, 2 * hidden, hidden)?;
    let g_gate = g.tanh(g_gate);
    let o_gate = g.slice_cols(gates, 3 * hidden, hidden)?;
    let o_gate = g.sigmoid(o_gate);
    let keep = g.mul(f_gate, c_prev)?;
    let write = g.mul(i_gate, g_gate)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c);
    let h = g.mul(o_gate, c_act)?;
    Ok((h, c))
}

fn run_direction(
    g: &mut Graph,
    reps: NodeId,
    nodes: &DirectionNodes,
    hidden: usize,
    t_len: usize,
    reversed: bool,
) -> Result<Vec<NodeId>, TensorError> {
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![NodeId(0); t_len];
    let order: Vec<usize> =
        if reversed { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        let x_t = g.slice_rows(reps, t, 1)?;
        let (h_new, c_new) = lstm_step(g, x_t, h, c, nodes.wx, nodes.wh, nodes.b, hidden)?;
        h = h_new;
        c = c_new;
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Runs both directions over `[T, D]` representations and concatenates
/// them per timestep into `[T, 2H]`; dropout applies to the output in
/// train mode.
pub fn bilstm_forward(
    g: &mut Graph,
    reps: NodeId,
    params: &BiLstmParams,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TensorError> {
    let nodes = params.insert(g);
    bilstm_forward_nodes(g, reps, &nodes, mode, rng)
}

/// [`bilstm_forward`] over already-inserted parameter leaves.
pub fn bilstm_forward_nodes(
    g: &mut Graph,
    reps: NodeId,
    nodes: &BiLstmNodes,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TensorError> {
    let (t_len, _) = g.value(reps).dims2("bilstm")?;
    let hf = run_direction(g, reps, &nodes.fwd, nodes.hidden, t_len, false)?;
    let hb = run_direction(g, reps, &nodes.bwd, nodes.hidden, t_len, true)?;
    let rows: Vec<NodeId> = hf
        .into_iter()
        .zip(hb)
        .map(|(f, b)| g.concat_last(&[f, b]))
        .collect::<Result<_, _>>()?;
    let out = g.concat_rows(&rows)?;
    g.dropout(out, nodes.dropout, mode, rng)
}
