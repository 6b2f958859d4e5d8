use rand::Rng;

use super::param::Parameter;
use super::tensor::{Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Convolution padding rule.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output extent is `ceil(in / stride)`.
    Same,
    /// No padding; output extent is `floor((in - k) / stride) + 1`.
    Valid,
}

/// Train/infer switch for dropout and batch normalization.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Elementwise nonlinearity.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => {
                if x >= 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative, expressed from the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Running mean/variance owned by a batch-norm layer.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats { mean: Tensor::zeros(&[channels]), var: Tensor::ones(&[channels]) }
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    ConcatLast(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    Act(NodeId, Activation),
    LogSumExpLast(NodeId),
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId, stride: (usize, usize), pad: (usize, usize) },
    MaxPool2d { input: NodeId, argmax: Vec<usize> },
    LayerNorm { input: NodeId, gain: NodeId, shift: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { input: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Dropout { input: NodeId, factors: Vec<f64> },
    Upsample2d { input: NodeId, factor: usize },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    param: Option<String>,
    op: Op,
}

/// Tape of one forward pass.
///
/// Operations are recorded in execution order; [`Graph::backward`] visits
/// them exactly once in reverse. A graph belongs to a single training
/// step and is rebuilt for the next one.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, needs_grad, param: None, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn any_needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.needs(*id))
    }

    /// Inserts a tensor as a leaf; differentiable iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad();
        self.push(t, needs, Op::Leaf)
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    /// Inserts a parameter value as a differentiable leaf tagged with its name.
    pub fn param(&mut self, p: &Parameter) -> NodeId {
        let id = self.push(p.value.clone(), true, Op::Leaf);
        self.nodes[id.0].param = Some(p.name.clone());
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass, kept for leaves only.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// `(name, gradient)` for every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            let name = n.param.as_deref()?;
            let g = self.grads.get(i)?.as_ref()?;
            Some((name, g))
        })
    }

    // ---- elementwise and linear ----

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(out, needs, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(out, needs, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(out, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        self.push(out, needs, Op::Scale(a, c))
    }

    /// Broadcasts a vector over the last axis: `out[.., d] = x[.., d] + b[d]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let d = *self
            .value(x)
            .shape()
            .last()
            .ok_or_else(|| TensorError::shape("add_bias", "input is a scalar"))?;
        if self.value(bias).shape() != [d] {
            return Err(TensorError::shape(
                "add_bias",
                format!("bias {:?} does not match last extent {}", self.value(bias).shape(), d),
            ));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv[i % d];
        }
        let needs = self.any_needs(&[x, bias]);
        Ok(self.push(out, needs, Op::AddBias(x, bias)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (n, k) = self.value(a).dims2("matmul")?;
        let (k2, m) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::shape("matmul", format!("[{},{}] x [{},{}]", n, k, k2, m)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let out = Tensor::from_vec(vec![n, m], out)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(out, needs, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (n, m) = self.value(a).dims2("transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        let out = Tensor::from_vec(vec![m, n], data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let out = self.value(a).reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Reshape(a)))
    }

    /// Affine map of rows: `x [N,Din] . w [Din,Dout] + b [Dout]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let prod = self.matmul(x, w)?;
        self.add_bias(prod, b)
    }

    // ---- shape manipulation ----

    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::arg("concat_last", "no inputs"));
        }
        let lead_shape = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let lead: usize = lead_shape.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead_shape[..] {
                return Err(TensorError::shape("concat_last", format!("{:?} vs lead {:?}", s, lead_shape)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; lead * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..lead {
                data[r * total + col..r * total + col + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead_shape;
        shape.push(total);
        let out = Tensor::from_vec(shape, data)?;
        let needs = self.any_needs(parts);
        Ok(self.push(out, needs, Op::ConcatLast(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::arg("concat_rows", "no inputs"));
        }
        let (_, c) = self.value(parts[0]).dims2("concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c2) = self.value(p).dims2("concat_rows")?;
            if c2 != c {
                return Err(TensorError::shape("concat_rows", format!("widths {} vs {}", c, c2)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::from_vec(vec![rows, c], data)?;
        let needs = self.any_needs(parts);
        Ok(self.push(out, needs, Op::ConcatRows(parts.to_vec())))
    }

    /// Slice `len` rows starting at `start` along the first axis.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let shape = self.value(a).shape().to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(TensorError::shape(
                "slice_rows",
                format!("rows {}..{} of {:?}", start, start + len, shape),
            ));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(a).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let out = Tensor::from_vec(out_shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::SliceRows(a, start)))
    }

    /// Slice `len` entries starting at `start` along the last axis.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let shape = self.value(a).shape().to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::shape("slice_cols", "scalar input"))?;
        if start + len > d {
            return Err(TensorError::shape("slice_cols", format!("cols {}..{} of {}", start, start + len, d)));
        }
        let lead: usize = shape[..shape.len() - 1].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(lead * len);
        for r in 0..lead {
            data.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let out = Tensor::from_vec(out_shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::SliceCols(a, start)))
    }

    /// `out[i, :] = a[rows[i], :]`; a row may repeat.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId, TensorError> {
        let (r, c) = self.value(a).dims2("gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&x| x >= r) {
            return Err(TensorError::arg("gather_rows", format!("row {} out of {}", bad, r)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in &rows {
            data.extend_from_slice(&src[row * c..(row + 1) * c]);
        }
        let out = Tensor::from_vec(vec![rows.len(), c], data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::GatherRows(a, rows)))
    }

    /// Picks flat positions out of a tensor into a vector.
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId, TensorError> {
        let n = self.value(a).numel();
        if let Some(&bad) = indices.iter().find(|&&x| x >= n) {
            return Err(TensorError::arg("gather", format!("index {} out of {}", bad, n)));
        }
        let src = self.value(a).data();
        let data: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_vec(vec![indices.len()], data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Gather(a, indices)))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), needs, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s / n), needs, Op::Mean(a))
    }

    /// Log-sum-exp over the last axis, computed stably.
    pub fn logsumexp_last(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.value(a).shape().to_vec();
        let k = *shape.last().ok_or_else(|| TensorError::shape("logsumexp", "scalar input"))?;
        let lead: usize = shape[..shape.len() - 1].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(lead);
        for r in 0..lead {
            data.push(logsumexp_slice(&src[r * k..(r + 1) * k]));
        }
        let out = Tensor::from_vec(shape[..shape.len() - 1].to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::LogSumExpLast(a)))
    }

    // ---- nonlinearities ----

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let out = self.value(a).map(|v| kind.apply(v));
        let needs = self.needs(a);
        self.push(out, needs, Op::Act(a, kind))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Tanh)
    }

    // ---- convolution stack ----

    /// 2D convolution, NHWC layout, kernel `[kh, kw, cin, cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId, TensorError> {
        let (n, h, w, cin) = self.value(input).dims4("conv2d")?;
        let (kh, kw, kcin, cout) = self.value(kernel).dims4("conv2d")?;
        if kcin != cin {
            return Err(TensorError::shape("conv2d", format!("input channels {} vs kernel {}", cin, kcin)));
        }
        if self.value(bias).shape() != [cout] {
            return Err(TensorError::shape("conv2d", format!("bias {:?} vs cout {}", self.value(bias).shape(), cout)));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::arg("conv2d", "zero stride"));
        }
        if padding == Padding::Valid && (kh > h || kw > w) {
            return Err(TensorError::shape("conv2d", format!("kernel {}x{} exceeds input {}x{}", kh, kw, h, w)));
        }
        let oh = super::conv_out_dim(h, kh, stride.0, padding);
        let ow = super::conv_out_dim(w, kw, stride.1, padding);
        let pad = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let ph = ((oh - 1) * stride.0 + kh).saturating_sub(h);
                let pw = ((ow - 1) * stride.1 + kw).saturating_sub(w);
                (ph / 2, pw / 2)
            }
        };
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            (n, h, w, cin),
            (kh, kw, cout),
            stride,
            pad,
            (oh, ow),
        );
        let out = Tensor::from_vec(vec![n, oh, ow, cout], out)?;
        let needs = self.any_needs(&[input, kernel, bias]);
        Ok(self.push(out, needs, Op::Conv2d { input, kernel, bias, stride, pad }))
    }

    /// Non-overlapping max pooling over the two spatial axes.
    pub fn maxpool2d(&mut self, input: NodeId, pool: usize) -> Result<NodeId, TensorError> {
        let (n, h, w, c) = self.value(input).dims4("maxpool2d")?;
        if pool == 0 || h < pool || w < pool {
            return Err(TensorError::shape("maxpool2d", format!("pool {} on {}x{}", pool, h, w)));
        }
        let (oh, ow) = (h / pool, w / pool);
        let src = self.value(input).data();
        let mut data = vec![0.0; n * oh * ow * c];
        let mut argmax = vec![0usize; n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for py in 0..pool {
                            for px in 0..pool {
                                let iy = oy * pool + py;
                                let ix = ox * pool + px;
                                let idx = ((b * h + iy) * w + ix) * c + ch;
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((b * oh + oy) * ow + ox) * c + ch;
                        data[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let out = Tensor::from_vec(vec![n, oh, ow, c], data)?;
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::MaxPool2d { input, argmax }))
    }

    /// Nearest-neighbour upsampling of both spatial axes by `factor`.
    pub fn upsample2d(&mut self, input: NodeId, factor: usize) -> Result<NodeId, TensorError> {
        let (n, h, w, c) = self.value(input).dims4("upsample2d")?;
        if factor == 0 {
            return Err(TensorError::arg("upsample2d", "zero factor"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(input).data();
        let mut data = vec![0.0; n * oh * ow * c];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let iy = oy / factor;
                    let ix = ox / factor;
                    let s = ((b * h + iy) * w + ix) * c;
                    let d = ((b * oh + oy) * ow + ox) * c;
                    data[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let out = Tensor::from_vec(vec![n, oh, ow, c], data)?;
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Upsample2d { input, factor }))
    }

    // ---- normalization and dropout ----

    /// Per-row normalization to zero mean / unit variance, then gain and shift.
    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let (n, d) = self.value(input).dims2("layer_norm")?;
        if d < 2 {
            return Err(TensorError::shape("layer_norm", format!("needs at least 2 features, got {}", d)));
        }
        if self.value(gain).shape() != [d] || self.value(shift).shape() != [d] {
            return Err(TensorError::shape("layer_norm", "gain/shift do not match feature extent"));
        }
        let src = self.value(input).data();
        let gv = self.value(gain).data().to_vec();
        let sv = self.value(shift).data().to_vec();
        let mut mean = vec![0.0; n];
        let mut inv_std = vec![0.0; n];
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            mean[r] = mu;
            inv_std[r] = is;
            for j in 0..d {
                data[r * d + j] = gv[j] * (row[j] - mu) * is + sv[j];
            }
        }
        let out = Tensor::from_vec(vec![n, d], data)?;
        let needs = self.any_needs(&[input, gain, shift]);
        Ok(self.push(out, needs, Op::LayerNorm { input, gain, shift, mean, inv_std }))
    }

    /// Per-channel normalization over the batch (channels-last layout).
    ///
    /// Train mode normalizes by batch statistics and folds them into the
    /// running stats; infer mode normalizes by the running stats.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut BatchNormStats,
        mode: NormMode,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("batch_norm", format!("rank {} input", shape.len())));
        }
        let c = *shape.last().unwrap();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(TensorError::shape("batch_norm", "gamma/beta do not match channels"));
        }
        let m = self.value(input).numel() / c;
        let src = self.value(input).data();
        let (mean, var, batch_stats) = match mode {
            NormMode::Train => {
                if shape[0] < 2 {
                    return Err(TensorError::BatchTooSmall(shape[0]));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, v) in src.iter().enumerate() {
                    mean[i % c] += v;
                }
                for mu in &mut mean {
                    *mu /= m as f64;
                }
                for (i, v) in src.iter().enumerate() {
                    let d = v - mean[i % c];
                    var[i % c] += d * d;
                }
                for s in &mut var {
                    *s /= m as f64;
                }
                for ch in 0..c {
                    let rm = stats.mean.data()[ch];
                    let rv = stats.var.data()[ch];
                    stats.mean.data_mut()[ch] = momentum * rm + (1.0 - momentum) * mean[ch];
                    stats.var.data_mut()[ch] = momentum * rv + (1.0 - momentum) * var[ch];
                }
                (mean, var, true)
            }
            NormMode::Infer => (stats.mean.data().to_vec(), stats.var.data().to_vec(), false),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut data = vec![0.0; src.len()];
        for (i, v) in src.iter().enumerate() {
            let ch = i % c;
            data[i] = gv[ch] * (v - mean[ch]) * inv_std[ch] + bv[ch];
        }
        let out = Tensor::from_vec(shape, data)?;
        let needs = self.any_needs(&[input, gamma, beta]);
        Ok(self.push(out, needs, Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats }))
    }

    /// Inverted dropout: zero with probability `rate` in train mode and
    /// scale survivors by `1/(1-rate)`; identity in infer mode.
    pub fn dropout<R: Rng>(
        &mut self,
        input: NodeId,
        rate: f64,
        mode: NormMode,
        rng: &mut R,
    ) -> Result<NodeId, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::arg("dropout", format!("rate {} outside [0,1)", rate)));
        }
        if mode == NormMode::Infer || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let factors: Vec<f64> = (0..self.value(input).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data: Vec<f64> =
            self.value(input).data().iter().zip(&factors).map(|(v, f)| v * f).collect();
        let out = Tensor::from_vec(self.value(input).shape().to_vec(), data)?;
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Dropout { input, factors }))
    }

    // ---- backward ----

    /// Accumulates `d(loss)/d(leaf)` for every differentiable leaf.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => grads[id] = Some(gout),
                Op::Add(a, b) => {
                    acc(&mut grads, &self.nodes, *a, gout.clone());
                    acc(&mut grads, &self.nodes, *b, gout);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &self.nodes, *a, gout.clone());
                    acc(&mut grads, &self.nodes, *b, gout.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = mul_into(&gout, &self.nodes[b.0].value);
                    let gb = mul_into(&gout, &self.nodes[a.0].value);
                    acc(&mut grads, &self.nodes, *a, ga);
                    acc(&mut grads, &self.nodes, *b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, &self.nodes, *a, gout.map(|v| v * c));
                }
                Op::AddBias(x, bias) => {
                    let d = *self.nodes[bias.0].value.shape().last().unwrap();
                    let mut gb = vec![0.0; d];
                    for (i, v) in gout.data().iter().enumerate() {
                        gb[i % d] += v;
                    }
                    acc(&mut grads, &self.nodes, *x, gout);
                    acc(&mut grads, &self.nodes, *bias, Tensor::from_vec(vec![d], gb).unwrap());
                }
                Op::Matmul(a, b) => {
                    let (n, k) = self.nodes[a.0].value.dims2("matmul").unwrap();
                    let m = self.nodes[b.0].value.shape()[1];
                    if self.nodes[a.0].needs_grad {
                        // gA[i][kk] = sum_j g[i][j] * B[kk][j]
                        let bd = self.nodes[b.0].value.data();
                        let g = gout.data();
                        let mut ga = vec![0.0; n * k];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for kk in 0..k {
                                let brow = &bd[kk * m..(kk + 1) * m];
                                let mut s = 0.0;
                                for (gv, bv) in grow.iter().zip(brow) {
                                    s += gv * bv;
                                }
                                ga[i * k + kk] = s;
                            }
                        }
                        acc(&mut grads, &self.nodes, *a, Tensor::from_vec(vec![n, k], ga).unwrap());
                    }
                    if self.nodes[b.0].needs_grad {
                        // gB[kk][j] = sum_i A[i][kk] * g[i][j]
                        let ad = self.nodes[a.0].value.data();
                        let g = gout.data();
                        let mut gb = vec![0.0; k * m];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for kk in 0..k {
                                let av = ad[i * k + kk];
                                if av == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[kk * m..(kk + 1) * m];
                                for (o, gv) in gbrow.iter_mut().zip(grow) {
                                    *o += av * gv;
                                }
                            }
                        }
                        acc(&mut grads, &self.nodes, *b, Tensor::from_vec(vec![k, m], gb).unwrap());
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = gout.dims2("transpose").unwrap();
                    let gt = transpose_raw(gout.data(), m, n);
                    acc(&mut grads, &self.nodes, *a, Tensor::from_vec(vec![n, m], gt).unwrap());
                }
                Op::Reshape(a) => {
                    let back = gout.reshaped(self.nodes[a.0].value.shape().to_vec()).unwrap();
                    acc(&mut grads, &self.nodes, *a, back);
                }
                Op::ConcatLast(parts) => {
                    let parts = parts.clone();
                    let total = *gout.shape().last().unwrap();
                    let lead = gout.numel() / total;
                    let mut col = 0;
                    for p in parts {
                        let shape = self.nodes[p.0].value.shape().to_vec();
                        let w = *shape.last().unwrap();
                        if self.nodes[p.0].needs_grad {
                            let mut gp = vec![0.0; lead * w];
                            for r in 0..lead {
                                gp[r * w..(r + 1) * w]
                                    .copy_from_slice(&gout.data()[r * total + col..r * total + col + w]);
                            }
                            acc(&mut grads, &self.nodes, p, Tensor::from_vec(shape, gp).unwrap());
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.nodes[p.0].value.shape().to_vec();
                        let count: usize = shape.iter().product();
                        if self.nodes[p.0].needs_grad {
                            let gp = gout.data()[offset..offset + count].to_vec();
                            acc(&mut grads, &self.nodes, p, Tensor::from_vec(shape, gp).unwrap());
                        }
                        offset += count;
                    }
                }
                Op::SliceRows(a, start) => {
                    let start = *start;
                    let mut gi = Tensor::zeros_like(&self.nodes[a.0].value);
                    let row: usize = gi.shape()[1..].iter().product();
                    let len = gout.numel();
                    gi.data_mut()[start * row..start * row + len].copy_from_slice(gout.data());
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::SliceCols(a, start) => {
                    let start = *start;
                    let mut gi = Tensor::zeros_like(&self.nodes[a.0].value);
                    let d = *gi.shape().last().unwrap();
                    let w = *gout.shape().last().unwrap();
                    let lead = gout.numel() / w;
                    for r in 0..lead {
                        gi.data_mut()[r * d + start..r * d + start + w]
                            .copy_from_slice(&gout.data()[r * w..(r + 1) * w]);
                    }
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::GatherRows(a, rows) => {
                    let rows = rows.clone();
                    let mut gi = Tensor::zeros_like(&self.nodes[a.0].value);
                    let c = gi.shape()[1];
                    for (i, &row) in rows.iter().enumerate() {
                        let dst = &mut gi.data_mut()[row * c..(row + 1) * c];
                        for (d, s) in dst.iter_mut().zip(&gout.data()[i * c..(i + 1) * c]) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::Gather(a, indices) => {
                    let indices = indices.clone();
                    let mut gi = Tensor::zeros_like(&self.nodes[a.0].value);
                    for (i, &idx) in indices.iter().enumerate() {
                        gi.data_mut()[idx] += gout.data()[i];
                    }
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::Sum(a) => {
                    let g = gout.data()[0];
                    let gi = Tensor::full(self.nodes[a.0].value.shape(), g);
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.numel() as f64;
                    let g = gout.data()[0] / n;
                    let gi = Tensor::full(self.nodes[a.0].value.shape(), g);
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::Act(a, kind) => {
                    let kind = *kind;
                    let xv = self.nodes[a.0].value.data();
                    let yv = node.value.data();
                    let data: Vec<f64> = gout
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * kind.derivative(xv[i], yv[i]))
                        .collect();
                    let gi = Tensor::from_vec(self.nodes[a.0].value.shape().to_vec(), data).unwrap();
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::LogSumExpLast(a) => {
                    let xv = self.nodes[a.0].value.data();
                    let k = *self.nodes[a.0].value.shape().last().unwrap();
                    let yv = node.value.data();
                    let mut data = vec![0.0; xv.len()];
                    for r in 0..yv.len() {
                        let g = gout.data()[r];
                        for j in 0..k {
                            data[r * k + j] = g * (xv[r * k + j] - yv[r]).exp();
                        }
                    }
                    let gi = Tensor::from_vec(self.nodes[a.0].value.shape().to_vec(), data).unwrap();
                    acc(&mut grads, &self.nodes, *a, gi);
                }
                Op::Conv2d { input, kernel, bias, stride, pad } => {
                    let (input, kernel, bias, stride, pad) = (*input, *kernel, *bias, *stride, *pad);
                    let (n, h, w, cin) = self.nodes[input.0].value.dims4("conv2d").unwrap();
                    let (kh, kw, _, cout) = self.nodes[kernel.0].value.dims4("conv2d").unwrap();
                    let (oh, ow) = (gout.shape()[1], gout.shape()[2]);
                    if self.nodes[bias.0].needs_grad {
                        let mut gb = vec![0.0; cout];
                        for (i, v) in gout.data().iter().enumerate() {
                            gb[i % cout] += v;
                        }
                        acc(&mut grads, &self.nodes, bias, Tensor::from_vec(vec![cout], gb).unwrap());
                    }
                    let want_gi = self.nodes[input.0].needs_grad;
                    let want_gk = self.nodes[kernel.0].needs_grad;
                    if want_gi || want_gk {
                        let (gi, gk) = conv2d_backward(
                            self.nodes[input.0].value.data(),
                            self.nodes[kernel.0].value.data(),
                            gout.data(),
                            (n, h, w, cin),
                            (kh, kw, cout),
                            stride,
                            pad,
                            (oh, ow),
                            want_gi,
                            want_gk,
                        );
                        if want_gi {
                            acc(&mut grads, &self.nodes, input, Tensor::from_vec(vec![n, h, w, cin], gi).unwrap());
                        }
                        if want_gk {
                            acc(&mut grads, &self.nodes, kernel, Tensor::from_vec(vec![kh, kw, cin, cout], gk).unwrap());
                        }
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    let input = *input;
                    let mut gi = Tensor::zeros_like(&self.nodes[input.0].value);
                    for (o, &idx) in argmax.iter().enumerate() {
                        gi.data_mut()[idx] += gout.data()[o];
                    }
                    acc(&mut grads, &self.nodes, input, gi);
                }
                Op::Upsample2d { input, factor } => {
                    let (input, factor) = (*input, *factor);
                    let (n, h, w, c) = self.nodes[input.0].value.dims4("upsample2d").unwrap();
                    let (oh, ow) = (h * factor, w * factor);
                    let mut gi = vec![0.0; n * h * w * c];
                    for b in 0..n {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let s = ((b * oh + oy) * ow + ox) * c;
                                let d = ((b * h + oy / factor) * w + ox / factor) * c;
                                for ch in 0..c {
                                    gi[d + ch] += gout.data()[s + ch];
                                }
                            }
                        }
                    }
                    acc(&mut grads, &self.nodes, input, Tensor::from_vec(vec![n, h, w, c], gi).unwrap());
                }
                Op::LayerNorm { input, gain, shift, mean, inv_std } => {
                    let (input, gain, shift) = (*input, *gain, *shift);
                    let (n, d) = self.nodes[input.0].value.dims2("layer_norm").unwrap();
                    let xv = self.nodes[input.0].value.data();
                    let gv = self.nodes[gain.0].value.data();
                    let mut g_gain = vec![0.0; d];
                    let mut g_shift = vec![0.0; d];
                    let mut gi = vec![0.0; n * d];
                    for r in 0..n {
                        let is = inv_std[r];
                        let mu = mean[r];
                        let go = &gout.data()[r * d..(r + 1) * d];
                        let mut sum_gh = 0.0;
                        let mut sum_gh_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (xv[r * d + j] - mu) * is;
                            let gh = go[j] * gv[j];
                            g_gain[j] += go[j] * xhat;
                            g_shift[j] += go[j];
                            sum_gh += gh;
                            sum_gh_xhat += gh * xhat;
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            let xhat = (xv[r * d + j] - mu) * is;
                            let gh = go[j] * gv[j];
                            gi[r * d + j] = is * (gh - sum_gh * inv_d - xhat * sum_gh_xhat * inv_d);
                        }
                    }
                    acc(&mut grads, &self.nodes, input, Tensor::from_vec(vec![n, d], gi).unwrap());
                    acc(&mut grads, &self.nodes, gain, Tensor::from_vec(vec![d], g_gain).unwrap());
                    acc(&mut grads, &self.nodes, shift, Tensor::from_vec(vec![d], g_shift).unwrap());
                }
                Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats } => {
                    let (input, gamma, beta, batch_stats) = (*input, *gamma, *beta, *batch_stats);
                    let xv = self.nodes[input.0].value.data();
                    let gv = self.nodes[gamma.0].value.data();
                    let c = mean.len();
                    let m = xv.len() / c;
                    let mut g_gamma = vec![0.0; c];
                    let mut g_beta = vec![0.0; c];
                    for (i, g) in gout.data().iter().enumerate() {
                        let ch = i % c;
                        let xhat = (xv[i] - mean[ch]) * inv_std[ch];
                        g_gamma[ch] += g * xhat;
                        g_beta[ch] += g;
                    }
                    if self.nodes[input.0].needs_grad {
                        let mut gi = vec![0.0; xv.len()];
                        if batch_stats {
                            let mut sum_gh = vec![0.0; c];
                            let mut sum_gh_xhat = vec![0.0; c];
                            for (i, g) in gout.data().iter().enumerate() {
                                let ch = i % c;
                                let gh = g * gv[ch];
                                sum_gh[ch] += gh;
                                sum_gh_xhat[ch] += gh * (xv[i] - mean[ch]) * inv_std[ch];
                            }
                            let inv_m = 1.0 / m as f64;
                            for (i, g) in gout.data().iter().enumerate() {
                                let ch = i % c;
                                let xhat = (xv[i] - mean[ch]) * inv_std[ch];
                                let gh = g * gv[ch];
                                gi[i] = inv_std[ch] * (gh - sum_gh[ch] * inv_m - xhat * sum_gh_xhat[ch] * inv_m);
                            }
                        } else {
                            for (i, g) in gout.data().iter().enumerate() {
                                let ch = i % c;
                                gi[i] = g * gv[ch] * inv_std[ch];
                            }
                        }
                        let shape = self.nodes[input.0].value.shape().to_vec();
                        acc(&mut grads, &self.nodes, input, Tensor::from_vec(shape, gi).unwrap());
                    }
                    acc(&mut grads, &self.nodes, gamma, Tensor::from_vec(vec![c], g_gamma).unwrap());
                    acc(&mut grads, &self.nodes, beta, Tensor::from_vec(vec![c], g_beta).unwrap());
                }
                Op::Dropout { input, factors } => {
                    let input = *input;
                    let data: Vec<f64> =
                        gout.data().iter().zip(factors).map(|(g, f)| g * f).collect();
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    acc(&mut grads, &self.nodes, input, Tensor::from_vec(shape, data).unwrap());
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, delta: Tensor) {
    if !nodes[id.0].needs_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn mul_into(g: &Tensor, other: &Tensor) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
    Tensor::from_vec(g.shape().to_vec(), data).unwrap()
}

pub(crate) fn logsumexp_slice(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let crow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (c, bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
    (n, h, w, cin): (usize, usize, usize, usize),
    (kh, kw, cout): (usize, usize, usize),
    (sh, sw): (usize, usize),
    (pt, pl): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out[((b * oh + oy) * ow + ox) * cout..][..cout];
                dst.copy_from_slice(bias);
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xoff = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let koff = (ky * kw + kx) * cin * cout;
                        if cout == 1 {
                            // Kernel entries are contiguous over ci here.
                            let xrow = &input[xoff..xoff + cin];
                            let krow = &kernel[koff..koff + cin];
                            let mut s = 0.0;
                            for (xv, kv) in xrow.iter().zip(krow) {
                                s += xv * kv;
                            }
                            dst[0] += s;
                        } else {
                            for ci in 0..cin {
                                let xv = input[xoff + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                let krow = &kernel[koff + ci * cout..][..cout];
                                for (d, kv) in dst.iter_mut().zip(krow) {
                                    *d += xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    gout: &[f64],
    (n, h, w, cin): (usize, usize, usize, usize),
    (kh, kw, cout): (usize, usize, usize),
    (sh, sw): (usize, usize),
    (pt, pl): (usize, usize),
    (oh, ow): (usize, usize),
    want_gi: bool,
    want_gk: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut gi = vec![0.0; if want_gi { n * h * w * cin } else { 0 }];
    let mut gk = vec![0.0; if want_gk { kh * kw * cin * cout } else { 0 }];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let grow = &gout[((b * oh + oy) * ow + ox) * cout..][..cout];
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xoff = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let koff = (ky * kw + kx) * cin * cout;
                        if cout == 1 {
                            let g = grow[0];
                            if want_gk && want_gi {
                                for ci in 0..cin {
                                    gk[koff + ci] += input[xoff + ci] * g;
                                    gi[xoff + ci] += kernel[koff + ci] * g;
                                }
                            } else if want_gk {
                                for ci in 0..cin {
                                    gk[koff + ci] += input[xoff + ci] * g;
                                }
                            } else {
                                for ci in 0..cin {
                                    gi[xoff + ci] += kernel[koff + ci] * g;
                                }
                            }
                        } else {
                            for ci in 0..cin {
                                let krow = &kernel[koff + ci * cout..][..cout];
                                if want_gk {
                                    let xv = input[xoff + ci];
                                    let gkrow = &mut gk[koff + ci * cout..][..cout];
                                    if want_gi {
                                        let mut s = 0.0;
                                        for ((gkv, kv), g) in gkrow.iter_mut().zip(krow).zip(grow) {
                                            *gkv += xv * g;
                                            s += kv * g;
                                        }
                                        gi[xoff + ci] += s;
                                    } else if xv != 0.0 {
                                        for (gkv, g) in gkrow.iter_mut().zip(grow) {
                                            *gkv += xv * g;
                                        }
                                    }
                                } else {
                                    let mut s = 0.0;
                                    for (kv, g) in krow.iter().zip(grow) {
                                        s += kv * g;
                                    }
                                    gi[xoff + ci] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, gk)
}
