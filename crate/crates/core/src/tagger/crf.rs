use rand::Rng;
use thiserror::Error;

use crate::ndtensor::{
    logsumexp_slice, truncated_normal, Graph, NodeId, ParamGroup, Parameter, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("gold tag id {tag} at position {index} is outside the tag set of size {num_tags}")]
    BadGoldTag { index: usize, tag: usize, num_tags: usize },
    #[error("gold path has {gold} tags, lattice has {len} unmasked positions")]
    GoldLengthMismatch { gold: usize, len: usize },
    #[error("lattice mask must be a true-prefix (right padding only)")]
    MaskNotPrefix,
    #[error("lattice has no unmasked positions")]
    EmptyLattice,
    #[error("brute-force enumeration over {paths} paths exceeds the 10^6 budget")]
    InstanceTooLarge { paths: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Linear-chain CRF parameters: the emission projection from BiLSTM
/// output to tag scores, and a transition matrix with START/STOP rows.
///
/// The transition tensor is `[L+2, L+2]` with START at index `L` and
/// STOP at `L+1`. Transitions into START and out of STOP are impossible
/// by construction: no score path ever reads them (the structural form
/// of the usual negative-infinity mask, which keeps the stored values
/// finite for the optimizer).
#[derive(Clone)]
pub struct CrfParams {
    pub num_tags: usize,
    pub emission_w: Parameter,
    pub emission_b: Parameter,
    pub transition: Parameter,
}

impl CrfParams {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, num_tags: usize) -> Self {
        let std = (2.0 / input_dim as f64).sqrt();
        CrfParams {
            num_tags,
            emission_w: Parameter::new(
                "crf.emission.weight",
                truncated_normal(rng, &[input_dim, num_tags], std),
            ),
            emission_b: Parameter::new("crf.emission.bias", Tensor::zeros(&[num_tags])),
            transition: Parameter::new(
                "crf.transition.weight",
                truncated_normal(rng, &[num_tags + 2, num_tags + 2], 0.01),
            ),
        }
    }

    pub fn start_index(&self) -> usize {
        self.num_tags
    }

    pub fn stop_index(&self) -> usize {
        self.num_tags + 1
    }

    /// The transition matrix with the impossible entries (into START,
    /// out of STOP) shown as negative infinity.
    pub fn effective_transitions(&self) -> Tensor {
        let mut t = self.transition.value.clone();
        let l2 = self.num_tags + 2;
        for i in 0..l2 {
            let o = i * l2 + self.start_index();
            t.data_mut()[o] = f64::NEG_INFINITY;
        }
        for j in 0..l2 {
            let o = self.stop_index() * l2 + j;
            t.data_mut()[o] = f64::NEG_INFINITY;
        }
        t
    }
}

impl ParamGroup for CrfParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.emission_w, &self.emission_b, &self.transition]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.emission_w, &mut self.emission_b, &mut self.transition]
    }
}

/// Per-token tag scores plus a right-padding mask.
#[derive(Clone, Debug)]
pub struct TagLattice {
    pub emissions: Tensor,
    pub mask: Vec<bool>,
}

impl TagLattice {
    pub fn new(emissions: Tensor, mask: Vec<bool>) -> Result<Self, CrfError> {
        let (t, _) = emissions.dims2("lattice")?;
        if mask.len() != t {
            return Err(TensorError::shape("lattice", format!("mask {} vs rows {}", mask.len(), t)).into());
        }
        let len = mask.iter().take_while(|&&m| m).count();
        if mask[len..].iter().any(|&m| m) {
            return Err(CrfError::MaskNotPrefix);
        }
        if len == 0 {
            return Err(CrfError::EmptyLattice);
        }
        Ok(TagLattice { emissions, mask })
    }

    /// An unpadded lattice.
    pub fn dense(emissions: Tensor) -> Result<Self, CrfError> {
        let (t, _) = emissions.dims2("lattice")?;
        TagLattice::new(emissions, vec![true; t])
    }

    pub fn len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.emissions.shape()[1]
    }
}

/// Log partition function by the forward algorithm, in log space, as a
/// graph node: `emissions` is `[T, L]` (unmasked positions only) and
/// `trans` is the raw `[L+2, L+2]` transition leaf.
pub fn log_partition_graph(
    g: &mut Graph,
    emissions: NodeId,
    trans: NodeId,
    num_tags: usize,
) -> Result<NodeId, TensorError> {
    let (t_len, l) = g.value(emissions).dims2("log_partition")?;
    debug_assert_eq!(l, num_tags);
    let (start, stop) = (num_tags, num_tags + 1);
    // trans[i][j] for i,j < L, transposed so rows are destinations.
    let rows = g.slice_rows(trans, 0, l)?;
    let block = g.slice_cols(rows, 0, l)?;
    let block_t = g.transpose(block)?;
    // START -> j and j -> STOP.
    let start_row = g.slice_rows(trans, start, 1)?;
    let start_scores = g.slice_cols(start_row, 0, l)?;
    let start_vec = g.reshape(start_scores, vec![l])?;
    let stop_cols = g.slice_cols(rows, stop, 1)?;
    let stop_vec = g.reshape(stop_cols, vec![l])?;

    let e0 = g.slice_rows(emissions, 0, 1)?;
    let e0 = g.reshape(e0, vec![l])?;
    let mut alpha = g.add(e0, start_vec)?;
    for t in 1..t_len {
        // scores[j][i] = trans[i][j] + alpha[i]; reduce over i.
        let scores = g.add_bias(block_t, alpha)?;
        let reduced = g.logsumexp_last(scores)?;
        let et = g.slice_rows(emissions, t, 1)?;
        let et = g.reshape(et, vec![l])?;
        alpha = g.add(reduced, et)?;
    }
    let final_scores = g.add(alpha, stop_vec)?;
    g.logsumexp_last(final_scores)
}

/// Score of a fixed tag path (emissions plus transitions, START and
/// STOP included) as a graph node.
pub fn gold_score_graph(
    g: &mut Graph,
    emissions: NodeId,
    trans: NodeId,
    gold: &[usize],
    num_tags: usize,
) -> Result<NodeId, CrfError> {
    let (t_len, l) = g.value(emissions).dims2("gold_score")?;
    if gold.len() != t_len {
        return Err(CrfError::GoldLengthMismatch { gold: gold.len(), len: t_len });
    }
    if let Some((index, &tag)) = gold.iter().enumerate().find(|(_, &t)| t >= num_tags) {
        return Err(CrfError::BadGoldTag { index, tag, num_tags });
    }
    let emit_idx: Vec<usize> = gold.iter().enumerate().map(|(t, &y)| t * l + y).collect();
    let emit = g.gather(emissions, emit_idx)?;
    let emit_sum = g.sum(emit);
    let l2 = num_tags + 2;
    let mut trans_idx = Vec::with_capacity(gold.len() + 1);
    trans_idx.push(num_tags * l2 + gold[0]); // START -> first
    for w in gold.windows(2) {
        trans_idx.push(w[0] * l2 + w[1]);
    }
    trans_idx.push(gold[gold.len() - 1] * l2 + (num_tags + 1)); // last -> STOP
    let tr = g.gather(trans, trans_idx)?;
    let tr_sum = g.sum(tr);
    Ok(g.add(emit_sum, tr_sum)?)
}

/// Negative log likelihood of the gold path: `log Z - score(gold)`.
pub fn crf_nll_graph(
    g: &mut Graph,
    emissions: NodeId,
    trans: NodeId,
    gold: &[usize],
    num_tags: usize,
) -> Result<NodeId, CrfError> {
    let log_z = log_partition_graph(g, emissions, trans, num_tags)?;
    let gold_score = gold_score_graph(g, emissions, trans, gold, num_tags)?;
    Ok(g.sub(log_z, gold_score)?)
}

fn unmasked_emissions(lattice: &TagLattice) -> Result<Tensor, CrfError> {
    let len = lattice.len();
    if len == 0 {
        return Err(CrfError::EmptyLattice);
    }
    let l = lattice.num_tags();
    let data = lattice.emissions.data()[..len * l].to_vec();
    Ok(Tensor::from_vec(vec![len, l], data).unwrap())
}

/// Loss value of a gold path under the lattice and the CRF parameters.
pub fn crf_nll(lattice: &TagLattice, gold: &[usize], crf: &CrfParams) -> Result<f64, CrfError> {
    let emissions = unmasked_emissions(lattice)?;
    if gold.len() != emissions.shape()[0] {
        return Err(CrfError::GoldLengthMismatch { gold: gold.len(), len: emissions.shape()[0] });
    }
    let mut g = Graph::new();
    let e = g.constant(emissions);
    let t = g.constant(crf.transition.value.clone());
    let nll = crf_nll_graph(&mut g, e, t, gold, crf.num_tags)?;
    Ok(g.value(nll).to_scalar()?)
}

/// Log partition value for a lattice (used by the oracle comparisons).
pub fn log_partition(lattice: &TagLattice, crf: &CrfParams) -> Result<f64, CrfError> {
    let emissions = unmasked_emissions(lattice)?;
    let mut g = Graph::new();
    let e = g.constant(emissions);
    let t = g.constant(crf.transition.value.clone());
    let z = log_partition_graph(&mut g, e, t, crf.num_tags)?;
    Ok(g.value(z).to_scalar()?)
}

/// Viterbi decoding: the maximum-scoring tag path and its score.
/// Ties break towards the lowest tag index at every backpointer.
pub fn crf_decode(lattice: &TagLattice, crf: &CrfParams) -> Result<(Vec<usize>, f64), CrfError> {
    let emissions = unmasked_emissions(lattice)?;
    let (t_len, l) = (emissions.shape()[0], emissions.shape()[1]);
    let trans = &crf.transition.value;
    let l2 = crf.num_tags + 2;
    let tr = |i: usize, j: usize| trans.data()[i * l2 + j];
    let (start, stop) = (crf.start_index(), crf.stop_index());

    let mut delta: Vec<f64> = (0..l).map(|j| emissions.at(&[0, j]) + tr(start, j)).collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; l];
        let mut bp = vec![0usize; l];
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, &d) in delta.iter().enumerate() {
                let s = d + tr(i, j);
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            next[j] = best + emissions.at(&[t, j]);
            bp[j] = best_i;
        }
        delta = next;
        backptr.push(bp);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_j = 0;
    for (j, &d) in delta.iter().enumerate() {
        let s = d + tr(j, stop);
        if s > best {
            best = s;
            best_j = j;
        }
    }
    let mut path = vec![best_j];
    for bp in backptr.iter().rev() {
        path.push(bp[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, best))
}

/// Exhaustive-enumeration oracle: log partition by log-sum-exp over all
/// `L^T` paths and the argmax path by scan. Only for small instances.
pub fn crf_brute_oracle(lattice: &TagLattice, crf: &CrfParams) -> Result<(f64, Vec<usize>), CrfError> {
    let emissions = unmasked_emissions(lattice)?;
    let (t_len, l) = (emissions.shape()[0], emissions.shape()[1]);
    let paths = (l as f64).powi(t_len as i32);
    if paths > 1e6 {
        return Err(CrfError::InstanceTooLarge { paths });
    }
    let trans = &crf.transition.value;
    let l2 = crf.num_tags + 2;
    let tr = |i: usize, j: usize| trans.data()[i * l2 + j];
    let (start, stop) = (crf.start_index(), crf.stop_index());

    let total = paths as usize;
    let mut scores = Vec::with_capacity(total);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_path = vec![0usize; t_len];
    let mut path = vec![0usize; t_len];
    for mut code in 0..total {
        // Decode the path in lexicographic order, first position most
        // significant.
        for t in (0..t_len).rev() {
            path[t] = code % l;
            code /= l;
        }
        let mut score = tr(start, path[0]) + emissions.at(&[0, path[0]]);
        for t in 1..t_len {
            score += tr(path[t - 1], path[t]) + emissions.at(&[t, path[t]]);
        }
        score += tr(path[t_len - 1], stop);
        if score > best_score {
            best_score = score;
            best_path.copy_from_slice(&path);
        }
        scores.push(score);
    }
    Ok((logsumexp_slice(&scores), best_path))
}
