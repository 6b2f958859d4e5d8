use super::graph::{Graph, NodeId};
use super::tensor::{Tensor, TensorError};

/// Compares the analytic gradient of a scalar-valued builder against
/// central finite differences at `point`, over every coordinate.
///
/// Returns the maximum of `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_subset(f, point, eps, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates; used where a
/// full sweep would be prohibitively slow (e.g. whole encoders).
pub fn grad_check_subset<F>(
    mut f: F,
    point: &Tensor,
    eps: f64,
    coords: &[usize],
) -> Result<f64, TensorError>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let mut graph = Graph::new();
    let leaf = graph.leaf(point.clone().requiring_grad());
    let out = f(&mut graph, leaf)?;
    if graph.value(out).numel() != 1 {
        return Err(TensorError::NonScalarLoss(graph.value(out).shape().to_vec()));
    }
    graph.backward(out)?;
    let analytic = graph
        .grad(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros_like(point));

    let mut eval = |x: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let l = g.leaf(x);
        let o = f(&mut g, l)?;
        g.value(o).to_scalar()
    };

    let mut max_err = 0.0f64;
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let fp = eval(plus)?;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let fm = eval(minus)?;
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
