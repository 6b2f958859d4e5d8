use super::graph::Graph;
use super::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Parameter { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }
}

/// Whether decoupled weight decay applies to a parameter.
///
/// Decay is keyed on the trailing name segment: matrix-like parameters
/// are called `kernel` or `weight`; biases, norm gains/shifts and other
/// vectors are exempt.
pub fn decays(name: &str) -> bool {
    matches!(name.rsplit('.').next(), Some("kernel") | Some("weight"))
}

/// Anything that owns a flat collection of uniquely named parameters.
pub trait ParamGroup {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Adds the graph's parameter gradients into the matching accumulators.
    fn accumulate_grads(&mut self, graph: &Graph) {
        let mut params = self.params_mut();
        for (name, grad) in graph.param_grads() {
            if let Some(p) = params.iter_mut().find(|p| p.name == name) {
                p.grad.add_assign(grad);
            }
        }
    }

    /// Euclidean norm over every gradient element in the group.
    fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .map(|p| p.grad.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamGroup for Vec<Parameter> {
    fn params(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_applies_to_weights_only() {
        assert!(decays("bilstm.fwd.kernel"));
        assert!(decays("crf.emission.weight"));
        assert!(!decays("bilstm.fwd.bias"));
        assert!(!decays("strided.norm.gain"));
        assert!(!decays("strided.norm.shift"));
        assert!(!decays("glynn.bn1.gamma"));
    }
}
