//! Network: an ordered sequence of layers with validated shapes, a forward
//! pass that records activations, and exact reverse-mode input gradients.
//!
//! Networks are immutable after construction and safe to share across
//! threads. Per-sample computation is single-threaded and deterministic:
//! repeated runs produce bit-identical results.

use crate::error::{Error, Result};
use crate::runtime::layer::Layer;
use crate::runtime::tensor::Tensor;

/// Per-layer input activations `a^(0..L)`: `activations[0]` is the network
/// input, `activations[L]` the output. Length is layer count + 1.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }

    /// Input activation of layer `l`.
    pub fn input_of(&self, l: usize) -> &Tensor {
        &self.activations[l]
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// `shapes[i]` is the input shape of layer `i`; `shapes[len]` the output.
    shapes: Vec<Vec<usize>>,
    pub name: String,
    pub labels: Vec<String>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&e| e == 0) {
            return Err(Error::ModelFormat(format!(
                "invalid input shape {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let out = layer.output_shape(shapes.last().unwrap()).map_err(|e| {
                Error::ModelFormat(format!("layer {i} ({}): {e}", layer.kind_name()))
            })?;
            shapes.push(out);
        }
        Ok(Network {
            layers,
            input_shape,
            shapes,
            name: String::new(),
            labels: Vec::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Input shape of layer `l`.
    pub fn shape_into(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::InputShape {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass recording the activation at every layer boundary.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(activations.last().unwrap())?;
            if !out.all_finite() {
                return Err(Error::Numerics(format!(
                    "non-finite activation after layer {i} ({})",
                    layer.kind_name()
                )));
            }
            activations.push(out);
        }
        let y = activations.last().unwrap().clone();
        Ok((y, ActivationTrace { activations }))
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.output_len() {
            return Err(Error::Config(format!(
                "target index {target} out of range for {} outputs",
                self.output_len()
            )));
        }
        Ok(())
    }

    /// Forward pass selecting one scalar output.
    pub fn forward_target(&self, x: &Tensor, target: usize) -> Result<(f64, ActivationTrace)> {
        self.check_target(target)?;
        let (y, trace) = self.forward(x)?;
        Ok((y.data()[target], trace))
    }

    /// Scalar output without keeping the trace.
    pub fn eval(&self, x: &Tensor, target: usize) -> Result<f64> {
        Ok(self.forward_target(x, target)?.0)
    }

    /// Exact reverse-mode gradient of output `target` w.r.t. the input.
    /// Max pooling routes to the argmax (lowest flat index on ties).
    pub fn gradient(&self, x: &Tensor, target: usize) -> Result<Tensor> {
        let (_, trace) = self.forward_target(x, target)?;
        self.gradient_from_trace(&trace, target)
    }

    /// Gradient reusing an existing forward trace.
    pub fn gradient_from_trace(&self, trace: &ActivationTrace, target: usize) -> Result<Tensor> {
        self.check_target(target)?;
        let out_len = self.output_len();
        let mut seed = vec![0.0; out_len];
        seed[target] = 1.0;
        let mut g = Tensor::from_parts_unchecked(self.output_shape().to_vec(), seed);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            g = layer.input_grad(trace.input_of(l), &g)?;
        }
        if !g.all_finite() {
            return Err(Error::Numerics("non-finite gradient".into()));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::layer::PoolSign;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    fn dense(out_in: (usize, usize), w: Vec<f64>, b: Option<Vec<f64>>) -> Layer {
        Layer::Dense {
            weight: t(vec![out_in.0, out_in.1], w),
            bias: b.map(|b| t(vec![out_in.0], b)),
        }
    }

    #[test]
    fn identity_dense_forward() {
        let net = Network::new(
            vec![2],
            vec![dense((2, 2), vec![1.0, 0.0, 0.0, 1.0], None)],
        )
        .unwrap();
        let (y, trace) = net
            .forward_target(&t(vec![2], vec![3.0, 4.0]), 0)
            .unwrap();
        assert_eq!(y, 3.0);
        assert_eq!(trace.activations.len(), 2);
        assert_eq!(trace.activations[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn single_row_dense() {
        let net = Network::new(vec![2], vec![dense((1, 2), vec![2.0, -1.0], None)]).unwrap();
        assert_eq!(net.eval(&t(vec![2], vec![3.0, 4.0]), 0).unwrap(), 2.0);
    }

    #[test]
    fn shape_mismatch_is_input_shape_error() {
        let net = Network::new(vec![2], vec![dense((1, 2), vec![2.0, -1.0], None)]).unwrap();
        let err = net.forward(&t(vec![3], vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::InputShape { .. }));
    }

    #[test]
    fn linear_gradient_is_weight_row() {
        let net = Network::new(vec![2], vec![dense((1, 2), vec![2.0, -1.0], None)]).unwrap();
        for x in [[3.0, 4.0], [-1.0, 0.5], [0.0, 0.0]] {
            let g = net.gradient(&t(vec![2], x.to_vec()), 0).unwrap();
            assert_eq!(g.data(), &[2.0, -1.0]);
        }
    }

    #[test]
    fn dead_relu_unit_has_zero_gradient() {
        // Unit 0 sees pre-activation -5 (dead); input 0 only feeds unit 0.
        let net = Network::new(
            vec![2],
            vec![
                dense((2, 2), vec![1.0, 0.0, 0.0, 1.0], Some(vec![-5.0, 0.0])),
                Layer::Relu,
                dense((1, 2), vec![1.0, 1.0], None),
            ],
        )
        .unwrap();
        let g = net.gradient(&t(vec![2], vec![1.0, 2.0]), 0).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 1.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::new(
            vec![2],
            vec![
                dense((2, 2), vec![0.3, -0.7, 1.1, 0.2], Some(vec![0.05, -0.4])),
                Layer::Relu,
                dense((1, 2), vec![0.9, -1.3], None),
            ],
        )
        .unwrap();
        let x = t(vec![2], vec![0.123456, -0.654321]);
        let y1 = net.eval(&x, 0).unwrap();
        let y2 = net.eval(&x, 0).unwrap();
        assert_eq!(y1.to_bits(), y2.to_bits());
        let g1 = net.gradient(&x, 0).unwrap();
        let g2 = net.gradient(&x, 0).unwrap();
        assert_eq!(g1.data()[0].to_bits(), g2.data()[0].to_bits());
        assert_eq!(g1.data()[1].to_bits(), g2.data()[1].to_bits());
    }

    #[test]
    fn lse_pool_network_shapes() {
        let net = Network::new(
            vec![4],
            vec![
                Layer::LogSumExpPool {
                    groups: vec![2, 2],
                    beta: 3.0,
                    sign: PoolSign::Max,
                },
                Layer::LogSumExpPool {
                    groups: vec![2],
                    beta: 5.0,
                    sign: PoolSign::Min,
                },
            ],
        )
        .unwrap();
        assert_eq!(net.output_shape(), &[1]);
    }

    #[test]
    fn non_finite_intermediate_is_numerics_error() {
        let net = Network::new(
            vec![1],
            vec![
                dense((1, 1), vec![1e308], None),
                dense((1, 1), vec![1e308], None),
            ],
        )
        .unwrap();
        let err = net.forward(&t(vec![1], vec![1e8])).unwrap_err();
        assert!(matches!(err, Error::Numerics(_)));
    }
}
