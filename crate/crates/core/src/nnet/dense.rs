use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId, Unary};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// A dense net living inside a shared flat parameter vector.
///
/// Layout, per layer in order: weights `out × in` row-major, then biases
/// `out`. Hidden layers apply the activation; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSpan {
    pub weights: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, activation: Activation, offset: usize) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Mlp { sizes, activation, offset }
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        Self::param_count(&self.sizes)
    }

    pub fn end(&self) -> usize {
        self.offset + self.n_params()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> Vec<LayerSpan> {
        let mut off = self.offset;
        self.sizes
            .windows(2)
            .map(|w| {
                let span = LayerSpan { weights: off, bias: off + w[0] * w[1], fan_in: w[0], fan_out: w[1] };
                off += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }

    /// Applies the net to `x`, which is either a vector or a `rows × in`
    /// matrix (one example per row).
    pub fn apply(&self, g: &mut Graph, params: &[f64], x: NodeId) -> NodeId {
        assert_eq!(g.shape(x).1, self.input_dim(), "mlp input width");
        let mut h = x;
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, span) in layers.iter().enumerate() {
            let w = g.param(params, span.weights, span.fan_out, span.fan_in);
            let b = g.param(params, span.bias, 1, span.fan_out);
            h = g.affine(h, w, Some(b));
            if l != last {
                h = g.unary(
                    h,
                    match self.activation {
                        Activation::Tanh => Unary::Tanh,
                        Activation::Relu => Unary::Relu,
                    },
                );
            }
        }
        h
    }

    /// Plain forward pass without recording anything.
    pub fn eval(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x.to_vec();
        for (l, span) in layers.iter().enumerate() {
            let mut out = params[span.bias..span.bias + span.fan_out].to_vec();
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &params[span.weights + o * span.fan_in..span.weights + (o + 1) * span.fan_in];
                *slot += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if l != last {
                for v in out.iter_mut() {
                    *v = match self.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            h = out;
        }
        h
    }

    /// Uniform ±√(6/(fan_in+fan_out)) weights, zero biases.
    pub fn init_glorot(&self, params: &mut [f64], rng: &mut StreamRng) {
        for span in self.layers() {
            let limit = (6.0 / (span.fan_in + span.fan_out) as f64).sqrt();
            for w in &mut params[span.weights..span.weights + span.fan_in * span.fan_out] {
                *w = rng.random_range(-limit..=limit);
            }
            params[span.bias..span.bias + span.fan_out].fill(0.0);
        }
    }

    pub fn zero(&self, params: &mut [f64]) {
        params[self.offset..self.end()].fill(0.0);
    }

    pub fn zero_last_layer(&self, params: &mut [f64]) {
        let span = *self.layers().last().unwrap();
        params[span.weights..span.bias + span.fan_out].fill(0.0);
    }

    pub fn last_bias_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        let span = *self.layers().last().unwrap();
        &mut params[span.bias..span.bias + span.fan_out]
    }
}

/// A stand-alone dense net that owns its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    shape: Mlp,
    params: Vec<f64>,
}

impl DenseNet {
    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Self {
        let shape = Mlp::new(sizes, activation, 0);
        let params = vec![0.0; shape.n_params()];
        DenseNet { shape, params }
    }

    pub fn seeded(sizes: Vec<usize>, activation: Activation, rng: &mut StreamRng) -> Self {
        let mut net = Self::zeros(sizes, activation);
        net.shape.init_glorot(&mut net.params, rng);
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.shape.sizes
    }

    pub fn activation(&self) -> Activation {
        self.shape.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn unflatten(sizes: Vec<usize>, activation: Activation, flat: Vec<f64>) -> Result<Self> {
        let shape = Mlp::new(sizes, activation, 0);
        if flat.len() != shape.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", shape.n_params(), flat.len())));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense net parameters".into()));
        }
        Ok(DenseNet { shape, params: flat })
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, GradTape)> {
        if input.len() != self.shape.input_dim() {
            return Err(Error::Shape(format!(
                "net expects input of length {}, got {}",
                self.shape.input_dim(),
                input.len()
            )));
        }
        let mut graph = Graph::new();
        let x = graph.input(input.to_vec());
        let y = self.shape.apply(&mut graph, &self.params, x);
        let out = graph.value(y).to_vec();
        Ok((out, GradTape { graph, input: x, output: y, n_params: self.params.len(), used: false }))
    }
}

/// Recorded forward pass of a [`DenseNet`]; supports exactly one backward.
pub struct GradTape {
    graph: Graph,
    input: NodeId,
    output: NodeId,
    n_params: usize,
    used: bool,
}

impl GradTape {
    /// Returns `(parameter gradients, input gradients)`.
    pub fn backward(&mut self, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.used {
            return Err(Error::Usage("gradient tape already consumed".into()));
        }
        if output_grad.len() != self.graph.size(self.output) {
            return Err(Error::Shape(format!(
                "output gradient length {} vs output length {}",
                output_grad.len(),
                self.graph.size(self.output)
            )));
        }
        self.used = true;
        let mut pg = vec![0.0; self.n_params];
        let grads = self.graph.backward(self.output, output_grad, &mut pg);
        let ig = grads.get(self.input).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; self.graph.size(self.input)]);
        Ok((pg, ig))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fd_check(net: &DenseNet, x: &[f64], seed: &[f64]) -> (f64, f64) {
        let (_, mut tape) = net.forward(x).unwrap();
        let (pg, ig) = tape.backward(seed).unwrap();
        let loss =
            |n: &DenseNet, x: &[f64]| -> f64 { n.forward(x).unwrap().0.iter().zip(seed).map(|(a, b)| a * b).sum() };
        let h = 1e-5;
        let mut num_p = vec![0.0; pg.len()];
        for i in 0..pg.len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let fp = loss(&p, x);
            p.params_mut()[i] -= 2.0 * h;
            num_p[i] = (fp - loss(&p, x)) / (2.0 * h);
        }
        let mut num_i = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let fp = loss(net, &xp);
            xp[i] -= 2.0 * h;
            num_i[i] = (fp - loss(net, &xp)) / (2.0 * h);
        }
        (rel_err(&pg, &num_p), rel_err(&ig, &num_i))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(vec![3, 5, 2], Activation::Tanh);
        let (y, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut flat = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            flat[i * 3 + i] = 1.0;
        }
        let net = DenseNet::unflatten(vec![3, 3], Activation::Tanh, flat).unwrap();
        let x = [0.25, -7.0, 3.5];
        assert_eq!(net.forward(&x).unwrap().0, x.to_vec());
    }

    #[test]
    fn seeded_forward_is_bitwise_deterministic() {
        let a = DenseNet::seeded(vec![4, 8, 3], Activation::Tanh, &mut stream(11, "det"));
        let b = DenseNet::seeded(vec![4, 8, 3], Activation::Tanh, &mut stream(11, "det"));
        let x = [0.1, 0.2, -0.3, 0.4];
        let ya = a.forward(&x).unwrap().0;
        let yb = b.forward(&x).unwrap().0;
        assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let net = DenseNet::zeros(vec![3, 2], Activation::Tanh);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = DenseNet::seeded(vec![3, 4, 2], Activation::Tanh, &mut stream(2, "z"));
        let (_, mut tape) = net.forward(&[0.5, 0.1, -0.2]).unwrap();
        let (pg, ig) = tape.backward(&[0.0, 0.0]).unwrap();
        assert!(pg.iter().chain(&ig).all(|&g| g == 0.0));
    }

    #[test]
    fn linear_scalar_chain_rule() {
        // y = w·x + 0
        let net = DenseNet::unflatten(vec![2, 1], Activation::Tanh, vec![3.0, -2.0, 0.0]).unwrap();
        let x = [0.7, 1.9];
        let (_, mut tape) = net.forward(&x).unwrap();
        let (pg, ig) = tape.backward(&[2.5]).unwrap();
        assert_eq!(pg, vec![0.7 * 2.5, 1.9 * 2.5, 2.5]);
        assert_eq!(ig, vec![3.0 * 2.5, -2.0 * 2.5]);
    }

    #[test]
    fn tape_reuse_is_a_usage_error() {
        let net = DenseNet::zeros(vec![2, 1], Activation::Tanh);
        let (_, mut tape) = net.forward(&[1.0, 1.0]).unwrap();
        tape.backward(&[1.0]).unwrap();
        assert!(matches!(tape.backward(&[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let mut rng = stream(5, "fd");
        for act in [Activation::Tanh, Activation::Relu] {
            for trial in 0..20 {
                let net = DenseNet::seeded(vec![4, 7, 6, 3], act, &mut rng);
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
                let seed: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (ep, ei) = fd_check(&net, &x, &seed);
                assert!(ep <= 1e-4 && ei <= 1e-4, "{act:?} trial {trial}: {ep} {ei}");
            }
        }
    }

    #[test]
    fn flatten_round_trips() {
        let net = DenseNet::seeded(vec![3, 4, 2], Activation::Relu, &mut stream(9, "rt"));
        let back = DenseNet::unflatten(net.sizes().to_vec(), net.activation(), net.flatten()).unwrap();
        assert_eq!(back, net);
        assert!(DenseNet::unflatten(vec![3, 4, 2], Activation::Relu, vec![0.0; 3]).is_err());
    }

    #[test]
    fn batched_rows_match_per_row_eval() {
        let net = DenseNet::seeded(vec![3, 5, 2], Activation::Tanh, &mut stream(4, "rows"));
        let xs = [0.1, 0.2, 0.3, -1.0, 0.5, 2.0];
        let mut g = Graph::new();
        let x = g.constant_matrix(xs.to_vec(), 2, 3);
        let shape = Mlp::new(vec![3, 5, 2], Activation::Tanh, 0);
        let y = shape.apply(&mut g, net.params(), x);
        let v = g.value(y);
        for r in 0..2 {
            let e = shape.eval(net.params(), &xs[r * 3..(r + 1) * 3]);
            assert!((v[r * 2] - e[0]).abs() < 1e-15 && (v[r * 2 + 1] - e[1]).abs() < 1e-15);
        }
    }
}
