//! Dense feed-forward networks with manual backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    // Derivative expressed through the activation's output.
    fn slope(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected network. Parameters are stored flat, layer by layer,
/// each layer as its row-major weight matrix followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Layer outputs recorded during a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn from_output(values: Vec<f64>) -> Self {
        Self { values: vec![values] }
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Weights drawn from `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output size");
        assert_eq!(sizes.len() - 1, activations.len(), "one activation per layer");
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.activations == other.activations && self.params.len() == other.params.len()
    }

    /// `true` for weight entries, `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.params.len());
        for w in self.sizes.windows(2) {
            mask.extend(std::iter::repeat_n(true, w[0] * w[1]));
            mask.extend(std::iter::repeat_n(false, w[1]));
        }
        mask
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).values.pop().unwrap()
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let mut values = Vec::with_capacity(self.sizes.len());
        values.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &values[l];
            let act = self.activations[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    act.apply(biases[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                })
                .collect();
            values.push(out);
            offset += n_in * n_out + n_out;
        }
        Trace { values }
    }

    /// Accumulate `∂L/∂params` into `grad` given `∂L/∂output`, and return
    /// `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let mut upstream = grad_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.activations.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let out = &trace.values[l + 1];
            let input = &trace.values[l];
            let act = self.activations[l];
            let delta: Vec<f64> = (0..n_out).map(|o| upstream[o] * act.slope(out[o])).collect();
            let mut down = vec![0.0; n_in];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = offset + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += delta[o] * input[i];
                    down[i] += delta[o] * self.params[row + i];
                }
                grad[offset + n_in * n_out + o] += delta[o];
            }
            upstream = down;
        }
        upstream
    }
}
