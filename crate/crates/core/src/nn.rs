//! Small fully connected networks recorded on a [`Tape`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Layer sizes `[in, h1, ..., out]`; hidden layers use `activation`, the
/// output layer is linear. Parameters are laid out layer by layer as
/// `W (row-major, out × in)` then `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { sizes, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Scaled-normal weights (std `1/√fan_in`), zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let sd = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..fan_in * fan_out).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        out
    }

    /// Records the forward pass. `params` holds this network's weights
    /// starting at `offset`.
    pub fn record(&self, tape: &mut Tape, params: Var, offset: usize, input: Var) -> Var {
        let mut h = input;
        let mut off = offset;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wv = tape.slice(params, off, fan_in * fan_out);
            off += fan_in * fan_out;
            let bv = tape.slice(params, off, fan_out);
            off += fan_out;
            h = tape.affine(wv, h, bv, fan_out, fan_in);
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }

    /// Plain forward evaluation.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = tape.constant(params.to_vec());
        let x = tape.constant(input.to_vec());
        let out = self.record(&mut tape, p, 0, x);
        tape.value(out).to_vec()
    }
}
