//! A one-hidden-layer tanh regressor, trained by the same loop as the linear
//! model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Regressor, TrainingSet};

pub const MLP_HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl Mlp {
    /// Small random weights from `seed`, so every unit starts near its linear range.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |scale: f64| -> Vec<f64> {
            (0..MLP_HIDDEN)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        };
        let input_weights = draw(0.5);
        let hidden_biases = draw(0.5);
        let output_weights = draw(0.5);
        Self {
            input_weights,
            hidden_biases,
            output_weights,
            output_bias: 0.0,
        }
    }

    fn hidden(&self, x: f64, out: &mut [f64; MLP_HIDDEN]) {
        for (j, h) in out.iter_mut().enumerate() {
            *h = (self.input_weights[j] * x + self.hidden_biases[j]).tanh();
        }
    }
}

impl Regressor for Mlp {
    fn predict(&self, x: f64) -> f64 {
        let mut h = [0.0; MLP_HIDDEN];
        self.hidden(x, &mut h);
        self.output_bias + h.iter().zip(&self.output_weights).map(|(h, v)| h * v).sum::<f64>()
    }

    /// Gradient layout: input weights, hidden biases, output weights, output bias.
    fn loss_and_gradient(&self, data: &TrainingSet) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; 3 * MLP_HIDDEN + 1];
        let mut loss = 0.0;
        let mut h = [0.0; MLP_HIDDEN];
        for (&x, &t) in data.inputs.iter().zip(&data.targets) {
            self.hidden(x, &mut h);
            let p = self.output_bias + h.iter().zip(&self.output_weights).map(|(h, v)| h * v).sum::<f64>();
            let e = p - t;
            loss += e * e;
            for j in 0..MLP_HIDDEN {
                let back = e * self.output_weights[j] * (1.0 - h[j] * h[j]);
                grad[j] += back * x;
                grad[MLP_HIDDEN + j] += back;
                grad[2 * MLP_HIDDEN + j] += e * h[j];
            }
            grad[3 * MLP_HIDDEN] += e;
        }
        let n = data.inputs.len() as f64;
        grad.iter_mut().for_each(|g| *g *= 2.0 / n);
        (loss / n, grad)
    }

    fn descend(&mut self, gradient: &[f64], lr: f64) {
        for j in 0..MLP_HIDDEN {
            self.input_weights[j] -= lr * gradient[j];
            self.hidden_biases[j] -= lr * gradient[MLP_HIDDEN + j];
            self.output_weights[j] -= lr * gradient[2 * MLP_HIDDEN + j];
        }
        self.output_bias -= lr * gradient[3 * MLP_HIDDEN];
    }
}
