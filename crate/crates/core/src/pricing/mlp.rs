//! Fully connected regression network with rectifier hidden layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.biases[o]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::config("training.layers", "need >= 2 non-zero sizes ending in 1"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let mut a = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut a, &mut next);
        }
        Ok(a[0])
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Mean absolute error over the batch and its gradient in [`Self::params`] order.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, Vec<f64>)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Dimension {
                expected: ys.len(),
                got: xs.len(),
            });
        }
        let n = xs.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
            .collect();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (x, &y) in xs.iter().zip(ys) {
            if x.len() != self.input_width() {
                return Err(Error::Dimension {
                    expected: self.input_width(),
                    got: x.len(),
                });
            }
            // Activations per layer, input first.
            let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
            for (l, layer) in self.layers.iter().enumerate() {
                let mut z = Vec::new();
                layer.apply(acts.last().unwrap(), &mut z);
                if l < last {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }
            let residual = acts[last + 1][0] - y;
            loss += residual.abs();
            let sign = if residual > 0.0 {
                1.0
            } else if residual < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mut delta = vec![sign / n];
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let (gw, gb) = &mut grads[l];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                        *p += d * w;
                    }
                }
                // Rectifier derivative of the hidden layer that produced `input`.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok((loss / n, flat))
    }

    pub fn mae(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            sum += (self.forward(x)? - y).abs();
        }
        Ok(sum / ys.len().max(1) as f64)
    }
}

/// Adaptive-moment optimiser state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
