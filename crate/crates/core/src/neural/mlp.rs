//! Fully connected occupancy networks with an optional input skip.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{cast, Gradients, Real, Tape, Var};
use crate::error::{Error, Result};

/// Shape of one occupancy network. `depth` counts linear layers; the
/// network input is re-concatenated to the activations entering layer
/// `skip_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub skip_layer: Option<usize>,
}

impl MlpConfig {
    /// Compact profile: 4 layers of width 128, skip into layer 2.
    pub fn desk(latent: usize) -> Self {
        Self {
            input_dim: latent + 3,
            hidden_width: 128,
            depth: 4,
            skip_layer: Some(2),
        }
    }

    /// Full profile: 8 layers of width 512, skip into layer 4.
    pub fn full(latent: usize) -> Self {
        Self {
            input_dim: latent + 3,
            hidden_width: 512,
            depth: 8,
            skip_layer: Some(4),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.input_dim - 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidArgument(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.input_dim < 3 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument(format!(
                "bad layer sizes: input {} width {}",
                self.input_dim, self.hidden_width
            )));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.depth {
                return Err(Error::InvalidArgument(format!(
                    "skip layer {s} outside 1..{}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 {
            self.input_dim
        } else if self.skip_layer == Some(l) {
            self.hidden_width + self.input_dim
        } else {
            self.hidden_width
        };
        let fan_out = if l + 1 == self.depth { 1 } else { self.hidden_width };
        (fan_in, fan_out)
    }

    pub fn param_count(&self) -> usize {
        (0..self.depth)
            .map(|l| {
                let (i, o) = self.layer_shape(l);
                i * o + o
            })
            .sum()
    }
}

/// Weights (`fan_in × fan_out`) and bias rows of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let (weights, biases) = (0..config.depth)
            .map(|l| {
                let (i, o) = config.layer_shape(l);
                (Array2::zeros((i, o)), Array2::zeros((1, o)))
            })
            .unzip();
        Ok(Self {
            config,
            weights,
            biases,
        })
    }

    /// He-normal hidden layers, a narrower output layer, zero biases.
    pub fn init<R: Rng>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        for l in 0..config.depth {
            let (fan_in, _) = config.layer_shape(l);
            let gain = if l + 1 == config.depth { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            mlp.weights[l].mapv_inplace(|_| normal.sample(rng));
        }
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "network parameters",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    pub fn weights(&self, l: usize) -> &Array2<f64> {
        &self.weights[l]
    }

    pub fn bias(&self, l: usize) -> &Array2<f64> {
        &self.biases[l]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Batched evaluation without recording gradients: one logistic output
    /// per input row.
    pub fn forward_batch<T: Real>(&self, input: ArrayView2<T>) -> Array1<T> {
        let params: Vec<(Array2<T>, Array2<T>)> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (cast(w.view()), cast(b.view())))
            .collect();
        let mut h = input.to_owned();
        for (l, (w, b)) in params.iter().enumerate() {
            if self.config.skip_layer == Some(l) {
                h = concatenate(Axis(1), &[h.view(), input]).expect("row counts match");
            }
            h = h.dot(w) + b;
            if l + 1 < self.config.depth {
                h.mapv_inplace(|x| x.max(T::zero()));
            }
        }
        h.column(0).mapv(|x| T::one() / (T::one() + (-x).exp()))
    }

    /// Sign of every hidden pre-activation (`> 0`), row by row.
    pub fn relu_pattern(&self, input: ArrayView2<f64>) -> Vec<bool> {
        let mut out = Vec::new();
        let mut h = input.to_owned();
        for l in 0..self.config.depth - 1 {
            if self.config.skip_layer == Some(l) {
                h = concatenate(Axis(1), &[h.view(), input]).expect("row counts match");
            }
            h = h.dot(&self.weights[l]) + &self.biases[l];
            out.extend(h.iter().map(|&x| x > 0.0));
            h.mapv_inplace(|x| x.max(0.0));
        }
        out
    }

    /// Places the parameters on `tape`, as trainable leaves or constants.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: bool) -> BoundMlp {
        let mut leaf = |a: &Array2<f64>| {
            let v = cast(a.view());
            if trainable {
                tape.param(v)
            } else {
                tape.constant(v)
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        BoundMlp {
            config: self.config,
            weights,
            biases,
        }
    }
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    config: MlpConfig,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl BoundMlp {
    /// Records the forward pass; returns the `N×1` logistic output.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var) -> Var {
        let mut h = input;
        for l in 0..self.config.depth {
            if self.config.skip_layer == Some(l) {
                h = tape.concat(h, input);
            }
            let z = tape.matmul(h, self.weights[l]);
            let z = tape.add_row(z, self.biases[l]);
            h = if l + 1 < self.config.depth {
                tape.relu(z)
            } else {
                tape.sigmoid(z)
            };
        }
        h
    }

    /// Parameter gradients in [`Mlp::to_flat`] order; zeros where absent.
    pub fn flat_grad<T: Real>(&self, grads: &Gradients<T>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.param_count());
        for l in 0..self.config.depth {
            let (i, o) = self.config.layer_shape(l);
            for (v, len) in [(self.weights[l], i * o), (self.biases[l], o)] {
                match grads.get(v) {
                    Some(g) => out.extend(g.iter().map(|x| x.as_f64())),
                    None => out.extend(std::iter::repeat_n(0.0, len)),
                }
            }
        }
        out
    }
}
