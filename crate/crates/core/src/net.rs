//! Fixed-width networks with normalized pre-activations.
//!
//! Layer `l` computes `h_i = relu((1 / (d_{l-1} (L + 2))) sum_j (W_ij h_j + b_i))`
//! and the last layer omits the ReLU.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::LayerStructure;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    shape: LayerStructure,
    bound: f64,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl DenseNetwork {
    /// Validates shapes and the parameter bound. `weights[l]` has shape
    /// `d_{l+1} x d_l`.
    pub fn new(bound: f64, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidNetwork(format!("bound must be positive and finite, got {bound}")));
        }
        if weights.len() != biases.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let depth = weights.len();
        if depth < 2 {
            return Err(Error::InvalidNetwork(format!("depth must be at least 2, got {depth}")));
        }
        let shape = LayerStructure::new(
            depth,
            weights[0].ncols(),
            weights[depth - 1].nrows(),
            weights[0].nrows(),
        )?;
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let want = (shape.width(l + 1), shape.width(l));
            if w.dim() != want {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} weights have shape {:?}, expected {want:?}",
                    l + 1,
                    w.dim()
                )));
            }
            if b.len() != want.0 {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} bias has length {}, expected {}",
                    l + 1,
                    b.len(),
                    want.0
                )));
            }
            if let Some(((i, j), v)) = w.indexed_iter().find(|(_, v)| !(v.is_finite() && v.abs() <= bound)) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} weight ({i}, {j}) = {v} exceeds bound {bound}",
                    l + 1
                )));
            }
            if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !(v.is_finite() && v.abs() <= bound)) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} bias {i} = {v} exceeds bound {bound}",
                    l + 1
                )));
            }
        }
        Ok(Self { shape, bound, weights, biases })
    }

    /// Parameters drawn uniformly from `[-bound, bound]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, shape: LayerStructure, bound: f64) -> Result<Self> {
        let mut weights = Vec::with_capacity(shape.depth());
        let mut biases = Vec::with_capacity(shape.depth());
        for l in 1..=shape.depth() {
            let (rows, cols) = (shape.width(l), shape.width(l - 1));
            weights.push(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)));
            biases.push(Array1::from_shape_simple_fn(rows, || rng.random_range(-bound..=bound)));
        }
        Self::new(bound, weights, biases)
    }

    pub fn shape(&self) -> LayerStructure {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape.depth()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Weights of layer `l` in `1..=L`.
    pub fn weights(&self, l: usize) -> &Array2<f64> {
        &self.weights[l - 1]
    }

    /// Bias of layer `l` in `1..=L`.
    pub fn bias(&self, l: usize) -> &Array1<f64> {
        &self.biases[l - 1]
    }

    /// Number of stored weights and biases.
    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.shape.input_dim() {
            return Err(Error::Dimension(format!(
                "input of length {}, expected {}",
                x.len(),
                self.shape.input_dim()
            )));
        }
        let scale = (self.depth() + 2) as f64;
        let mut h = Array1::from(x.to_vec());
        for l in 1..=self.depth() {
            let fan_in = self.shape.width(l - 1) as f64;
            let pre = (self.weights(l).dot(&h) + self.bias(l) * fan_in) / (fan_in * scale);
            h = if l < self.depth() { pre.mapv(|v| v.max(0.0)) } else { pre };
        }
        Ok(h.to_vec())
    }

    /// Clips every parameter into `[-bound, bound]`.
    pub fn clamp_dense(&self, bound: f64) -> Result<Self> {
        let clip = |v: f64| v.clamp(-bound, bound);
        Self::new(
            bound,
            self.weights.iter().map(|w| w.mapv(clip)).collect(),
            self.biases.iter().map(|b| b.mapv(clip)).collect(),
        )
    }
}

/// The closed-form count `(L - 1) d^2 + (d0 + dL + L - 1) d + dL`.
///
/// A fixed-width network stores `(L - 2) d^2` hidden-to-hidden weights, so
/// this exceeds [`DenseNetwork::num_parameters`] by exactly `d^2`; it is an
/// upper bound on the true count.
pub fn param_count(shape: LayerStructure) -> u128 {
    let (l, d0, dl, d) = (
        shape.depth() as u128,
        shape.input_dim() as u128,
        shape.output_dim() as u128,
        shape.hidden_dim() as u128,
    );
    (l - 1) * d * d + (d0 + dl + l - 1) * d + dl
}
