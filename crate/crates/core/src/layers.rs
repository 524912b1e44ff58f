//! Layer bookkeeping shared by networks, kernels and graphs.
//!
//! With `n = (L + 2) d` atoms of the equipartition, layer `l` occupies atoms
//! `[l d, (l + 1) d)` for `l = 0..=L` and the bias layer is last. The input
//! layer is split into `d0` cells of `d / d0` atoms and the output layer into
//! `dL` cells of `d / dL` atoms.

use std::ops::Range;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerStructure {
    depth: usize,
    input_dim: usize,
    output_dim: usize,
    hidden_dim: usize,
}

/// Which layer an atom belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Layer(usize),
    Bias,
}

impl LayerStructure {
    pub fn new(depth: usize, input_dim: usize, output_dim: usize, hidden_dim: usize) -> Result<Self> {
        if depth < 2 {
            return Err(Error::InvalidNetwork(format!("depth must be at least 2, got {depth}")));
        }
        if input_dim == 0 || output_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidNetwork("dimensions must be positive".into()));
        }
        if !hidden_dim.is_multiple_of(input_dim) || !hidden_dim.is_multiple_of(output_dim) {
            return Err(Error::InvalidNetwork(format!(
                "hidden dimension {hidden_dim} must be divisible by input dimension {input_dim} and output dimension {output_dim}"
            )));
        }
        if hidden_dim.checked_mul(depth + 2).is_none() {
            return Err(Error::Capacity("layer count overflows".into()));
        }
        Ok(Self { depth, input_dim, output_dim, hidden_dim })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Width `d_l` of network layer `l`.
    pub fn width(&self, l: usize) -> usize {
        match l {
            0 => self.input_dim,
            l if l == self.depth => self.output_dim,
            _ => self.hidden_dim,
        }
    }

    /// `lcm(d0, dL)`.
    pub fn lcm(&self) -> usize {
        self.input_dim.lcm(&self.output_dim)
    }

    /// Number of atoms `(L + 2) d`.
    pub fn n(&self) -> usize {
        (self.depth + 2) * self.hidden_dim
    }

    pub fn layer(&self, l: usize) -> Range<usize> {
        l * self.hidden_dim..(l + 1) * self.hidden_dim
    }

    pub fn bias(&self) -> Range<usize> {
        (self.depth + 1) * self.hidden_dim..self.n()
    }

    pub fn input_cell(&self, j: usize) -> Range<usize> {
        let w = self.hidden_dim / self.input_dim;
        j * w..(j + 1) * w
    }

    pub fn output_cell(&self, i: usize) -> Range<usize> {
        let w = self.hidden_dim / self.output_dim;
        let base = self.depth * self.hidden_dim;
        base + i * w..base + (i + 1) * w
    }

    pub fn role(&self, atom: usize) -> Role {
        let l = atom / self.hidden_dim;
        if l > self.depth {
            Role::Bias
        } else {
            Role::Layer(l)
        }
    }

    /// Input cell of an atom of layer 0.
    pub fn input_cell_of(&self, atom: usize) -> usize {
        atom / (self.hidden_dim / self.input_dim)
    }

    /// Output cell of an atom of layer `L`.
    pub fn output_cell_of(&self, atom: usize) -> usize {
        (atom - self.depth * self.hidden_dim) / (self.hidden_dim / self.output_dim)
    }

    /// Same layer shape with a different hidden dimension.
    pub fn with_hidden_dim(&self, hidden_dim: usize) -> Result<Self> {
        Self::new(self.depth, self.input_dim, self.output_dim, hidden_dim)
    }

    /// Label of each atom in the layer partition: hidden layers, the bias
    /// layer, input cells and output cells. Its size is `L + d0 + dL`.
    pub fn layer_partition_labels(&self) -> Vec<usize> {
        let (l, d0) = (self.depth, self.input_dim);
        (0..self.n())
            .map(|a| match self.role(a) {
                Role::Layer(0) => self.input_cell_of(a),
                Role::Layer(k) if k == l => d0 + self.output_cell_of(a),
                Role::Layer(k) => d0 + self.output_dim + k - 1,
                Role::Bias => d0 + self.output_dim + l - 1,
            })
            .collect()
    }
}
