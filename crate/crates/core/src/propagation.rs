//! Message passing on kernels and graphs, and the equivalence with the
//! network forward pass.

use ndarray::Array1;
use serde::Serialize;

use crate::computational::{induce_graph, induce_kernel, input_signal, ComputationalGraph};
use crate::error::{Error, Result};
use crate::kernel::{StepKernel, StepSignal};
use crate::layers::{LayerStructure, Role};
use crate::net::DenseNetwork;
use crate::partition::Partition;

/// Tolerance for a readout value to count as constant on an output cell.
pub const READOUT_TOL: f64 = 1e-10;

/// All layer signals of the kernel message passing network, input first.
///
/// Each round computes `B relu(int K(., y) f(y) dy)`; the last round skips
/// the ReLU.
pub fn mpnn_trace(kernel: &StepKernel, signal: &StepSignal, bound: f64, depth: usize) -> Result<Vec<StepSignal>> {
    let (kernel, signal) = if kernel.partition() == signal.partition() {
        (kernel.clone(), signal.clone())
    } else {
        let r = kernel.partition().common_refinement(signal.partition())?;
        (kernel.lift(&r.partition, &r.left), signal.lift(&r.partition, &r.right))
    };
    let mu = Array1::from(kernel.partition().measures().to_vec());
    let mut out = Vec::with_capacity(depth + 1);
    let mut f = signal.values().clone();
    out.push(signal.clone());
    for round in 1..=depth {
        let agg = kernel.coeffs().dot(&(&f * &mu));
        f = if round < depth { agg.mapv(|v| bound * v.max(0.0)) } else { agg * bound };
        out.push(StepSignal::new(kernel.partition().clone(), f.clone())?);
    }
    Ok(out)
}

/// Output signal of the kernel message passing network after `depth` rounds.
pub fn mpnn_forward(kernel: &StepKernel, signal: &StepSignal, bound: f64, depth: usize) -> Result<StepSignal> {
    Ok(mpnn_trace(kernel, signal, bound, depth)?.pop().expect("trace holds the input"))
}

/// Value of an output signal on each output cell.
pub fn readout(signal: &StepSignal, layers: &LayerStructure) -> Result<Vec<f64>> {
    let n = layers.n();
    let grid = Partition::equipartition(n)?;
    let on_grid = if signal.partition() == &grid {
        signal.values().to_vec()
    } else {
        let r = grid.common_refinement(signal.partition())?;
        let mut vals = vec![f64::NAN; n];
        for (p, (&g, &s)) in r.left.iter().zip(&r.right).enumerate() {
            let v = signal.values()[s];
            if vals[g].is_nan() {
                vals[g] = v;
            } else if (vals[g] - v).abs() > READOUT_TOL {
                return Err(Error::Precondition(format!("signal is not constant on atom {g} (part {p})")));
            }
        }
        vals
    };
    cell_values(&on_grid, layers)
}

fn cell_values(values: &[f64], layers: &LayerStructure) -> Result<Vec<f64>> {
    (0..layers.output_dim())
        .map(|i| {
            let cell = layers.output_cell(i);
            let v = values[cell.start];
            match cell.clone().find(|&a| (values[a] - v).abs() > READOUT_TOL) {
                Some(a) => Err(Error::Precondition(format!(
                    "output cell {i} is not constant: {} vs {v} at atom {a}",
                    values[a]
                ))),
                None => Ok(v),
            }
        })
        .collect()
}

/// The sum-readout message passing network on a graph: each round computes
/// `relu((1 / n) sum_j A_ij f(j))`, the last round without the ReLU.
pub fn sr_mpnn_forward(graph: &ComputationalGraph, features: &[f64], depth: usize) -> Result<Vec<f64>> {
    let n = graph.layers().n();
    if features.len() != n {
        return Err(Error::Dimension(format!("{} features for {n} vertices", features.len())));
    }
    let a = graph.adjacency();
    let mut f = features.to_vec();
    for round in 1..=depth {
        let mut next = vec![0.0; n];
        for (i, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, fj) in f.iter().enumerate() {
                acc += a[[i, j]] * fj;
            }
            acc /= n as f64;
            *slot = if round < depth { acc.max(0.0) } else { acc };
        }
        f = next;
    }
    Ok(f)
}

/// Vertex features of an input: `x_j` on input cell `j`, 1 on bias vertices.
pub fn graph_features(layers: &LayerStructure, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layers.input_dim() {
        return Err(Error::Dimension(format!("input of length {}, expected {}", x.len(), layers.input_dim())));
    }
    Ok((0..layers.n())
        .map(|v| match layers.role(v) {
            Role::Layer(0) => x[layers.input_cell_of(v)],
            Role::Bias => 1.0,
            Role::Layer(_) => 0.0,
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub network: Vec<f64>,
    pub kernel: Vec<f64>,
    pub graph: Vec<f64>,
    /// Largest difference between any two of the three outputs.
    pub max_discrepancy: f64,
    /// Largest deviation of a bias value from 1 over all kernel rounds.
    pub bias_deviation: f64,
}

impl EquivalenceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol && self.bias_deviation <= tol
    }
}

/// Runs the network, the kernel network and the graph network on `x`.
pub fn check_equivalence(net: &DenseNetwork, x: &[f64]) -> Result<EquivalenceReport> {
    let layers = net.shape();
    let network = net.forward(x)?;
    let ck = induce_kernel(net)?;
    let trace = mpnn_trace(ck.kernel(), &input_signal(&layers, x)?, net.bound(), net.depth())?;
    let bias_deviation = trace
        .iter()
        .flat_map(|s| layers.bias().map(move |a| (s.values()[a] - 1.0).abs()))
        .fold(0.0, f64::max);
    let kernel = readout(trace.last().expect("trace holds the input"), &layers)?;
    let graph_out = sr_mpnn_forward(&induce_graph(net), &graph_features(&layers, x)?, net.depth())?;
    let graph = cell_values(&graph_out, &layers)?;
    let max_discrepancy = network
        .iter()
        .zip(&kernel)
        .zip(&graph)
        .map(|((a, b), c)| (a - b).abs().max((a - c).abs()).max((b - c).abs()))
        .fold(0.0, f64::max);
    Ok(EquivalenceReport { network, kernel, graph, max_discrepancy, bias_deviation })
}
