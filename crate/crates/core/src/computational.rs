//! Computational kernels and graphs induced by dense networks.
//!
//! Both are stored through their weight matrix `A` over the `n` atoms of the
//! equipartition; the kernel is `A / B`. Keeping `A` makes extraction exact:
//! `w / B * B` is not always `w` in floating point.

use std::fmt;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::kernel::{StepKernel, StepSignal};
use crate::layers::{LayerStructure, Role};
use crate::net::DenseNetwork;
use crate::partition::Partition;

/// Absolute tolerance for the constancy and bias-block checks.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// The conditions a computational kernel must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// Values lie in `[-1, 1]`.
    Range,
    /// The partition is the equipartition of `(L + 2) d` atoms with `lcm(d0, dL) | d`.
    Partition,
    /// Constant across input-cell columns, output-cell rows and bias columns.
    Constancy,
    /// Edges only go from layer `l` to layer `l + 1` or from the bias layer.
    ZeroPattern,
    /// The bias block equals `(L + 2) / B`.
    BiasBlock,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::Range => "range",
            Condition::Partition => "condition 1 (partition)",
            Condition::Constancy => "condition 2 (constancy)",
            Condition::ZeroPattern => "condition 3 (zero pattern)",
            Condition::BiasBlock => "condition 4 (bias block)",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    pub row: usize,
    pub col: usize,
    pub detail: String,
}

/// First violation of each failed condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed(&self) -> Vec<Condition> {
        self.violations.iter().map(|v| v.condition).collect()
    }

    fn record(&mut self, condition: Condition, row: usize, col: usize, detail: String) {
        if !self.violations.iter().any(|v| v.condition == condition) {
            self.violations.push(Violation { condition, row, col, detail });
        }
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{} fails at block ({}, {}): {}", v.condition, v.row, v.col, v.detail))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks the computational-kernel conditions on a step kernel.
pub fn validate_computational(kernel: &StepKernel, layers: &LayerStructure, bound: f64) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let n = layers.n();
    if !kernel.partition().is_equipartition(n) || !layers.hidden_dim().is_multiple_of(layers.lcm()) {
        diag.record(
            Condition::Partition,
            0,
            0,
            format!("expected the equipartition into {n} parts, found {} parts", kernel.len()),
        );
        return diag;
    }
    let c = kernel.coeffs();
    if let Some(((i, j), v)) = c.indexed_iter().find(|(_, v)| v.abs() > 1.0 + STRUCTURE_TOL) {
        diag.record(Condition::Range, i, j, format!("value {v} outside [-1, 1]"));
    }
    check_constancy(c, layers, &mut diag);
    check_zero_pattern(c, layers, &mut diag);
    let target = (layers.depth() + 2) as f64 / bound;
    'bias: for i in layers.bias() {
        for j in layers.bias() {
            if (c[[i, j]] - target).abs() > STRUCTURE_TOL {
                diag.record(Condition::BiasBlock, i, j, format!("value {} differs from {target}", c[[i, j]]));
                break 'bias;
            }
        }
    }
    diag
}

fn check_constancy(c: &Array2<f64>, layers: &LayerStructure, diag: &mut Diagnostics) {
    let n = layers.n();
    let differs = |a: f64, b: f64| (a - b).abs() > STRUCTURE_TOL;
    for j in 0..layers.input_dim() {
        let cell = layers.input_cell(j);
        for y in cell.clone().skip(1) {
            if let Some(x) = (0..n).find(|&x| differs(c[[x, y]], c[[x, cell.start]])) {
                diag.record(Condition::Constancy, x, y, format!("column differs within input cell {j}"));
                return;
            }
        }
    }
    for i in 0..layers.output_dim() {
        let cell = layers.output_cell(i);
        for x in cell.clone().skip(1) {
            if let Some(y) = (0..n).find(|&y| differs(c[[x, y]], c[[cell.start, y]])) {
                diag.record(Condition::Constancy, x, y, format!("row differs within output cell {i}"));
                return;
            }
        }
    }
    let bias = layers.bias();
    for y in bias.clone().skip(1) {
        if let Some(x) = (0..n).find(|&x| differs(c[[x, y]], c[[x, bias.start]])) {
            diag.record(Condition::Constancy, x, y, "bias columns differ".into());
            return;
        }
    }
}

/// Whether the block at (row atom, column atom) may be nonzero.
pub fn edge_allowed(layers: &LayerStructure, x: usize, y: usize) -> bool {
    match (layers.role(x), layers.role(y)) {
        (Role::Bias, col) => col == Role::Bias,
        (Role::Layer(0), _) => false,
        (Role::Layer(_), Role::Bias) => true,
        (Role::Layer(lx), Role::Layer(ly)) => lx == ly + 1,
    }
}

fn check_zero_pattern(c: &Array2<f64>, layers: &LayerStructure, diag: &mut Diagnostics) {
    for ((x, y), v) in c.indexed_iter() {
        if *v != 0.0 && !edge_allowed(layers, x, y) {
            diag.record(Condition::ZeroPattern, x, y, format!("nonzero value {v} where no edge exists"));
            return;
        }
    }
}

/// A step kernel satisfying the computational conditions, with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputationalKernel {
    layers: LayerStructure,
    bound: f64,
    weights: Array2<f64>,
    kernel: StepKernel,
}

/// The weighted graph on `n` vertices with adjacency `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputationalGraph {
    layers: LayerStructure,
    adjacency: Array2<f64>,
}

fn scaled(weights: &Array2<f64>, bound: f64, layers: &LayerStructure) -> Result<StepKernel> {
    StepKernel::new(Partition::equipartition(layers.n())?, weights.mapv(|w| w / bound))
}

/// The weight `w` with `w / bound == c`, closest to `c * bound`.
fn recover_weight(c: f64, bound: f64) -> f64 {
    let guess = c * bound;
    if guess / bound == c {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        if up / bound == c {
            return up;
        }
        if down / bound == c {
            return down;
        }
    }
    guess
}

impl ComputationalKernel {
    /// Builds the kernel `A / B` and checks the computational conditions.
    pub fn from_weights(layers: LayerStructure, bound: f64, weights: Array2<f64>) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::Precondition(format!("bound must be positive, got {bound}")));
        }
        let kernel = scaled(&weights, bound, &layers)?;
        Self::checked(layers, bound, weights, kernel)
    }

    /// Wraps a step kernel, recovering weights so that `A / B` reproduces
    /// every coefficient exactly.
    pub fn from_step_kernel(kernel: StepKernel, layers: LayerStructure, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::Precondition(format!("bound must be positive, got {bound}")));
        }
        let weights = kernel.coeffs().mapv(|c| recover_weight(c, bound));
        Self::checked(layers, bound, weights, kernel)
    }

    fn checked(layers: LayerStructure, bound: f64, weights: Array2<f64>, kernel: StepKernel) -> Result<Self> {
        let diag = validate_computational(&kernel, &layers, bound);
        if !diag.is_valid() {
            return Err(Error::NotComputational(diag));
        }
        Ok(Self { layers, bound, weights, kernel })
    }

    pub fn layers(&self) -> &LayerStructure {
        &self.layers
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn kernel(&self) -> &StepKernel {
        &self.kernel
    }

    /// Hidden atoms of each layer `1..L` reordered: atom `k` of layer `l`
    /// in the result is atom `perms[l - 1][k]` of `self`.
    pub fn permute_hidden(&self, perms: &[Vec<usize>]) -> Result<Self> {
        let map = hidden_permutation(&self.layers, perms)?;
        let n = self.layers.n();
        let weights = Array2::from_shape_fn((n, n), |(i, j)| self.weights[[map[i], map[j]]]);
        let kernel = StepKernel::new(
            self.kernel.partition().clone(),
            Array2::from_shape_fn((n, n), |(i, j)| self.kernel.coeffs()[[map[i], map[j]]]),
        )?;
        Ok(Self { layers: self.layers, bound: self.bound, weights, kernel })
    }
}

/// Atom map for per-layer permutations of the hidden layers.
pub fn hidden_permutation(layers: &LayerStructure, perms: &[Vec<usize>]) -> Result<Vec<usize>> {
    let depth = layers.depth();
    if perms.len() != depth - 1 {
        return Err(Error::Dimension(format!("{} permutations for {} hidden layers", perms.len(), depth - 1)));
    }
    let mut map: Vec<usize> = (0..layers.n()).collect();
    for (k, perm) in perms.iter().enumerate() {
        let range = layers.layer(k + 1);
        let mut seen = vec![false; range.len()];
        if perm.len() != range.len() || perm.iter().any(|&p| p >= range.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension(format!("layer {} permutation is not a permutation of 0..{}", k + 1, range.len())));
        }
        for (slot, &p) in perm.iter().enumerate() {
            map[range.start + slot] = range.start + p;
        }
    }
    Ok(map)
}

impl ComputationalGraph {
    pub fn new(layers: LayerStructure, adjacency: Array2<f64>) -> Result<Self> {
        let n = layers.n();
        if adjacency.dim() != (n, n) {
            return Err(Error::Dimension(format!("adjacency of shape {:?}, expected ({n}, {n})", adjacency.dim())));
        }
        Ok(Self { layers, adjacency })
    }

    pub fn layers(&self) -> &LayerStructure {
        &self.layers
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }
}

fn check_bound(net: &DenseNetwork) -> Result<()> {
    let need = (net.depth() + 2) as f64;
    if net.bound() < need {
        return Err(Error::Precondition(format!(
            "bound {} is below L + 2 = {need}, so the bias block would exceed 1",
            net.bound()
        )));
    }
    Ok(())
}

/// The kernel induced by a network. Requires `B >= L + 2`.
pub fn induce_kernel(net: &DenseNetwork) -> Result<ComputationalKernel> {
    check_bound(net)?;
    let layers = net.shape();
    let (depth, n) = (layers.depth(), layers.n());
    let mut a = Array2::<f64>::zeros((n, n));
    let w1 = net.weights(1);
    for (i, x) in layers.layer(1).enumerate() {
        for y in layers.layer(0) {
            a[[x, y]] = w1[[i, layers.input_cell_of(y)]];
        }
    }
    for l in 2..depth {
        let w = net.weights(l);
        for (i, x) in layers.layer(l).enumerate() {
            for (j, y) in layers.layer(l - 1).enumerate() {
                a[[x, y]] = w[[i, j]];
            }
        }
    }
    let wl = net.weights(depth);
    for x in layers.layer(depth) {
        let i = layers.output_cell_of(x);
        for (j, y) in layers.layer(depth - 1).enumerate() {
            a[[x, y]] = wl[[i, j]];
        }
    }
    for l in 1..=depth {
        let b = net.bias(l);
        for (k, x) in layers.layer(l).enumerate() {
            let i = if l == depth { layers.output_cell_of(x) } else { k };
            for y in layers.bias() {
                a[[x, y]] = b[i];
            }
        }
    }
    for x in layers.bias() {
        for y in layers.bias() {
            a[[x, y]] = (depth + 2) as f64;
        }
    }
    let kernel = scaled(&a, net.bound(), &layers)?;
    Ok(ComputationalKernel { layers, bound: net.bound(), weights: a, kernel })
}

/// The graph induced by a network: one vertex per atom, edge weights are the
/// raw parameters and the bias clique has weight `L + 2`.
pub fn induce_graph(net: &DenseNetwork) -> ComputationalGraph {
    let layers = net.shape();
    let (depth, n) = (layers.depth(), layers.n());
    let mut a = Array2::<f64>::zeros((n, n));
    let bias = layers.bias();
    for v in 0..n {
        match layers.role(v) {
            Role::Bias => {
                for u in bias.clone() {
                    a[[v, u]] = (depth + 2) as f64;
                }
            }
            Role::Layer(0) => {}
            Role::Layer(l) => {
                let row = if l == depth { layers.output_cell_of(v) } else { v - layers.layer(l).start };
                let w = net.weights(l);
                for u in layers.layer(l - 1) {
                    let col = if l == 1 { layers.input_cell_of(u) } else { u - layers.layer(l - 1).start };
                    a[[v, u]] = w[[row, col]];
                }
                for u in bias.clone() {
                    a[[v, u]] = net.bias(l)[row];
                }
            }
        }
    }
    ComputationalGraph { layers, adjacency: a }
}

/// The kernel `A / B` of a graph on the equipartition.
pub fn graph_to_kernel(graph: &ComputationalGraph, bound: f64) -> Result<StepKernel> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::Precondition(format!("bound must be positive, got {bound}")));
    }
    if let Some(((i, j), v)) = graph.adjacency.indexed_iter().find(|(_, v)| v.abs() > bound) {
        return Err(Error::Precondition(format!("edge ({i}, {j}) has weight {v} above bound {bound}")));
    }
    scaled(&graph.adjacency, bound, &graph.layers)
}

/// Reads network parameters back from a computational kernel.
pub fn extract_network(kernel: &ComputationalKernel) -> Result<DenseNetwork> {
    let layers = kernel.layers;
    let a = &kernel.weights;
    let depth = layers.depth();
    let bias_col = layers.bias().start;
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for l in 1..=depth {
        let rows: Vec<usize> = if l == depth {
            (0..layers.output_dim()).map(|i| layers.output_cell(i).start).collect()
        } else {
            layers.layer(l).collect()
        };
        let cols: Vec<usize> = if l == 1 {
            (0..layers.input_dim()).map(|j| layers.input_cell(j).start).collect()
        } else {
            layers.layer(l - 1).collect()
        };
        weights.push(Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| a[[rows[i], cols[j]]]));
        biases.push(rows.iter().map(|&x| a[[x, bias_col]]).collect::<Array1<f64>>());
    }
    DenseNetwork::new(kernel.bound, weights, biases)
}

/// The signal induced by an input: `x_j` on input cell `j`, 1 on the bias
/// layer and 0 elsewhere.
pub fn input_signal(layers: &LayerStructure, x: &[f64]) -> Result<StepSignal> {
    if x.len() != layers.input_dim() {
        return Err(Error::Dimension(format!("input of length {}, expected {}", x.len(), layers.input_dim())));
    }
    let values = (0..layers.n())
        .map(|a| match layers.role(a) {
            Role::Layer(0) => x[layers.input_cell_of(a)],
            Role::Bias => 1.0,
            Role::Layer(_) => 0.0,
        })
        .collect();
    StepSignal::new(Partition::equipartition(layers.n())?, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, shape: (usize, usize, usize, usize), bound: f64) -> DenseNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = LayerStructure::new(shape.0, shape.1, shape.2, shape.3).unwrap();
        DenseNetwork::random(&mut rng, s, bound).unwrap()
    }

    #[test]
    fn zero_network_induces_only_the_bias_block() {
        let s = LayerStructure::new(2, 1, 1, 2).unwrap();
        let net = DenseNetwork::new(
            4.0,
            vec![Array2::zeros((2, 1)), Array2::zeros((1, 2))],
            vec![Array1::zeros(2), Array1::zeros(1)],
        )
        .unwrap();
        let k = induce_kernel(&net).unwrap();
        let c = k.kernel().coeffs();
        for x in 0..s.n() {
            for y in 0..s.n() {
                let want = if s.role(x) == Role::Bias && s.role(y) == Role::Bias { 1.0 } else { 0.0 };
                assert_eq!(c[[x, y]], want);
            }
        }
    }

    #[test]
    fn first_layer_block_holds_scaled_weight() {
        let net = DenseNetwork::new(
            4.0,
            vec![array![[1.0, -2.0], [3.0, 0.5]], array![[1.0, 1.0]]],
            vec![array![0.25, 0.0], array![-1.0]],
        )
        .unwrap();
        let k = induce_kernel(&net).unwrap();
        let s = net.shape();
        let c = k.kernel().coeffs();
        let x = s.layer(1).start + 1;
        assert_eq!(c[[x, s.input_cell(0).start]], 0.75);
        assert_eq!(c[[x, s.input_cell(1).start]], 0.125);
        assert_eq!(c[[s.layer(1).start, s.bias().start]], 0.0625);
        assert_eq!(c[[s.layer(2).start, s.bias().start]], -0.25);
    }

    #[test]
    fn low_bound_is_rejected() {
        let net = random_net(1, (2, 1, 1, 2), 3.0);
        assert!(matches!(induce_kernel(&net), Err(Error::Precondition(_))));
    }

    #[test]
    fn induced_kernels_validate_and_round_trip() {
        for seed in 0..20 {
            let depth = 2 + seed as usize % 3;
            let net = random_net(seed, (depth, 2, 1, 4), (depth + 2) as f64 + seed as f64 * 0.37);
            let k = induce_kernel(&net).unwrap();
            let diag = validate_computational(k.kernel(), k.layers(), k.bound());
            assert!(diag.is_valid(), "{diag}");
            assert_eq!(extract_network(&k).unwrap(), net);
            let again = ComputationalKernel::from_step_kernel(k.kernel().clone(), *k.layers(), k.bound()).unwrap();
            assert_eq!(again.kernel(), k.kernel());
            assert_eq!(induce_kernel(&extract_network(&again).unwrap()).unwrap().kernel(), k.kernel());
        }
    }

    #[test]
    fn bias_block_mismatch_fails_condition_four_only() {
        let net = random_net(5, (2, 1, 1, 2), 5.0);
        let k = induce_kernel(&net).unwrap();
        let s = *k.layers();
        let mut c = k.kernel().coeffs().clone();
        for x in s.bias() {
            for y in s.bias() {
                c[[x, y]] = 1.0;
            }
        }
        let bad = StepKernel::new(k.kernel().partition().clone(), c).unwrap();
        let diag = validate_computational(&bad, &s, 5.0);
        assert_eq!(diag.failed(), vec![Condition::BiasBlock]);
    }

    #[test]
    fn wrong_part_count_fails_condition_one() {
        let s = LayerStructure::new(2, 1, 1, 2).unwrap();
        let k = StepKernel::zeros(Partition::equipartition(7).unwrap());
        assert_eq!(validate_computational(&k, &s, 4.0).failed(), vec![Condition::Partition]);
    }

    #[test]
    fn graph_and_kernel_agree() {
        let net = random_net(9, (3, 2, 2, 4), 6.0);
        let g = induce_graph(&net);
        assert_eq!(&graph_to_kernel(&g, 6.0).unwrap(), induce_kernel(&net).unwrap().kernel());
        assert!(graph_to_kernel(&g, 4.0).is_err());
    }

    #[test]
    fn swapping_hidden_atoms_is_invertible() {
        let net = random_net(2, (3, 1, 1, 3), 5.0);
        let k = induce_kernel(&net).unwrap();
        let p = vec![vec![2, 0, 1], vec![1, 0, 2]];
        let inv = vec![vec![1, 2, 0], vec![1, 0, 2]];
        let back = k.permute_hidden(&p).unwrap().permute_hidden(&inv).unwrap();
        assert_eq!(back, k);
        assert!(k.permute_hidden(&[vec![0, 0, 1], vec![0, 1, 2]]).is_err());
    }
}
