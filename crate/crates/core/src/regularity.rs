//! Projections onto partitions and a constructive weak regularity procedure.
//!
//! The procedure starts from a partition `P`, looks for a cut `S x T` where
//! `K - K_P` has mass at least `eps`, refines `P` by `S` and `T` and repeats.
//! Each refinement raises `||K_P||_2^2` by at least `eps^2`, so for kernels
//! bounded by 1 it stops after at most `1 / eps^2` refinements.

use ndarray::Array2;
use serde::Serialize;

use crate::computational::ComputationalKernel;
use crate::cutnorm::{cut_norm, kernel_cut_norm_lower, CutMethod, EstimateKind, Reduced, DEFAULT_EXACT_CAP, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::kernel::StepKernel;
use crate::layers::Role;
use crate::partition::Partition;

/// Blockwise measure-weighted average of `kernel` over `partition`.
pub fn project(kernel: &StepKernel, partition: &Partition) -> Result<StepKernel> {
    let k = partition.len();
    let mu = kernel.partition().measures();
    let c = kernel.coeffs();
    let (mass, sums) = if let Some(map) = kernel.partition().coarsening_map(partition) {
        let mut sums = Array2::<f64>::zeros((k, k));
        let mut mass = vec![0.0; k];
        for (a, &p) in map.iter().enumerate() {
            mass[p] += mu[a];
            for (b, &q) in map.iter().enumerate() {
                sums[[p, q]] += c[[a, b]] * mu[a] * mu[b];
            }
        }
        (mass, sums)
    } else {
        let r = kernel.partition().common_refinement(partition)?;
        let mut overlap = Array2::<f64>::zeros((k, kernel.len()));
        for (p, (&a, &q)) in r.left.iter().zip(&r.right).enumerate() {
            overlap[[q, a]] += r.partition.measure(p);
        }
        let sums = overlap.dot(c).dot(&overlap.t());
        (overlap.rows().into_iter().map(|row| row.sum()).collect(), sums)
    };
    let coeffs = Array2::from_shape_fn((k, k), |(p, q)| sums[[p, q]] / (mass[p] * mass[q]));
    StepKernel::new(partition.clone(), coeffs)
}

/// How the procedure finds cuts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum CutOracle {
    /// Decides `||K - K_P|| < eps` soundly: exhaustive search within `cap`,
    /// otherwise a heuristic witness or a certified upper bound.
    Exact { cap: usize },
    /// Alternating maximization only; termination is not certified.
    Heuristic { restarts: usize, seed: u64 },
}

impl Default for CutOracle {
    fn default() -> Self {
        CutOracle::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// `||K - K_P||` is below `eps`: exact value or certified upper bound.
    Certified,
    /// The heuristic found no cut of mass `eps`.
    Heuristic,
    /// The iteration cap `ceil(4 / eps^2)` was reached.
    IterationCap,
    /// The next refinement was rejected by the caller's budget.
    Budget,
    /// No cut of mass `eps` was found and the upper bound did not certify.
    Undecided,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    /// Mass of the cut found on `K - K_P`.
    pub witness: f64,
    /// Best available estimate of `||K - K_P||` at this step.
    pub bound: f64,
    pub bound_kind: EstimateKind,
    pub parts: usize,
    /// `||K_P||_2^2`.
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct RegularityTrace {
    pub steps: Vec<TraceStep>,
    pub partition: Partition,
    pub projected: StepKernel,
    pub termination: Termination,
}

impl RegularityTrace {
    /// The estimate of `||K - K_P||` for the final partition.
    pub fn final_bound(&self) -> (f64, EstimateKind) {
        let last = self.steps.last().expect("trace has at least one step");
        (last.bound, last.bound_kind)
    }
}

pub fn iteration_cap(epsilon: f64) -> usize {
    (4.0 / (epsilon * epsilon)).ceil() as usize
}

/// Weak regularity from the trivial partition over `kernel`'s ground.
pub fn weak_regularity(kernel: &StepKernel, epsilon: f64, oracle: CutOracle) -> Result<RegularityTrace> {
    let n = kernel.partition().len();
    let start = kernel.partition().coarsen(&vec![0; n])?;
    weak_regularity_from(kernel, epsilon, oracle, start, |_| true)
}

/// Weak regularity from `start`, which must be coarser than the kernel's
/// partition. A refinement for which `accept` is false ends the run.
pub fn weak_regularity_from(
    kernel: &StepKernel,
    epsilon: f64,
    oracle: CutOracle,
    start: Partition,
    accept: impl Fn(&Partition) -> bool,
) -> Result<RegularityTrace> {
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::Precondition(format!("epsilon must lie in (0, 2], got {epsilon}")));
    }
    let cap = iteration_cap(epsilon);
    let mut partition = start;
    let mut steps = Vec::new();
    for iteration in 0..=cap {
        let map = kernel.partition().coarsening_map(&partition).ok_or_else(|| {
            Error::InvalidPartition("the working partition must coarsen the kernel's partition".into())
        })?;
        let projected = project(kernel, &partition)?;
        let diff = StepKernel::new(
            kernel.partition().clone(),
            Array2::from_shape_fn((kernel.len(), kernel.len()), |(a, b)| {
                kernel.coeffs()[[a, b]] - projected.coeffs()[[map[a], map[b]]]
            }),
        )?;
        let decision = decide(&diff, epsilon, oracle, iteration as u64)?;
        steps.push(TraceStep {
            iteration,
            witness: decision.witness.as_ref().map_or(0.0, |w| w.value),
            bound: decision.bound,
            bound_kind: decision.kind,
            parts: partition.len(),
            energy: projected.l2_norm_sq(),
        });
        let done = |termination| Ok(RegularityTrace { steps: steps.clone(), partition: partition.clone(), projected: projected.clone(), termination });
        let witness = match decision.outcome {
            Some(t) => return done(t),
            None => decision.witness.expect("a refining decision carries a witness"),
        };
        if iteration == cap {
            return done(Termination::IterationCap);
        }
        let mut rows = vec![false; kernel.partition().atom_count()];
        let mut cols = rows.clone();
        let labels = kernel.partition().labels();
        for (a, &part) in labels.iter().enumerate() {
            rows[a] = witness.rows.binary_search(&part).is_ok();
            cols[a] = witness.cols.binary_search(&part).is_ok();
        }
        let refined = partition.refine_by_atoms(&rows)?.partition.refine_by_atoms(&cols)?.partition;
        if !accept(&refined) {
            return done(Termination::Budget);
        }
        partition = refined;
    }
    unreachable!("the loop returns at the iteration cap")
}

struct Decision {
    witness: Option<crate::cutnorm::CutWitness>,
    bound: f64,
    kind: EstimateKind,
    outcome: Option<Termination>,
}

fn decide(diff: &StepKernel, epsilon: f64, oracle: CutOracle, iteration: u64) -> Result<Decision> {
    match oracle {
        CutOracle::Exact { cap } => {
            if Reduced::new(diff).search_dim() <= cap {
                let est = cut_norm(diff, CutMethod::Exact { cap })?;
                let stop = (est.value < epsilon).then_some(Termination::Certified);
                return Ok(Decision { bound: est.value, kind: EstimateKind::Exact, witness: est.witness, outcome: stop });
            }
            let w = kernel_cut_norm_lower(diff, DEFAULT_RESTARTS, iteration);
            if w.value >= epsilon {
                return Ok(Decision { bound: w.value, kind: EstimateKind::Lower, witness: Some(w), outcome: None });
            }
            let est = cut_norm(diff, CutMethod::Certified { cap })?;
            let outcome = if est.value < epsilon { Termination::Certified } else { Termination::Undecided };
            Ok(Decision { bound: est.value, kind: EstimateKind::Upper, witness: Some(w), outcome: Some(outcome) })
        }
        CutOracle::Heuristic { restarts, seed } => {
            let w = kernel_cut_norm_lower(diff, restarts, seed.wrapping_add(iteration));
            let stop = (w.value < epsilon).then_some(Termination::Heuristic);
            Ok(Decision { bound: w.value, kind: EstimateKind::Lower, witness: Some(w), outcome: stop })
        }
    }
}

/// Result of the layer-respecting procedure on a computational kernel.
#[derive(Clone, Debug)]
pub struct LayerRegularity {
    pub trace: RegularityTrace,
    /// Refinement of the regularity partition by the layer partition, with
    /// input cells, output cells and the bias layer kept whole.
    pub partition: Partition,
    pub projected: StepKernel,
    /// Estimate of `||K - K_P||` after the layer refinement.
    pub error: f64,
    pub error_kind: EstimateKind,
}

/// Keys of the layer-respecting refinement of a per-atom labelling.
pub(crate) fn layer_keys(kernel: &ComputationalKernel, labels: &[usize]) -> Vec<(u8, usize, usize)> {
    let layers = kernel.layers();
    (0..layers.n())
        .map(|a| match layers.role(a) {
            Role::Layer(0) => (0, 0, layers.input_cell_of(a)),
            Role::Layer(l) if l == layers.depth() => (2, 0, layers.output_cell_of(a)),
            Role::Layer(l) => (1, l, labels[a]),
            Role::Bias => (3, 0, 0),
        })
        .collect()
}

/// Weak regularity followed by refinement with the layer partition.
pub fn layer_respecting_regularity(kernel: &ComputationalKernel, epsilon: f64, oracle: CutOracle) -> Result<LayerRegularity> {
    let trace = weak_regularity(kernel.kernel(), epsilon, oracle)?;
    layer_refine(kernel, trace, oracle)
}

pub(crate) fn layer_refine(kernel: &ComputationalKernel, trace: RegularityTrace, oracle: CutOracle) -> Result<LayerRegularity> {
    let keys = layer_keys(kernel, trace.partition.labels());
    let (partition, _) = Partition::from_keys(kernel.kernel().partition().atoms().to_vec(), &keys)?;
    let projected = project(kernel.kernel(), &partition)?;
    let method = match oracle {
        CutOracle::Exact { cap } => CutMethod::Certified { cap },
        CutOracle::Heuristic { restarts, seed } => CutMethod::Heuristic { restarts, seed },
    };
    let est = cut_norm(&kernel.kernel().sub(&projected.lift(kernel.kernel().partition(), partition.labels()))?, method)?;
    Ok(LayerRegularity { trace, partition, projected, error: est.value, error_kind: est.kind })
}

/// Outcome of cutting parts into pieces of equal measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Equitized {
    /// Measure of every new part.
    pub unit: f64,
    /// Number of whole new parts inside each original part.
    pub full: Vec<usize>,
    /// Leftover measure of each original part, pooled into remainder parts.
    pub remainders: Vec<f64>,
    /// Number of remainder parts `h`.
    pub remainder_parts: usize,
}

impl Equitized {
    pub fn refinement_parts(&self) -> usize {
        self.full.iter().sum()
    }
}

/// Splits parts with the given measures into `m` parts of equal measure:
/// whole pieces inside each part first, leftovers pooled.
pub fn equitize(measures: &[f64], m: usize) -> Result<Equitized> {
    if m <= measures.len() {
        return Err(Error::Precondition(format!(
            "target count {m} must exceed the number of parts {}",
            measures.len()
        )));
    }
    if measures.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidPartition("part measures must be positive".into()));
    }
    let total: f64 = measures.iter().sum();
    let unit = total / m as f64;
    let tol = 1e-9 * unit;
    let mut full = Vec::with_capacity(measures.len());
    let mut remainders = Vec::with_capacity(measures.len());
    for &x in measures {
        let q = ((x + tol) / unit).floor() as usize;
        let r = x - q as f64 * unit;
        full.push(q);
        remainders.push(if r.abs() <= tol { 0.0 } else { r });
    }
    let remainder_parts = m - full.iter().sum::<usize>();
    Ok(Equitized { unit, full, remainders, remainder_parts })
}

/// The order that lays equal-measure parts out as consecutive intervals,
/// sorted by `keys`: slot `s` receives part `perm[s]`.
pub fn sort_to_intervals<K: Ord>(measures: &[f64], keys: &[K]) -> Result<Vec<usize>> {
    if measures.len() != keys.len() {
        return Err(Error::Dimension(format!("{} keys for {} parts", keys.len(), measures.len())));
    }
    if let Some(first) = measures.first() {
        if let Some(i) = measures.iter().position(|m| (m - first).abs() > 1e-12) {
            return Err(Error::Precondition(format!(
                "part {i} has measure {} but part 0 has {first}",
                measures[i]
            )));
        }
    }
    let mut perm: Vec<usize> = (0..keys.len()).collect();
    perm.sort_by(|a, b| keys[*a].cmp(&keys[*b]));
    Ok(perm)
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (s, &p) in perm.iter().enumerate() {
        inv[p] = s;
    }
    inv
}
