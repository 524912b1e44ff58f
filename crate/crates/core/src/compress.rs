//! Compression of a dense network to a smaller hidden width through its
//! kernel: regularize, refine by layers, cut every hidden layer into equal
//! pieces, then read the network back off the averaged kernel.
//!
//! Lengths are counted in ticks: an original atom is `d'` ticks and a new
//! atom is `d` ticks, so both layouts tile a layer of `d d'` ticks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::computational::{extract_network, induce_kernel, validate_computational, ComputationalKernel};
use crate::cutnorm::{cut_norm, kernel_cut_norm_lower, CutMethod, EstimateKind, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::kernel::StepKernel;
use crate::layers::LayerStructure;
use crate::net::DenseNetwork;
use crate::partition::Partition;
use crate::regularity::{equitize, layer_keys, layer_refine, weak_regularity_from, CutOracle, Termination};

/// Kernel-level tolerance used when compressing to a given width; the part
/// budget, not this tolerance, normally ends the run.
pub const WIDTH_MODE_EPSILON: f64 = 1e-3;

pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Compress to this hidden width.
    Width(usize),
    /// Regularize to this cut-norm tolerance and take the smallest width
    /// that fits the resulting parts.
    Epsilon(f64),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompressOptions {
    pub target: Target,
    pub oracle: CutOracle,
    pub samples: usize,
    pub seed: u64,
}

impl CompressOptions {
    pub fn new(target: Target) -> Self {
        Self { target, oracle: CutOracle::default(), samples: DEFAULT_SAMPLES, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressionReport {
    pub depth: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub bound: f64,
    pub original_hidden_dim: usize,
    pub compressed_hidden_dim: usize,
    pub target: Target,
    /// Cut-norm tolerance given to the regularity procedure.
    pub epsilon: f64,
    pub oracle: CutOracle,
    pub fk_iterations: usize,
    pub fk_termination: Option<Termination>,
    pub fk_error: f64,
    pub fk_error_kind: EstimateKind,
    pub refinement_error: f64,
    pub refinement_error_kind: EstimateKind,
    /// Parts of the layer-refined partition in each hidden layer.
    pub hidden_parts: Vec<usize>,
    /// Pooled remainder atoms in each hidden layer.
    pub remainder_parts: Vec<usize>,
    /// Upper estimate of the cut distance between the original kernel and
    /// the compressed one under the tick layout.
    pub delta_hat: f64,
    pub delta_hat_kind: EstimateKind,
    /// Lower estimate of the same distance from local search.
    pub delta_lower: f64,
    /// `(L + 2) dL (2B)^L`.
    pub chain_factor: f64,
    /// `chain_factor * delta_hat`.
    pub theoretical_bound: f64,
    /// Largest output difference over the sampled inputs.
    pub empirical_gap: f64,
    pub samples: usize,
    pub seed: u64,
    /// Failed structural conditions of the compressed kernel; empty when valid.
    pub failed_conditions: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Compression {
    pub network: DenseNetwork,
    pub kernel: ComputationalKernel,
    pub report: CompressionReport,
}

/// `(L + 2) dL (2B)^L`, the factor turning a kernel cut distance into a
/// bound on the output gap.
pub fn chain_factor(shape: &LayerStructure, bound: f64) -> f64 {
    ((shape.depth() + 2) * shape.output_dim()) as f64 * (2.0 * bound).powi(shape.depth() as i32)
}

/// Largest `|a(x)_j - b(x)_j|` over `samples` uniform inputs in `[0, 1]^d0`.
pub fn empirical_gap(a: &DenseNetwork, b: &DenseNetwork, samples: usize, seed: u64) -> Result<f64> {
    let d0 = a.shape().input_dim();
    if b.shape().input_dim() != d0 || b.shape().output_dim() != a.shape().output_dim() {
        return Err(Error::Dimension("networks have different input or output dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..samples).map(|_| (0..d0).map(|_| rng.random::<f64>()).collect()).collect();
    xs.par_iter()
        .map(|x| {
            let (ya, yb) = (a.forward(x)?, b.forward(x)?);
            Ok(ya.iter().zip(&yb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        })
        .try_reduce(|| 0.0, |p, q| Ok(p.max(q)))
}

/// One piece of the tick layout: `ticks` ticks of original atom `atom`
/// placed inside new atom `new_atom`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Piece {
    atom: usize,
    new_atom: usize,
    ticks: usize,
}

struct Layout {
    pieces: Vec<Piece>,
    remainder_parts: Vec<usize>,
}

/// Lays every layer of `old` onto `new`. Hidden layers are ordered by part
/// with whole units first and pooled remainders last; other layers keep
/// their order, which keeps input and output cells aligned.
fn layout(old: &LayerStructure, new: &LayerStructure, labels: &[usize]) -> Result<Layout> {
    let (d, dn) = (old.hidden_dim(), new.hidden_dim());
    let mut pieces = Vec::new();
    let mut remainder_parts = Vec::new();
    for l in 0..=old.depth() + 1 {
        let (range, new_range) = if l == old.depth() + 1 {
            (old.bias(), new.bias())
        } else {
            (old.layer(l), new.layer(l))
        };
        let runs: Vec<(usize, usize)> = if l == 0 || l >= old.depth() {
            range.map(|a| (a, dn)).collect()
        } else {
            let mut parts: Vec<usize> = range.clone().map(|a| labels[a]).collect();
            parts.sort_unstable();
            parts.dedup();
            let members: Vec<Vec<usize>> =
                parts.iter().map(|&p| range.clone().filter(|&a| labels[a] == p).collect()).collect();
            let ticks: Vec<f64> = members.iter().map(|m| (m.len() * dn) as f64).collect();
            let eq = equitize(&ticks, dn)?;
            remainder_parts.push(eq.remainder_parts);
            let mut full = Vec::new();
            let mut rest = Vec::new();
            for (m, &units) in members.iter().zip(&eq.full) {
                let mut budget = units * d;
                for &a in m {
                    let take = budget.min(dn);
                    if take > 0 {
                        full.push((a, take));
                    }
                    if take < dn {
                        rest.push((a, dn - take));
                    }
                    budget -= take;
                }
            }
            full.extend(rest);
            full
        };
        let mut pos = 0;
        for (atom, mut t) in runs {
            while t > 0 {
                let s = pos / d;
                let take = t.min((s + 1) * d - pos);
                pieces.push(Piece { atom, new_atom: new_range.start + s, ticks: take });
                pos += take;
                t -= take;
            }
        }
        debug_assert_eq!(pos, d * dn);
    }
    Ok(Layout { pieces, remainder_parts })
}

/// Averages a step kernel on a partition of the old atoms, given by
/// `labels`, over each new atom.
fn averaged_kernel(projected: &StepKernel, labels: &[usize], pieces: &[Piece], old: &LayerStructure, new: &LayerStructure) -> Array2<f64> {
    let mut ticks = Array2::<usize>::zeros((new.n(), projected.len()));
    for p in pieces {
        ticks[[p.new_atom, labels[p.atom]]] += p.ticks;
    }
    // Dividing integer tick counts once keeps rows of the same cell identical.
    let unit = old.hidden_dim() as f64;
    let comp = ticks.mapv(|t| t as f64 / unit);
    comp.dot(projected.coeffs()).dot(&comp.t())
}

fn hidden_part_counts(kernel: &ComputationalKernel, labels: &[usize]) -> Vec<usize> {
    let keys = layer_keys(kernel, labels);
    let layers = kernel.layers();
    (1..layers.depth())
        .map(|l| {
            let mut k: Vec<_> = layers.layer(l).map(|a| keys[a]).collect();
            k.sort_unstable();
            k.dedup();
            k.len()
        })
        .collect()
}

fn identity(net: &DenseNetwork, kernel: ComputationalKernel, options: &CompressOptions) -> Result<Compression> {
    let shape = net.shape();
    let factor = chain_factor(&shape, net.bound());
    let report = CompressionReport {
        depth: shape.depth(),
        input_dim: shape.input_dim(),
        output_dim: shape.output_dim(),
        bound: net.bound(),
        original_hidden_dim: shape.hidden_dim(),
        compressed_hidden_dim: shape.hidden_dim(),
        target: options.target,
        epsilon: 0.0,
        oracle: options.oracle,
        fk_iterations: 0,
        fk_termination: None,
        fk_error: 0.0,
        fk_error_kind: EstimateKind::Exact,
        refinement_error: 0.0,
        refinement_error_kind: EstimateKind::Exact,
        hidden_parts: vec![shape.hidden_dim(); shape.depth() - 1],
        remainder_parts: vec![0; shape.depth() - 1],
        delta_hat: 0.0,
        delta_hat_kind: EstimateKind::Exact,
        delta_lower: 0.0,
        chain_factor: factor,
        theoretical_bound: 0.0,
        empirical_gap: 0.0,
        samples: options.samples,
        seed: options.seed,
        failed_conditions: Vec::new(),
    };
    Ok(Compression { network: net.clone(), kernel, report })
}

pub fn compress(net: &DenseNetwork, options: &CompressOptions) -> Result<Compression> {
    let kernel = induce_kernel(net)?;
    let shape = net.shape();
    let (d, m) = (shape.hidden_dim(), shape.lcm());
    let (epsilon, width) = match options.target {
        Target::Width(w) => {
            if w == 0 || w % m != 0 {
                return Err(Error::Precondition(format!("target width {w} must be a positive multiple of {m}")));
            }
            if w > d {
                return Err(Error::Precondition(format!("target width {w} exceeds the hidden width {d}")));
            }
            if w == d {
                return identity(net, kernel, options);
            }
            (WIDTH_MODE_EPSILON, Some(w))
        }
        Target::Epsilon(e) => {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Precondition(format!("epsilon must be positive, got {e}")));
            }
            (e.min(2.0), None)
        }
    };

    let start = kernel.kernel().partition().coarsen(&vec![0; shape.n()])?;
    let trace = weak_regularity_from(kernel.kernel(), epsilon, options.oracle, start, |p| match width {
        Some(w) => hidden_part_counts(&kernel, p.labels()).into_iter().all(|c| c < w),
        None => true,
    })?;
    let fk_iterations = trace.steps.len() - 1;
    let fk_termination = trace.termination;
    let (fk_error, fk_error_kind) = trace.final_bound();
    let refined = layer_refine(&kernel, trace, options.oracle)?;
    let labels = refined.partition.labels().to_vec();
    let hidden_parts = hidden_part_counts(&kernel, &labels);
    let max_parts = hidden_parts.iter().copied().max().unwrap_or(0);
    let width = width.unwrap_or((max_parts / m + 1) * m);
    if width >= d {
        let mut out = identity(net, kernel, options)?;
        out.report.epsilon = epsilon;
        return Ok(out);
    }

    let new_shape = shape.with_hidden_dim(width)?;
    let lay = layout(&shape, &new_shape, &labels)?;
    let mut coeffs = averaged_kernel(&refined.projected, &labels, &lay.pieces, &shape, &new_shape);
    let bias_value = (shape.depth() + 2) as f64 / net.bound();
    for x in new_shape.bias() {
        for y in new_shape.bias() {
            coeffs[[x, y]] = bias_value;
        }
    }
    let new_kernel = StepKernel::new(Partition::equipartition(new_shape.n())?, coeffs)?;
    let diag = validate_computational(&new_kernel, &new_shape, net.bound());
    let failed_conditions: Vec<String> = diag.failed().iter().map(|c| c.to_string()).collect();
    let compressed = ComputationalKernel::from_step_kernel(new_kernel, new_shape, net.bound())?;
    let network = extract_network(&compressed)?;
    // Snap K' onto the grid of representable `w / B` values of the returned network.
    let compressed = induce_kernel(&network)?;

    let diff = piece_difference(&kernel, &compressed, &lay.pieces, shape.n() * width)?;
    let cap = match options.oracle {
        CutOracle::Exact { cap } => cap,
        CutOracle::Heuristic { .. } => crate::cutnorm::DEFAULT_EXACT_CAP,
    };
    let upper = cut_norm(&diff, CutMethod::Certified { cap })?;
    let lower = kernel_cut_norm_lower(&diff, DEFAULT_RESTARTS, options.seed);
    let factor = chain_factor(&shape, net.bound());
    let empirical = empirical_gap(net, &network, options.samples, options.seed)?;

    let report = CompressionReport {
        depth: shape.depth(),
        input_dim: shape.input_dim(),
        output_dim: shape.output_dim(),
        bound: net.bound(),
        original_hidden_dim: d,
        compressed_hidden_dim: width,
        target: options.target,
        epsilon,
        oracle: options.oracle,
        fk_iterations,
        fk_termination: Some(fk_termination),
        fk_error,
        fk_error_kind,
        refinement_error: refined.error,
        refinement_error_kind: refined.error_kind,
        hidden_parts,
        remainder_parts: lay.remainder_parts,
        delta_hat: upper.value,
        delta_hat_kind: upper.kind,
        delta_lower: lower.value,
        chain_factor: factor,
        theoretical_bound: factor * upper.value,
        empirical_gap: empirical,
        samples: options.samples,
        seed: options.seed,
        failed_conditions,
    };
    Ok(Compression { network, kernel: compressed, report })
}

/// `K - K'` on the ground of pieces, where each piece carries the value of
/// its original atom pair in `K` and its new atom pair in `K'`.
fn piece_difference(
    original: &ComputationalKernel,
    compressed: &ComputationalKernel,
    pieces: &[Piece],
    total_ticks: usize,
) -> Result<StepKernel> {
    let measures: Vec<f64> = pieces.iter().map(|p| p.ticks as f64 / total_ticks as f64).collect();
    let (k, kn) = (original.kernel().coeffs(), compressed.kernel().coeffs());
    let coeffs = Array2::from_shape_fn((pieces.len(), pieces.len()), |(i, j)| {
        let (p, q) = (pieces[i], pieces[j]);
        k[[p.atom, q.atom]] - kn[[p.new_atom, q.new_atom]]
    });
    StepKernel::new(Partition::intervals(measures)?, coeffs)
}
