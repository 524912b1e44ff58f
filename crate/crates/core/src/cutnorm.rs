//! Cut norms of step signals and step kernels, and the computational cut
//! distance between computational kernels.
//!
//! For a step kernel the supremum over measurable `S, T` is attained at unions
//! of parts, so the exact norm is a finite search. Identical rows (or columns)
//! always land on the same side of an optimal cut, which lets them be merged
//! before searching.

use std::collections::HashMap;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::computational::ComputationalKernel;
use crate::error::{Error, Result};
use crate::kernel::{StepKernel, StepSignal};

/// Default enumeration cap for the exact kernel cut norm.
pub const DEFAULT_EXACT_CAP: usize = 24;
/// Default number of random restarts of the heuristic.
pub const DEFAULT_RESTARTS: usize = 32;
/// Largest hidden width accepted by the exhaustive permutation search.
pub const MAX_EXHAUSTIVE_WIDTH: usize = 8;
/// Largest number of permutation tuples the exhaustive search visits.
pub const MAX_EXHAUSTIVE_TUPLES: u64 = 1_000_000;

const GRAY_LOW_BITS: usize = 12;

/// The maximizing parts of a signal cut.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalCut {
    pub value: f64,
    pub parts: Vec<usize>,
}

/// Row and column parts attaining a kernel cut value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutWitness {
    pub value: f64,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// `max(positive mass, negative mass)`.
pub fn signal_cut_norm(f: &StepSignal) -> SignalCut {
    let mu = f.partition().measures();
    let (mut pos, mut neg) = (0.0, 0.0);
    for (v, m) in f.values().iter().zip(mu) {
        if *v > 0.0 {
            pos += v * m;
        } else {
            neg -= v * m;
        }
    }
    let positive = pos >= neg;
    let parts = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| if positive { **v > 0.0 } else { **v < 0.0 })
        .map(|(p, _)| p)
        .collect();
    SignalCut { value: pos.max(neg), parts }
}

/// A kernel with duplicate and zero rows and columns merged away.
#[derive(Clone, Debug)]
pub struct Reduced {
    pub row_mu: Vec<f64>,
    pub col_mu: Vec<f64>,
    pub coeffs: Array2<f64>,
    pub row_groups: Vec<Vec<usize>>,
    pub col_groups: Vec<Vec<usize>>,
}

fn key(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

fn group_lines(lines: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<usize>> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.iter().all(|v| *v == 0.0) {
            continue;
        }
        let k: Vec<u64> = line.iter().map(|v| key(*v)).collect();
        let g = *index.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

impl Reduced {
    pub fn new(kernel: &StepKernel) -> Self {
        let c = kernel.coeffs();
        let mu = kernel.partition().measures();
        let row_groups = group_lines(c.rows().into_iter().map(|r| r.to_vec()));
        let reps: Vec<usize> = row_groups.iter().map(|g| g[0]).collect();
        let col_groups = group_lines((0..c.ncols()).map(|j| reps.iter().map(|&i| c[[i, j]]).collect()));
        let coeffs = Array2::from_shape_fn((row_groups.len(), col_groups.len()), |(i, j)| {
            c[[row_groups[i][0], col_groups[j][0]]]
        });
        let mass = |g: &Vec<usize>| g.iter().map(|&p| mu[p]).sum::<f64>();
        Self {
            row_mu: row_groups.iter().map(mass).collect(),
            col_mu: col_groups.iter().map(mass).collect(),
            coeffs,
            row_groups,
            col_groups,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_mu.len()
    }

    pub fn cols(&self) -> usize {
        self.col_mu.len()
    }

    /// Size of the smaller side, which is what the exact search enumerates.
    pub fn search_dim(&self) -> usize {
        self.rows().min(self.cols())
    }

    fn weighted(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.coeffs.dim(), |(i, j)| self.coeffs[[i, j]] * self.row_mu[i] * self.col_mu[j])
    }

    fn expand(groups: &[Vec<usize>], picked: impl Iterator<Item = usize>) -> Vec<usize> {
        let mut out: Vec<usize> = picked.flat_map(|g| groups[g].iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Best {
    value: f64,
    mask: u64,
    positive: bool,
}

impl Best {
    fn better(self, other: Best) -> Best {
        if other.value > self.value || (other.value == self.value && other.mask < self.mask) {
            other
        } else {
            self
        }
    }
}

fn score(s: &[f64], mask: u64) -> Best {
    let (mut pos, mut neg) = (0.0, 0.0);
    for &v in s {
        if v > 0.0 {
            pos += v;
        } else {
            neg -= v;
        }
    }
    Best { value: pos.max(neg), mask, positive: pos >= neg }
}

/// Maximizes over row subsets of `m` (rows enumerated, columns closed form).
fn enumerate_rows(m: &Array2<f64>) -> Best {
    let (r, k) = m.dim();
    let low = r.min(GRAY_LOW_BITS);
    let high = r - low;
    (0..1u64 << high)
        .into_par_iter()
        .map(|h| {
            let mut s = vec![0.0; k];
            for b in 0..high {
                if h >> b & 1 == 1 {
                    for (acc, v) in s.iter_mut().zip(m.row(low + b)) {
                        *acc += v;
                    }
                }
            }
            let base = h << low;
            let mut best = score(&s, base);
            for g in 1..1u64 << low {
                let bit = g.trailing_zeros() as usize;
                let gray = g ^ (g >> 1);
                let row = m.row(bit);
                if gray >> bit & 1 == 1 {
                    s.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                } else {
                    s.iter_mut().zip(row).for_each(|(acc, v)| *acc -= v);
                }
                best = best.better(score(&s, base | gray));
            }
            best
        })
        .reduce(|| Best { value: f64::NEG_INFINITY, mask: u64::MAX, positive: true }, Best::better)
}

/// Exact cut norm. Errors when the reduced kernel still has more than `cap`
/// rows and columns.
pub fn kernel_cut_norm_exact(kernel: &StepKernel, cap: usize) -> Result<CutWitness> {
    let red = Reduced::new(kernel);
    exact_reduced(kernel, &red, cap)
}

fn exact_reduced(kernel: &StepKernel, red: &Reduced, cap: usize) -> Result<CutWitness> {
    if red.search_dim() == 0 {
        return Ok(CutWitness { value: 0.0, rows: Vec::new(), cols: Vec::new() });
    }
    let dim = red.search_dim();
    if dim > cap.min(63) {
        return Err(Error::Capacity(format!(
            "exact cut norm needs 2^{dim} subsets after reduction (cap {cap}); use the heuristic or an upper bound"
        )));
    }
    let w = red.weighted();
    let transposed = red.cols() < red.rows();
    let m = if transposed { w.t().to_owned() } else { w };
    let best = enumerate_rows(&m);
    let picked: Vec<usize> = (0..m.nrows()).filter(|&i| best.mask >> i & 1 == 1).collect();
    let mut sums = vec![0.0; m.ncols()];
    for &i in &picked {
        sums.iter_mut().zip(m.row(i)).for_each(|(a, v)| *a += v);
    }
    let other: Vec<usize> = (0..m.ncols())
        .filter(|&j| if best.positive { sums[j] > 0.0 } else { sums[j] < 0.0 })
        .collect();
    let (rows, cols) = if transposed { (other, picked) } else { (picked, other) };
    Ok(witness(kernel, red, &rows, &cols))
}

fn witness(kernel: &StepKernel, red: &Reduced, rows: &[usize], cols: &[usize]) -> CutWitness {
    let rows = Reduced::expand(&red.row_groups, rows.iter().copied());
    let cols = Reduced::expand(&red.col_groups, cols.iter().copied());
    let value = kernel.block_integral(&rows, &cols).abs();
    CutWitness { value, rows, cols }
}

/// Alternating maximization from random starts. The value is attained by
/// the returned witness, so it is a lower bound on the cut norm.
pub fn kernel_cut_norm_lower(kernel: &StepKernel, restarts: usize, seed: u64) -> CutWitness {
    let red = Reduced::new(kernel);
    lower_reduced(kernel, &red, restarts, seed)
}

fn lower_reduced(kernel: &StepKernel, red: &Reduced, restarts: usize, seed: u64) -> CutWitness {
    if red.search_dim() == 0 {
        return CutWitness { value: 0.0, rows: Vec::new(), cols: Vec::new() };
    }
    let m = red.weighted();
    let (r, c) = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<bool>> = vec![vec![true; r]];
    starts.push((0..r).map(|i| m.row(i).sum() > 0.0).collect());
    for _ in 0..restarts {
        starts.push((0..r).map(|_| rng.random_bool(0.5)).collect());
    }
    let mut best: (f64, Vec<usize>, Vec<usize>) = (-1.0, Vec::new(), Vec::new());
    for start in starts {
        for sign in [1.0, -1.0] {
            let mut rows = start.clone();
            let mut chain: (f64, Vec<bool>, Vec<bool>) = (f64::NEG_INFINITY, Vec::new(), Vec::new());
            loop {
                let mut sums = vec![0.0; c];
                for i in (0..r).filter(|&i| rows[i]) {
                    sums.iter_mut().zip(m.row(i)).for_each(|(a, v)| *a += v);
                }
                let cols: Vec<bool> = sums.iter().map(|s| sign * s > 0.0).collect();
                let row_sums: Vec<f64> =
                    (0..r).map(|i| (0..c).filter(|&j| cols[j]).map(|j| m[[i, j]]).sum()).collect();
                let next: Vec<bool> = row_sums.iter().map(|s| sign * s > 0.0).collect();
                let v = sign * row_sums.iter().zip(&next).filter(|(_, k)| **k).map(|(s, _)| s).sum::<f64>();
                if v <= chain.0 + 1e-15 {
                    break;
                }
                chain = (v, next.clone(), cols);
                rows = next;
            }
            if chain.0 > best.0 {
                let pick = |v: &[bool]| (0..v.len()).filter(|&i| v[i]).collect::<Vec<_>>();
                best = (chain.0, pick(&chain.1), pick(&chain.2));
            }
        }
    }
    witness(kernel, red, &best.1, &best.2)
}

/// A certified upper bound: the smaller of the operator norm on `L^2` and
/// the larger signed mass. Both dominate the cut norm.
pub fn kernel_cut_norm_upper(kernel: &StepKernel) -> Result<f64> {
    upper_reduced(&Reduced::new(kernel))
}

fn upper_reduced(red: &Reduced) -> Result<f64> {
    if red.search_dim() == 0 {
        return Ok(0.0);
    }
    let w = red.weighted();
    let pos: f64 = w.iter().filter(|v| **v > 0.0).sum();
    let neg: f64 = -w.iter().filter(|v| **v < 0.0).sum::<f64>();
    let (r, c) = w.dim();
    let scaled = DMatrix::from_fn(r, c, |i, j| red.coeffs[[i, j]] * (red.row_mu[i] * red.col_mu[j]).sqrt());
    let gram = if c <= r { scaled.transpose() * &scaled } else { &scaled * scaled.transpose() };
    let top = gram.symmetric_eigenvalues().iter().fold(0.0f64, |m, v| m.max(*v));
    if !top.is_finite() {
        return Err(Error::Numerical("eigenvalue computation did not converge".into()));
    }
    let spectral = top.sqrt() * (1.0 + 1e-9) + 1e-12;
    Ok(spectral.min(pos.max(neg)))
}

/// How to evaluate a kernel cut norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum CutMethod {
    /// Exhaustive search; fails above the cap.
    Exact { cap: usize },
    /// Exhaustive search when within the cap, otherwise the certified upper bound.
    Certified { cap: usize },
    /// Alternating maximization (a lower bound).
    Heuristic { restarts: usize, seed: u64 },
}

impl Default for CutMethod {
    fn default() -> Self {
        CutMethod::Certified { cap: DEFAULT_EXACT_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EstimateKind {
    Exact,
    Upper,
    Lower,
}

#[derive(Clone, Debug, Serialize)]
pub struct CutEstimate {
    pub value: f64,
    pub kind: EstimateKind,
    pub witness: Option<CutWitness>,
}

pub fn cut_norm(kernel: &StepKernel, method: CutMethod) -> Result<CutEstimate> {
    let red = Reduced::new(kernel);
    match method {
        CutMethod::Exact { cap } => {
            let w = exact_reduced(kernel, &red, cap)?;
            Ok(CutEstimate { value: w.value, kind: EstimateKind::Exact, witness: Some(w) })
        }
        CutMethod::Certified { cap } if red.search_dim() <= cap => {
            let w = exact_reduced(kernel, &red, cap)?;
            Ok(CutEstimate { value: w.value, kind: EstimateKind::Exact, witness: Some(w) })
        }
        CutMethod::Certified { .. } => {
            Ok(CutEstimate { value: upper_reduced(&red)?, kind: EstimateKind::Upper, witness: None })
        }
        CutMethod::Heuristic { restarts, seed } => {
            let w = lower_reduced(kernel, &red, restarts, seed);
            Ok(CutEstimate { value: w.value, kind: EstimateKind::Lower, witness: Some(w) })
        }
    }
}

/// Search space for the hidden-layer permutations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PermutationSearch {
    Identity,
    Greedy,
    Exhaustive,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompDistance {
    pub value: f64,
    pub kind: EstimateKind,
    /// Permutation of each hidden layer applied to the second kernel.
    pub permutations: Vec<Vec<usize>>,
}

fn identity_perms(k: &ComputationalKernel) -> Vec<Vec<usize>> {
    (1..k.layers().depth()).map(|_| (0..k.layers().hidden_dim()).collect()).collect()
}

fn distance_at(k: &ComputationalKernel, j: &ComputationalKernel, perms: &[Vec<usize>], method: CutMethod) -> Result<CutEstimate> {
    let moved = j.permute_hidden(perms)?;
    cut_norm(&k.kernel().sub(moved.kernel())?, method)
}

/// Upper bound on the computational cut distance: the cut norm of `K - J^phi`
/// minimized over hidden-layer permutations `phi` in the chosen search space.
pub fn comp_cut_distance_upper(
    k: &ComputationalKernel,
    j: &ComputationalKernel,
    search: PermutationSearch,
    method: CutMethod,
) -> Result<CompDistance> {
    if k.layers() != j.layers() {
        return Err(Error::Dimension("kernels have different layer structures".into()));
    }
    let id = identity_perms(k);
    let base = distance_at(k, j, &id, method)?;
    let mut best = CompDistance { value: base.value, kind: base.kind, permutations: id };
    match search {
        PermutationSearch::Identity => {}
        PermutationSearch::Greedy => {
            let perms = greedy_perms(k, j);
            let est = distance_at(k, j, &perms, method)?;
            if est.value < best.value {
                best = CompDistance { value: est.value, kind: est.kind, permutations: perms };
            }
        }
        PermutationSearch::Exhaustive => {
            let d = k.layers().hidden_dim();
            if d > MAX_EXHAUSTIVE_WIDTH {
                return Err(Error::Capacity(format!(
                    "exhaustive search supports hidden width up to {MAX_EXHAUSTIVE_WIDTH}, got {d}"
                )));
            }
            let per_layer: u64 = (1..=d as u64).product();
            let layers = k.layers().depth() as u32 - 1;
            let total = per_layer
                .checked_pow(layers)
                .filter(|t| *t <= MAX_EXHAUSTIVE_TUPLES)
                .ok_or_else(|| {
                    Error::Capacity(format!(
                        "{d}!^{layers} permutation tuples exceed the limit of {MAX_EXHAUSTIVE_TUPLES}"
                    ))
                })?;
            let found = (0..total)
                .into_par_iter()
                .map(|idx| {
                    let perms = decode_tuple(idx, d, layers as usize, per_layer);
                    distance_at(k, j, &perms, method).map(|e| (e.value, idx, e.kind))
                })
                .collect::<Result<Vec<_>>>()?;
            let (value, idx, kind) = found
                .into_iter()
                .fold((f64::INFINITY, 0, EstimateKind::Exact), |a, b| if b.0 < a.0 { b } else { a });
            if value < best.value {
                best = CompDistance { value, kind, permutations: decode_tuple(idx, d, layers as usize, per_layer) };
            }
        }
    }
    Ok(best)
}

/// The `rank`-th permutation of `0..d` in lexicographic order.
fn nth_permutation(mut rank: u64, d: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d).collect();
    let mut out = Vec::with_capacity(d);
    for k in (1..=d).rev() {
        let f: u64 = (1..k as u64).product();
        let i = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(i));
    }
    out
}

fn decode_tuple(mut idx: u64, d: usize, layers: usize, per_layer: u64) -> Vec<Vec<usize>> {
    (0..layers)
        .map(|_| {
            let p = nth_permutation(idx % per_layer, d);
            idx /= per_layer;
            p
        })
        .collect()
}

/// Matches hidden atoms by a permutation-insensitive profile: bias weight,
/// total and absolute in-weight and out-weight.
fn greedy_perms(k: &ComputationalKernel, j: &ComputationalKernel) -> Vec<Vec<usize>> {
    let layers = k.layers();
    let profile = |x: &ComputationalKernel, atom: usize| -> [f64; 5] {
        let c = x.kernel().coeffs();
        let row = c.row(atom);
        let col = c.column(atom);
        [
            c[[atom, layers.bias().start]],
            row.sum(),
            row.iter().map(|v| v.abs()).sum(),
            col.sum(),
            col.iter().map(|v| v.abs()).sum(),
        ]
    };
    (1..layers.depth())
        .map(|l| {
            let range = layers.layer(l);
            let mut used = vec![false; range.len()];
            range
                .clone()
                .map(|a| {
                    let pa = profile(k, a);
                    let (pick, _) = range
                        .clone()
                        .enumerate()
                        .filter(|(s, _)| !used[*s])
                        .map(|(s, b)| {
                            let pb = profile(j, b);
                            (s, pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
                        })
                        .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
                    used[pick] = true;
                    pick
                })
                .collect()
        })
        .collect()
}
