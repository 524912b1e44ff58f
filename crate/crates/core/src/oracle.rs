//! Straight-line reference implementations used to cross-check the
//! optimized code paths. They favour obviousness over speed.

use crate::kernel::{StepKernel, StepSignal};
use crate::net::DenseNetwork;

/// Forward pass written directly from the per-neuron formula.
pub fn forward(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
    let depth = net.depth();
    let mut h = x.to_vec();
    for l in 1..=depth {
        let w = net.weights(l);
        let b = net.bias(l);
        let fan_in = h.len();
        let mut next = Vec::with_capacity(w.nrows());
        for i in 0..w.nrows() {
            let mut total = 0.0;
            for j in 0..fan_in {
                total += w[[i, j]] * h[j] + b[i];
            }
            let v = total / (fan_in as f64 * (depth + 2) as f64);
            next.push(if l < depth { v.max(0.0) } else { v });
        }
        h = next;
    }
    h
}

/// `max over S, T of |int_S int_T K|`, enumerating every pair of part sets.
pub fn kernel_cut_norm(kernel: &StepKernel) -> f64 {
    let k = kernel.len();
    assert!(k <= 12, "brute force is limited to 12 parts");
    let mu = kernel.partition().measures();
    let c = kernel.coeffs();
    let mut best: f64 = 0.0;
    for s in 0u32..1 << k {
        let col: Vec<f64> = (0..k)
            .map(|j| (0..k).filter(|i| s >> i & 1 == 1).map(|i| c[[i, j]] * mu[i] * mu[j]).sum())
            .collect();
        let mut subset = vec![0.0f64; 1 << k];
        for t in 1usize..1 << k {
            let low = t.trailing_zeros() as usize;
            subset[t] = subset[t & (t - 1)] + col[low];
            best = best.max(subset[t].abs());
        }
    }
    best
}

/// `max over S of |int_S f|`, enumerating every set of parts.
pub fn signal_cut_norm(signal: &StepSignal) -> f64 {
    let k = signal.partition().len();
    assert!(k <= 20, "brute force is limited to 20 parts");
    let mu = signal.partition().measures();
    (0u32..1 << k)
        .map(|s| {
            (0..k)
                .filter(|i| s >> i & 1 == 1)
                .map(|i| signal.values()[i] * mu[i])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}
