#![allow(dead_code)]

use densecap_core::kernel::{StepKernel, StepSignal};
use densecap_core::layers::LayerStructure;
use densecap_core::net::DenseNetwork;
use densecap_core::partition::Partition;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random valid shape with `L` in `depths` and hidden width at most `max_d`.
pub fn shape(rng: &mut ChaCha8Rng, depths: std::ops::RangeInclusive<usize>, max_d: usize) -> LayerStructure {
    loop {
        let depth = rng.random_range(depths.clone());
        let d0 = rng.random_range(1..=3);
        let dl = rng.random_range(1..=3);
        let m = num_lcm(d0, dl);
        if m > max_d {
            continue;
        }
        let d = m * rng.random_range(1..=max_d / m);
        return LayerStructure::new(depth, d0, dl, d).unwrap();
    }
}

fn num_lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

pub fn net(rng: &mut ChaCha8Rng, depths: std::ops::RangeInclusive<usize>, max_d: usize) -> DenseNetwork {
    let s = shape(rng, depths, max_d);
    let bound = rng.random_range((s.depth() + 2) as f64..=10.0);
    DenseNetwork::random(rng, s, bound).unwrap()
}

pub fn input(rng: &mut ChaCha8Rng, d0: usize) -> Vec<f64> {
    (0..d0).map(|_| rng.random_range(0.0..=1.0)).collect()
}

/// Random partition of `[0, 1]` into `n` intervals of random positive measure.
pub fn partition(rng: &mut ChaCha8Rng, n: usize) -> Partition {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut m: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = m[..n - 1].iter().sum();
    m[n - 1] = 1.0 - head;
    Partition::intervals(m).unwrap()
}

pub fn kernel(rng: &mut ChaCha8Rng, n: usize, equal: bool) -> StepKernel {
    let p = if equal { Partition::equipartition(n).unwrap() } else { partition(rng, n) };
    StepKernel::new(p, Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..=1.0))).unwrap()
}

pub fn signal(rng: &mut ChaCha8Rng, n: usize) -> StepSignal {
    let p = partition(rng, n);
    StepSignal::new(p, Array1::from_shape_fn(n, |_| rng.random_range(-1.0..=1.0))).unwrap()
}
