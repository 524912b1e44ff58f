mod common;

use densecap_core::computational::{induce_kernel, input_signal};
use densecap_core::cutnorm::{
    comp_cut_distance_upper, cut_norm, kernel_cut_norm_exact, kernel_cut_norm_lower, signal_cut_norm, CutMethod,
    EstimateKind, PermutationSearch,
};
use densecap_core::kernel::{StepKernel, StepSignal};
use densecap_core::layers::{LayerStructure, Role};
use densecap_core::net::DenseNetwork;
use densecap_core::oracle;
use densecap_core::partition::Partition;
use densecap_core::propagation::mpnn_forward;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn exact_kernel_cut_norm_matches_full_enumeration() {
    let mut rng = common::rng(99);
    for i in 0..100 {
        let n = rng.random_range(1..=10);
        let k = common::kernel(&mut rng, n, i % 2 == 0);
        let fast = kernel_cut_norm_exact(&k, 24).unwrap();
        let slow = oracle::kernel_cut_norm(&k);
        assert!((fast.value - slow).abs() <= 1e-12, "{} vs {slow}", fast.value);
        assert!((k.block_integral(&fast.rows, &fast.cols).abs() - fast.value).abs() <= 1e-12);
    }
}

#[test]
fn signal_sandwich_on_1000_signals() {
    let mut rng = common::rng(7);
    for _ in 0..1000 {
        let n = rng.random_range(1..=16);
        let f = common::signal(&mut rng, n);
        let c = signal_cut_norm(&f).value;
        let l1 = f.l1_norm();
        assert!(0.5 * l1 <= c + 1e-15 && c <= l1 + 1e-15);
        assert!((c - oracle::signal_cut_norm(&f)).abs() <= 1e-12);
    }
}

#[test]
fn signal_spot_values() {
    let halves = Partition::equipartition(2).unwrap();
    let f = StepSignal::new(halves.clone(), array![1.0, -1.0]).unwrap();
    let c = signal_cut_norm(&f);
    assert_eq!(c.value, 0.5);
    assert_eq!(c.parts, vec![0]);
    assert_eq!(f.l1_norm(), 1.0);
    let g = StepSignal::new(halves, array![0.2, 0.6]).unwrap();
    assert!((signal_cut_norm(&g).value - g.l1_norm()).abs() < 1e-15);
}

#[test]
fn kernel_spot_values() {
    let k = StepKernel::new(Partition::equipartition(2).unwrap(), array![[1.0, -1.0], [-1.0, 1.0]]).unwrap();
    let w = kernel_cut_norm_exact(&k, 24).unwrap();
    assert_eq!(w.value, 0.25);
    assert_eq!(w.rows.len(), 1);
    assert_eq!(w.cols.len(), 1);
    let c = StepKernel::new(Partition::equipartition(5).unwrap(), Array2::from_elem((5, 5), -0.3)).unwrap();
    assert!((kernel_cut_norm_exact(&c, 24).unwrap().value - 0.3).abs() < 1e-15);
    assert!((kernel_cut_norm_lower(&c, 4, 1).value - 0.3).abs() < 1e-15);
    assert!((c.l1_norm() - 0.3).abs() < 1e-15);
    assert!((c.l2_norm_sq().sqrt() - 0.3).abs() < 1e-15);
}

#[test]
fn exact_search_refuses_above_cap() {
    let mut rng = common::rng(1);
    let k = common::kernel(&mut rng, 30, true);
    assert!(kernel_cut_norm_exact(&k, 24).is_err());
    assert_eq!(cut_norm(&k, CutMethod::Certified { cap: 24 }).unwrap().kind, EstimateKind::Upper);
}

fn swap_two_hidden(net: &DenseNetwork) -> DenseNetwork {
    let mut w: Vec<_> = (1..=net.depth()).map(|l| net.weights(l).clone()).collect();
    let mut b: Vec<_> = (1..=net.depth()).map(|l| net.bias(l).clone()).collect();
    let d = net.shape().hidden_dim();
    let (i, j) = (0, d - 1);
    for r in 0..w[0].ncols() {
        w[0].swap([i, r], [j, r]);
    }
    b[0].swap(i, j);
    for r in 0..w[1].nrows() {
        w[1].swap([r, i], [r, j]);
    }
    DenseNetwork::new(net.bound(), w, b).unwrap()
}

#[test]
fn swapped_hidden_units_have_zero_distance_under_exhaustive_search() {
    let mut rng = common::rng(3);
    let s = LayerStructure::new(3, 1, 1, 4).unwrap();
    let net = DenseNetwork::random(&mut rng, s, 6.0).unwrap();
    let (k, j) = (induce_kernel(&net).unwrap(), induce_kernel(&swap_two_hidden(&net)).unwrap());
    let method = CutMethod::Exact { cap: 24 };
    assert_eq!(comp_cut_distance_upper(&k, &k, PermutationSearch::Identity, method).unwrap().value, 0.0);
    let ex = comp_cut_distance_upper(&k, &j, PermutationSearch::Exhaustive, method).unwrap();
    assert!(ex.value <= 1e-15, "{ex:?}");
    assert!(comp_cut_distance_upper(&k, &j, PermutationSearch::Identity, method).unwrap().value > 0.0);
}

#[test]
fn exhaustive_search_refuses_wide_layers() {
    let mut rng = common::rng(3);
    let s = LayerStructure::new(2, 1, 1, 9).unwrap();
    let k = induce_kernel(&DenseNetwork::random(&mut rng, s, 5.0).unwrap()).unwrap();
    assert!(comp_cut_distance_upper(&k, &k, PermutationSearch::Exhaustive, CutMethod::default()).is_err());
}

/// Random computational kernel pair with common shape, `d <= 6`.
fn pair(rng: &mut rand_chacha::ChaCha8Rng) -> (DenseNetwork, DenseNetwork) {
    loop {
        let depth = rng.random_range(2..=3);
        let (d0, dl) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let m = if d0 == dl { d0 } else { 2 };
        let d = m * rng.random_range(1..=6 / m);
        let perms = (1..=d).product::<usize>().pow(depth as u32 - 1);
        if perms > 1000 {
            continue;
        }
        let s = LayerStructure::new(depth, d0, dl, d).unwrap();
        let bound = rng.random_range((depth + 2) as f64..=10.0);
        let a = DenseNetwork::random(rng, s, bound).unwrap();
        let b = DenseNetwork::random(rng, s, bound).unwrap();
        return (a, b);
    }
}

#[test]
fn output_gap_is_controlled_by_the_computational_distance() {
    let mut rng = common::rng(41);
    for _ in 0..50 {
        let (a, b) = pair(&mut rng);
        let s = a.shape();
        let (k, j) = (induce_kernel(&a).unwrap(), induce_kernel(&b).unwrap());
        let dist = comp_cut_distance_upper(&k, &j, PermutationSearch::Exhaustive, CutMethod::Exact { cap: 24 }).unwrap();
        let f = input_signal(&s, &common::input(&mut rng, s.input_dim())).unwrap();
        let out = |k: &StepKernel| mpnn_forward(k, &f, a.bound(), s.depth()).unwrap();
        let diff = out(k.kernel()).sub(&out(j.kernel())).unwrap().masked(|p| s.role(p) == Role::Layer(s.depth()));
        let lhs = signal_cut_norm(&diff).value;
        let rhs = (2.0 * a.bound()).powi(s.depth() as i32) * dist.value;
        assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn heuristic_is_a_deterministic_lower_bound(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = common::rng(seed);
        let k = common::kernel(&mut rng, n, false);
        let exact = kernel_cut_norm_exact(&k, 24).unwrap().value;
        let a = kernel_cut_norm_lower(&k, 8, seed);
        let b = kernel_cut_norm_lower(&k, 8, seed);
        prop_assert!(a.value <= exact + 1e-12);
        prop_assert_eq!(a.value, b.value);
        prop_assert!((k.block_integral(&a.rows, &a.cols).abs() - a.value).abs() <= 1e-12);
    }

    #[test]
    fn certified_upper_bound_dominates_exact(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = common::rng(seed);
        let k = common::kernel(&mut rng, n, false);
        let exact = kernel_cut_norm_exact(&k, 24).unwrap().value;
        let upper = cut_norm(&k, CutMethod::Certified { cap: 0 }).unwrap();
        prop_assert_eq!(upper.kind, EstimateKind::Upper);
        prop_assert!(upper.value >= exact - 1e-12);
    }

    #[test]
    fn nested_permutation_searches(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (a, b) = pair(&mut rng);
        let (k, j) = (induce_kernel(&a).unwrap(), induce_kernel(&b).unwrap());
        let m = CutMethod::Exact { cap: 24 };
        let id = comp_cut_distance_upper(&k, &j, PermutationSearch::Identity, m).unwrap().value;
        let gr = comp_cut_distance_upper(&k, &j, PermutationSearch::Greedy, m).unwrap().value;
        let ex = comp_cut_distance_upper(&k, &j, PermutationSearch::Exhaustive, m).unwrap().value;
        prop_assert!(ex <= gr + 1e-15 && gr <= id + 1e-15);
    }
}
