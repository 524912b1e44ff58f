mod common;

use densecap_core::io::{read_network, write_network};
use densecap_core::layers::LayerStructure;
use densecap_core::net::{param_count, DenseNetwork};
use densecap_core::oracle;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

#[test]
fn forward_matches_straight_line_oracle_on_1000_pairs() {
    let mut rng = common::rng(11);
    for _ in 0..1000 {
        let net = common::net(&mut rng, 2..=4, 12);
        let x = common::input(&mut rng, net.shape().input_dim());
        let fast = net.forward(&x).unwrap();
        let slow = oracle::forward(&net, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn forward_of_l3_d12_net_matches_oracle() {
    let mut rng = common::rng(5);
    let s = LayerStructure::new(3, 2, 3, 12).unwrap();
    let net = DenseNetwork::random(&mut rng, s, 5.0).unwrap();
    let x = common::input(&mut rng, 2);
    let (a, b) = (net.forward(&x).unwrap(), oracle::forward(&net, &x));
    assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12));
}

#[test]
fn zero_network_outputs_zero() {
    let s = LayerStructure::new(3, 2, 2, 4).unwrap();
    let w = (1..=3).map(|l| Array2::zeros((s.width(l), s.width(l - 1)))).collect();
    let b = (1..=3).map(|l| Array1::zeros(s.width(l))).collect();
    let net = DenseNetwork::new(5.0, w, b).unwrap();
    assert_eq!(net.forward(&[0.3, 0.9]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn forward_reports_dimension_mismatch() {
    let mut rng = common::rng(1);
    let net = DenseNetwork::random(&mut rng, LayerStructure::new(2, 2, 1, 2).unwrap(), 4.0).unwrap();
    let err = net.forward(&[1.0]).unwrap_err().to_string();
    assert!(err.contains('2') && err.contains('1'), "{err}");
}

#[test]
fn clamp_projects_out_of_range_entries() {
    let w = vec![Array2::from_elem((1, 1), 8.0), Array2::from_elem((1, 1), -12.0)];
    let b = vec![Array1::from_elem(1, 1.0), Array1::from_elem(1, 0.5)];
    let net = DenseNetwork::new(20.0, w, b).unwrap();
    let c = net.clamp_dense(4.0).unwrap();
    assert_eq!(c.weights(1)[[0, 0]], 4.0);
    assert_eq!(c.weights(2)[[0, 0]], -4.0);
    assert_eq!(c.bias(1)[0], 1.0);
    assert_eq!(c.bound(), 4.0);
}

#[test]
fn param_count_spot_values() {
    assert_eq!(param_count(LayerStructure::new(2, 1, 1, 4).unwrap()), 29);
    assert_eq!(param_count(LayerStructure::new(2, 1, 1, 1).unwrap()), 5);
}

#[test]
fn param_count_exceeds_literal_enumeration_by_d_squared() {
    let mut rng = common::rng(0);
    for depth in 2..=8 {
        for d0 in 1..=8 {
            for dl in 1..=8 {
                for d in 1..=8 {
                    let Ok(s) = LayerStructure::new(depth, d0, dl, d) else { continue };
                    let net = DenseNetwork::random(&mut rng, s, 10.0).unwrap();
                    let literal: usize = (1..=depth).map(|l| net.weights(l).len() + net.bias(l).len()).sum();
                    assert_eq!(net.num_parameters(), literal);
                    assert_eq!(param_count(s), (literal + d * d) as u128);
                }
            }
        }
    }
}

#[test]
fn truncated_file_names_missing_section() {
    let mut rng = common::rng(2);
    let net = DenseNetwork::random(&mut rng, LayerStructure::new(3, 1, 1, 2).unwrap(), 5.0).unwrap();
    let text = write_network(&net);
    let cut: String = text.lines().take_while(|l| !l.starts_with("W 3")).map(|l| format!("{l}\n")).collect();
    let err = read_network(&cut).unwrap_err().to_string();
    assert!(err.contains("W 3"), "{err}");
}

#[test]
fn out_of_bound_entry_is_named() {
    let text = "densecap-net v1\n2 1 1 1 4.0\nW 1\n5.0\nb 1 0.0\nW 2\n1.0\nb 2 0.0\n";
    let err = read_network(text).unwrap_err().to_string();
    assert!(err.contains("layer 1 weight (0, 0)"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn serialization_round_trip_is_bit_exact(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let net = common::net(&mut rng, 2..=4, 12);
        prop_assert_eq!(read_network(&write_network(&net)).unwrap(), net);
    }

    #[test]
    fn clamp_is_idempotent_and_feasible(seed in any::<u64>(), bound in 0.1f64..10.0) {
        let mut rng = common::rng(seed);
        let net = common::net(&mut rng, 2..=4, 12);
        let once = net.clamp_dense(bound).unwrap();
        prop_assert_eq!(once.clamp_dense(bound).unwrap(), once.clone());
        for l in 1..=once.depth() {
            prop_assert!(once.weights(l).iter().chain(once.bias(l).iter()).all(|v| v.abs() <= bound));
        }
        let x = common::input(&mut rng, once.shape().input_dim());
        prop_assert!(once.forward(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn param_count_is_monotone_in_width(depth in 2usize..6, d in 1usize..200) {
        let a = param_count(LayerStructure::new(depth, 1, 1, d).unwrap());
        let b = param_count(LayerStructure::new(depth, 1, 1, d + 1).unwrap());
        prop_assert!(b > a);
    }
}
