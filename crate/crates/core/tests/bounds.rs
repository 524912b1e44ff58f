mod common;

use densecap_core::bounds::*;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use proptest::prelude::*;
use rand::Rng;

fn q(s: &str) -> BigRational {
    parse_rational(s).unwrap()
}

fn one() -> BigRational {
    q("1")
}

#[test]
fn spot_values_are_exact() {
    assert_eq!(lipschitz_constant(&q("4"), 2).unwrap().exact, Some(BigUint::from(64u8)));
    assert_eq!(lipschitz_constant(&q("1"), 1).unwrap().exact, Some(BigUint::from(2u8)));
    assert_eq!(lipschitz_constant(&q("8"), 10).unwrap().log2, Log2::integer(40));
    assert_eq!(wrl_hidden_dim(&q("4"), 2, 1, 1).unwrap().exact, Some(BigUint::from(16u8)));
    assert_eq!(wrl_hidden_dim(&q("1"), 2, 1, 1).unwrap().exact, Some(BigUint::from(16u8) << 32));
    let c = compression_hidden_dim(&q("1"), &q("4"), 2, 1, 1).unwrap();
    assert_eq!(c.log2, Log2::integer(2_097_164));
    assert_eq!(d0_threshold(&q("4"), 2, 1, &one()).unwrap().exact, Some(BigUint::from(18_253_611_637u64)));
}

#[test]
fn lcm_enters_linearly() {
    let base = wrl_hidden_dim(&q("4"), 2, 1, 1).unwrap().exact.unwrap();
    let six = wrl_hidden_dim(&q("4"), 2, 2, 3).unwrap().exact.unwrap();
    assert_eq!(six, base * 6u8);
}

#[test]
fn every_bound_is_self_consistent() {
    let values = [
        lipschitz_constant(&q("4.5"), 3).unwrap(),
        lipschitz_constant(&q("16"), 5).unwrap(),
        wrl_hidden_dim(&q("2"), 3, 2, 5).unwrap(),
        wrl_hidden_dim(&q("0.9"), 1, 7, 3).unwrap(),
        compression_hidden_dim(&q("3"), &q("5"), 2, 3, 2).unwrap(),
        vc_lower_bound(&q("1/24"), 2, &one()).unwrap(),
        vc_lower_bound(&q("1/12"), 4, &q("1/4")).unwrap(),
        d0_threshold(&q("4"), 2, 1, &one()).unwrap(),
        d0_threshold(&q("7/2"), 1, 3, &q("2")).unwrap(),
    ];
    for v in &values {
        assert!(v.is_consistent(1e-9), "{} = {v}", v.formula);
    }
}

#[test]
fn compression_width_doubling_output_dim_quadruples_inner_exponent() {
    let a = compression_hidden_dim(&one(), &q("4"), 2, 1, 1).unwrap().log2;
    let b = compression_hidden_dim(&one(), &q("4"), 2, 1, 2).unwrap().log2;
    // Exponent 2^21 becomes 2^23; lcm and 1/eps' each add one more bit.
    assert_eq!(b - a, Log2::integer((3i64 << 21) + 2));
}

#[test]
fn compression_width_is_monotone_in_epsilon() {
    let eps = ["0.5", "1", "2", "3", "5", "8", "13"];
    let logs: Vec<f64> =
        eps.iter().map(|e| compression_hidden_dim(&q(e), &q("4"), 2, 1, 1).unwrap().log2.to_f64()).collect();
    for w in logs.windows(2) {
        assert!(w[1] <= w[0], "{logs:?}");
    }
}

#[test]
fn compression_rejects_small_bound() {
    assert!(compression_hidden_dim(&one(), &q("3"), 2, 1, 1).is_err());
    assert!(d0_threshold(&q("3"), 2, 1, &one()).is_err());
}

#[test]
fn vc_spot_values() {
    assert_eq!(vc_lower_bound(&q("1/6"), 9, &one()).unwrap().exact, Some(BigUint::from(1u8)));
    assert_eq!(vc_lower_bound(&q("1/24"), 2, &one()).unwrap().exact, Some(BigUint::from(4u8)));
    let v = vc_lower_bound(&q("1/8"), 306, &one()).unwrap();
    assert!((v.log2.to_f64() - 153.0 * (4.0f64 / 3.0).log2()).abs() < 1e-9);
    assert!(vc_lower_bound(&q("1/3"), 2, &one()).is_err());
    assert!(vc_lower_bound(&q("0"), 2, &one()).is_err());
}

#[test]
fn threshold_doubling_output_dim() {
    let a = d0_threshold(&q("4"), 2, 1, &one()).unwrap().exact.unwrap();
    let b = d0_threshold(&q("4"), 2, 2, &one()).unwrap().exact.unwrap();
    // Log part gains 17 * log2(16); the main term grows with dL^2.
    let main = BigUint::from(18_253_611_008u64);
    assert_eq!(b, &main * 4u8 + 323u32 + 68u32 + 306u32);
    assert_eq!(a, main + 323u32 + 306u32);
}

#[test]
fn threshold_grows_with_c() {
    let mut prev = BigUint::from(0u8);
    for c in ["1/16", "1", "2", "1024", "1e9"] {
        let t = d0_threshold(&q("4"), 2, 1, &q(c)).unwrap().exact.unwrap();
        assert!(t >= prev);
        prev = t;
    }
    let small = d0_threshold(&q("4"), 2, 1, &one()).unwrap().exact.unwrap();
    let big = d0_threshold(&q("4"), 2, 1, &q("1024")).unwrap().exact.unwrap();
    // 17 * log2(1024^(1/2)) = 85.
    assert_eq!(big - small, BigUint::from(85u8));
}

#[test]
fn gap_holds_at_the_threshold_and_fails_below() {
    for (b, l, dl) in [("4", 2, 1), ("3", 1, 1), ("5", 3, 2)] {
        let t = d0_threshold(&q(b), l, dl, &one()).unwrap().exact.unwrap();
        let d0: u64 = t.try_into().unwrap();
        let at = non_universality_check(&q(b), l, dl, d0, &one()).unwrap();
        assert!(at.gap_holds && at.margin >= 0.0, "{b} {l} {dl}: {}", at.margin);
        let low = non_universality_check(&q(b), l, dl, 1, &one()).unwrap();
        assert!(!low.gap_holds && low.margin < 0.0);
    }
}

#[test]
fn margin_increases_with_input_dim() {
    let margin = |d0| non_universality_check(&q("4"), 2, 1, d0, &one()).unwrap().margin;
    let mut prev = margin(14);
    for d0 in (15..400).chain([1_000, 10_000, 1_000_000, 18_253_611_637]) {
        let m = margin(d0);
        assert!(m > prev, "d0 = {d0}");
        prev = m;
    }
}

#[test]
fn log2_arithmetic_round_trips() {
    let x = BigUint::from(3u8).pow(200);
    let l = Log2::of_uint(&x).unwrap();
    assert!((l.to_f64() - 200.0 * 3f64.log2()).abs() < 1e-9);
    assert_eq!(Log2::integer(BigInt::from(7)) - Log2::integer(BigInt::from(7)), Log2::zero());
    assert_eq!(parse_rational("2.5e1").unwrap(), q("25"));
    assert_eq!(parse_rational("0.125").unwrap(), q("1/8"));
    assert!(parse_rational("x").is_err());
}

#[test]
fn spike_interpolates_and_vanishes() {
    let mut rng = common::rng(11);
    let n = 4;
    let labels: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0) / (2 * n) as f64).collect();
    let f = SpikeTarget::new(2, n, labels.clone()).unwrap();
    for (m, y) in labels.iter().enumerate() {
        assert_eq!(f.eval(&f.grid_point(m)), *y);
    }
    let zero = SpikeTarget::new(3, 3, vec![0.0; 27]).unwrap();
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        assert_eq!(zero.eval(&x), 0.0);
    }
    assert!(SpikeTarget::new(2, 3, vec![0.0; 8]).is_err());
}

#[test]
fn spike_is_one_lipschitz() {
    let mut rng = common::rng(12);
    for (d0, n) in [(1usize, 7usize), (2, 5), (3, 3)] {
        let count = n.pow(d0 as u32);
        let half = 1.0 / (2 * n) as f64;
        let labels: Vec<f64> = (0..count).map(|_| if rng.random_bool(0.5) { half } else { -half }).collect();
        let f = SpikeTarget::new(d0, n, labels).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..100_000 {
            let x: Vec<f64> = (0..d0).map(|_| rng.random()).collect();
            // Half the pairs are close, to probe the slopes inside a bump.
            let scale = if rng.random_bool(0.5) { 1e-3 } else { 1.0 };
            let y: Vec<f64> =
                x.iter().map(|xi| (xi + scale * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)).collect();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist > 0.0 {
                worst = worst.max((f.eval(&x) - f.eval(&y)).abs() / dist);
            }
        }
        assert!(worst <= 1.0 + 1e-6, "d0 = {d0}: {worst}");
    }
}

proptest! {
    #[test]
    fn lipschitz_log_matches_exact(b in 1u64..40, l in 1u64..12) {
        let v = lipschitz_constant(&BigRational::from_integer(b.into()), l).unwrap();
        prop_assert!(v.is_consistent(1e-9));
        prop_assert_eq!(v.exact, Some(BigUint::from(2 * b).pow(l as u32)));
    }

    #[test]
    fn wrl_is_consistent(num in 1u64..20, den in 1u64..4, l in 1u64..4, d0 in 1u64..6, dl in 1u64..6) {
        let eps = BigRational::new(num.into(), den.into());
        let v = wrl_hidden_dim(&eps, l, d0, dl).unwrap();
        prop_assert!(v.is_consistent(1e-9));
    }
}
