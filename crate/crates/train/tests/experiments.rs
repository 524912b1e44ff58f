use std::path::PathBuf;

use densecap_core::bounds::SpikeTarget;
use densecap_train::data::{load_mnist, make_spike_dataset, spike_split, Split, Targets, DATA_ENV};
use densecap_train::sweep::{sweep, write_csv, SweepRow};
use densecap_train::train::{train, train_observed, DataSpec, Mode, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mnist_dir() -> PathBuf {
    let dir = std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    assert!(dir.join("train-images-idx3-ubyte").exists(), "MNIST not found in {}; set {DATA_ENV}", dir.display());
    dir
}

fn subset(size: usize) -> (TrainConfig, Split) {
    let config = TrainConfig { dataset: DataSpec::MnistSubset { size, subset_seed: 3 }, ..Default::default() };
    let split = config.load_data(&mnist_dir()).unwrap();
    (config, split)
}

#[test]
fn official_mnist_shapes() {
    let split = load_mnist(&mnist_dir()).unwrap();
    assert_eq!(split.train.inputs.dim(), (60_000, 784));
    assert_eq!(split.test.inputs.dim(), (10_000, 784));
    assert!(split.train.inputs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    let Targets::Classes { labels, classes } = &split.train.targets else { panic!("classification") };
    assert_eq!((labels.len(), *classes), (60_000, 10));
}

#[test]
fn subset_is_stable_across_loads() {
    let a = subset(1000).1;
    let b = subset(1000).1;
    assert_eq!(a.train, b.train);
}

#[test]
fn untrained_accuracy_is_chance() {
    let (config, split) = subset(5000);
    for seed in 0..3 {
        let m = train(&TrainConfig { epochs: 0, seed, ..config.clone() }, &split).unwrap();
        assert!((m.test_acc - 10.0).abs() <= 5.0, "seed {seed}: {}", m.test_acc);
        assert!(m.epochs.is_empty());
    }
}

#[test]
fn dense_mode_bounds_weights_after_every_step() {
    let (config, split) = subset(3000);
    let config = TrainConfig { width: 48, mode: Mode::Dense, epochs: 2, ..config };
    let mut steps = 0;
    let mut worst = 0.0f64;
    train_observed(&config, &split, |net| {
        steps += 1;
        worst = worst.max(net.max_scaled_weight());
    })
    .unwrap();
    assert_eq!(steps, 2 * 3000usize.div_ceil(128));
    assert!(worst <= 10.0 + 1e-12, "{worst}");
}

#[test]
fn standard_mode_is_unconstrained() {
    let (config, split) = subset(3000);
    let (_, net) = train_observed(&TrainConfig { width: 48, epochs: 2, ..config }, &split, |_| {}).unwrap();
    assert!(net.max_scaled_weight() > 10.0);
}

#[test]
fn runs_are_deterministic() {
    let (config, split) = subset(2000);
    let config = TrainConfig { width: 32, epochs: 2, seed: 5, ..config };
    let mut a = train(&config, &split).unwrap();
    let mut b = train(&config, &split).unwrap();
    a.wall_s = 0.0;
    b.wall_s = 0.0;
    assert_eq!(a, b);
    let c = train(&TrainConfig { seed: 6, ..config }, &split).unwrap();
    assert_ne!(a.epochs, c.epochs);
}

fn csv_without_time(rows: &[SweepRow]) -> String {
    let rows: Vec<SweepRow> = rows.iter().cloned().map(|r| SweepRow { wall_s: 0.0, ..r }).collect();
    let mut out = Vec::new();
    write_csv(&rows, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn sweep_has_one_row_per_cell_and_repeats() {
    let (config, split) = subset(1000);
    let config = TrainConfig { epochs: 1, ..config };
    let modes = [Mode::Dense, Mode::Standard];
    let rows = sweep(&config, &[128, 16], &modes, &[1, 0], &split);
    assert_eq!(rows.len(), 8);
    let keys: Vec<_> = rows.iter().map(|r| (r.width, r.mode, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(rows.iter().all(|r| r.error.is_none() && (0.0..=100.0).contains(&r.test_acc)));
    let again = sweep(&config, &[16, 128], &modes, &[0, 1], &split);
    assert_eq!(csv_without_time(&rows), csv_without_time(&again));
}

#[test]
fn sweep_records_failures_and_continues() {
    let (config, split) = subset(500);
    let config = TrainConfig { epochs: 1, ..config };
    let rows = sweep(&config, &[0, 8], &[Mode::Standard], &[0], &split);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].error.as_deref().unwrap().contains("width"));
    assert!(rows[1].error.is_none());
}

#[test]
fn width_128_matches_reference_accuracies() {
    let config = TrainConfig { dataset: DataSpec::Mnist, ..Default::default() };
    let split = config.load_data(&mnist_dir()).unwrap();
    let standard = train(&config, &split).unwrap();
    let dense = train(&TrainConfig { mode: Mode::Dense, ..config }, &split).unwrap();
    assert!((standard.train_acc - 98.9).abs() <= 3.0, "{}", standard.train_acc);
    assert!((standard.test_acc - 97.3).abs() <= 3.0, "{}", standard.test_acc);
    assert!((dense.train_acc - 90.8).abs() <= 3.0, "{}", dense.train_acc);
    assert!((dense.test_acc - 91.1).abs() <= 3.0, "{}", dense.test_acc);
}

#[test]
fn spike_regression_learns() {
    let spec = DataSpec::Spike { d0: 1, grid: 4, samples: 4000, data_seed: 2 };
    let config = TrainConfig { width: 64, epochs: 40, lr: 1e-2, dataset: spec, ..Default::default() };
    let split = config.load_data(std::path::Path::new("unused")).unwrap();
    let m = train(&config, &split).unwrap();
    assert!(m.final_loss < m.epochs[0].loss / 4.0, "{} vs {}", m.final_loss, m.epochs[0].loss);
    assert!(m.test_acc > 90.0, "{}", m.test_acc);
}

#[test]
fn spike_targets_follow_labels() {
    let zero = SpikeTarget::new(2, 3, vec![0.0; 9]).unwrap();
    let split = spike_split(&zero, &mut ChaCha8Rng::seed_from_u64(1), 500).unwrap();
    assert_eq!(split.train.targets, Targets::Values(vec![0.0; 500]));
    for seed in 0..10 {
        let s = make_spike_dataset(2, 3, seed, 500).unwrap();
        let Targets::Values(v) = &s.split.train.targets else { panic!("regression") };
        assert!(v.iter().all(|&t| (0.0..=1.0 / 6.0).contains(&t)));
        assert!(s.target.labels().iter().all(|&y| y == 0.0 || y == 1.0 / 6.0));
        for (m, &y) in s.target.labels().iter().enumerate() {
            assert_eq!(s.target.eval(&s.target.grid_point(m)), y);
        }
    }
}
