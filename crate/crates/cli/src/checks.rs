//! Invariant checks shared by `densecap verify` and the acceptance suite.
//!
//! Each check draws its own instances from a seeded generator and returns a
//! [`Check`] with a one-line detail.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use densecap_core::bounds::{compression_hidden_dim, d0_threshold, lipschitz_constant, parse_rational, wrl_hidden_dim, Log2};
use densecap_core::compress::{compress, CompressOptions, Target};
use densecap_core::computational::{extract_network, induce_kernel, input_signal, validate_computational};
use densecap_core::cutnorm::{comp_cut_distance_upper, kernel_cut_norm_exact, signal_cut_norm, CutMethod, PermutationSearch};
use densecap_core::io::{read_kernel, read_network, write_computational, write_network};
use densecap_core::kernel::{StepKernel, StepSignal};
use densecap_core::layers::{LayerStructure, Role};
use densecap_core::net::{param_count, DenseNetwork};
use densecap_core::oracle;
use densecap_core::partition::Partition;
use densecap_core::propagation::{check_equivalence, mpnn_forward};
use densecap_core::regularity::{iteration_cap, weak_regularity, CutOracle, Termination};
use densecap_train::mlp::gradient_check;
use densecap_train::sweep::{summarize, sweep, CellSummary};
use densecap_train::train::{train_observed, DataSpec, Mode, TrainConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {} ({:.1}s)", self.name, self.detail, self.seconds)
    }
}

fn finish(name: &str, start: Instant, result: Result<(bool, String), String>) -> Check {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { name: name.to_string(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() <= limit
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Random shape with depth in `depths`, `d0, dL <= 3` and `d <= max_d`.
pub fn random_shape(rng: &mut ChaCha8Rng, depths: std::ops::RangeInclusive<usize>, max_d: usize) -> LayerStructure {
    loop {
        let depth = rng.random_range(depths.clone());
        let (d0, dl) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let m = lcm(d0, dl);
        if m <= max_d {
            let d = m * rng.random_range(1..=max_d / m);
            return LayerStructure::new(depth, d0, dl, d).expect("valid shape");
        }
    }
}

/// Random network on a random shape with `B` uniform in `[L + 2, 10]`.
pub fn random_net(rng: &mut ChaCha8Rng, depths: std::ops::RangeInclusive<usize>, max_d: usize) -> DenseNetwork {
    let s = random_shape(rng, depths, max_d);
    let bound = rng.random_range((s.depth() + 2) as f64..=10.0);
    DenseNetwork::random(rng, s, bound).expect("valid network")
}

fn random_input(rng: &mut ChaCha8Rng, d0: usize) -> Vec<f64> {
    (0..d0).map(|_| rng.random_range(0.0..=1.0)).collect()
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Partition {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut m: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = m[..n - 1].iter().sum();
    m[n - 1] = 1.0 - head;
    Partition::intervals(m).expect("positive measures summing to 1")
}

fn random_kernel(rng: &mut ChaCha8Rng, n: usize, equal: bool) -> StepKernel {
    let p = if equal { Partition::equipartition(n).expect("n >= 1") } else { random_partition(rng, n) };
    StepKernel::new(p, Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..=1.0))).expect("shape")
}

fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> StepSignal {
    let p = random_partition(rng, n);
    StepSignal::new(p, Array1::from_shape_fn(n, |_| rng.random_range(-1.0..=1.0))).expect("shape")
}

/// Network, kernel and graph forward passes agree to `1e-9`, and the bias
/// atoms hold 1 at every layer to `1e-12`. Returns both checks.
pub fn three_path_equivalence(nets: usize, seed: u64, limit: Duration) -> (Check, Check) {
    let start = Instant::now();
    let mut rng = rng(seed);
    let (mut worst, mut bias) = (0.0f64, 0.0f64);
    let mut error = None;
    for _ in 0..nets {
        let net = random_net(&mut rng, 2..=4, 24);
        let x = random_input(&mut rng, net.shape().input_dim());
        match check_equivalence(&net, &x) {
            Ok(r) => {
                worst = worst.max(r.max_discrepancy);
                bias = bias.max(r.bias_deviation);
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let fast = within(start, limit);
    let first = match &error {
        Some(e) => Err(e.clone()),
        None => Ok((
            worst <= 1e-9 && fast,
            format!("{nets} nets, max discrepancy {worst:.3e} (tol 1e-9), {:.1}s of {}s", start.elapsed().as_secs_f64(), limit.as_secs()),
        )),
    };
    let second = match &error {
        Some(e) => Err(e.clone()),
        None => Ok((bias <= 1e-12, format!("{nets} nets, max |bias - 1| {bias:.3e} (tol 1e-12)"))),
    };
    (finish("three-path equivalence", start, first), finish("bias stationarity", start, second))
}

/// Exact kernel cut norm against full enumeration, and the signal sandwich.
pub fn cut_norm_exactness(kernels: usize, signals: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = rng(seed);
    let result = (|| {
        let mut worst = 0.0f64;
        for i in 0..kernels {
            let n = rng.random_range(1..=10);
            let k = random_kernel(&mut rng, n, i % 2 == 0);
            let fast = kernel_cut_norm_exact(&k, 24).map_err(|e| e.to_string())?;
            worst = worst.max((fast.value - oracle::kernel_cut_norm(&k)).abs());
        }
        let mut violations = 0;
        for _ in 0..signals {
            let n = rng.random_range(1..=16);
            let f = random_signal(&mut rng, n);
            let (c, l1) = (signal_cut_norm(&f).value, f.l1_norm());
            if !(0.5 * l1 <= c + 1e-15 && c <= l1 + 1e-15) {
                violations += 1;
            }
        }
        Ok((
            worst <= 1e-12 && violations == 0,
            format!("{kernels} kernels max |fast - enumeration| {worst:.3e}; {signals} signals, {violations} sandwich violations"),
        ))
    })();
    finish("cut-norm exactness", start, result)
}

fn comparable_pair(rng: &mut ChaCha8Rng) -> (DenseNetwork, DenseNetwork) {
    loop {
        let depth = rng.random_range(2..=3);
        let (d0, dl) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let m = lcm(d0, dl);
        let d = m * rng.random_range(1..=6 / m);
        let perms = (1..=d).product::<usize>().pow(depth as u32 - 1);
        if perms > 1000 {
            continue;
        }
        let s = LayerStructure::new(depth, d0, dl, d).expect("valid shape");
        let bound = rng.random_range((depth + 2) as f64..=10.0);
        let a = DenseNetwork::random(rng, s, bound).expect("valid network");
        let b = DenseNetwork::random(rng, s, bound).expect("valid network");
        return (a, b);
    }
}

/// `||1_{U^(L)} (Phi(K, f) - Phi(J, f))|| <= (2B)^L delta` with `delta` the
/// exhaustive-permutation upper bound on the computational cut distance.
pub fn lipschitz_consequence(pairs: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = rng(seed);
    let result = (|| {
        let (mut violations, mut tightest) = (0, 0.0f64);
        for _ in 0..pairs {
            let (a, b) = comparable_pair(&mut rng);
            let s = a.shape();
            let e = |err: densecap_core::Error| err.to_string();
            let (k, j) = (induce_kernel(&a).map_err(e)?, induce_kernel(&b).map_err(e)?);
            let dist = comp_cut_distance_upper(&k, &j, PermutationSearch::Exhaustive, CutMethod::Exact { cap: 24 })
                .map_err(e)?;
            let f = input_signal(&s, &random_input(&mut rng, s.input_dim())).map_err(e)?;
            let out = |k: &StepKernel| mpnn_forward(k, &f, a.bound(), s.depth());
            let diff = out(k.kernel())
                .map_err(e)?
                .sub(&out(j.kernel()).map_err(e)?)
                .map_err(e)?
                .masked(|p| s.role(p) == Role::Layer(s.depth()));
            let lhs = signal_cut_norm(&diff).value;
            let rhs = (2.0 * a.bound()).powi(s.depth() as i32) * dist.value;
            if lhs > rhs {
                violations += 1;
            }
            if rhs > 0.0 {
                tightest = tightest.max(lhs / rhs);
            }
        }
        Ok((violations == 0, format!("{pairs} pairs, {violations} violations, largest lhs/rhs {tightest:.3e}")))
    })();
    finish("output Lipschitz bound", start, result)
}

/// Compresses a random `(L, d0, dL, d, B)` network to width `target` and
/// checks the chain bound and the four structural conditions.
pub fn compression_chain(
    shape: (usize, usize, usize, usize),
    bound: f64,
    target: usize,
    samples: usize,
    seed: u64,
    limit: Duration,
) -> Check {
    let start = Instant::now();
    let result = (|| {
        let (depth, d0, dl, d) = shape;
        let s = LayerStructure::new(depth, d0, dl, d).map_err(|e| e.to_string())?;
        let net = DenseNetwork::random(&mut rng(seed), s, bound).map_err(|e| e.to_string())?;
        let mut opts = CompressOptions::new(Target::Width(target));
        opts.samples = samples;
        opts.seed = seed;
        let c = compress(&net, &opts).map_err(|e| e.to_string())?;
        let r = &c.report;
        let diag = validate_computational(c.kernel.kernel(), c.kernel.layers(), bound);
        let passed = r.empirical_gap <= r.theoretical_bound && diag.is_valid() && within(start, limit);
        Ok((
            passed,
            format!(
                "d {d} -> {}, gap {:.3e} <= {:.3e} = {:.3e} * delta {:.3e} ({:?}); conditions {}; {:.1}s of {}s",
                r.compressed_hidden_dim,
                r.empirical_gap,
                r.theoretical_bound,
                r.chain_factor,
                r.delta_hat,
                r.delta_hat_kind,
                if diag.is_valid() { "ok".to_string() } else { format!("{:?}", diag.failed()) },
                start.elapsed().as_secs_f64(),
                limit.as_secs()
            ),
        ))
    })();
    finish("compression chain", start, result)
}

/// Energy monotone, iterations within `ceil(4 / eps^2)`, and certified final
/// error below `eps` on random `n`-part kernels.
pub fn regularity_trace(kernels: usize, n: usize, eps: f64, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = rng(seed);
    let result = (|| {
        let (mut bad_energy, mut over_cap, mut uncertified, mut worst) = (0, 0, 0, 0.0f64);
        for _ in 0..kernels {
            let k = random_kernel(&mut rng, n, true);
            let t = weak_regularity(&k, eps, CutOracle::default()).map_err(|e| e.to_string())?;
            if t.steps.windows(2).any(|w| w[1].energy < w[0].energy - 1e-12) {
                bad_energy += 1;
            }
            if t.steps.len() > iteration_cap(eps) + 1 {
                over_cap += 1;
            }
            let (bound, _) = t.final_bound();
            worst = worst.max(bound);
            if t.termination != Termination::Certified || bound >= eps {
                uncertified += 1;
            }
        }
        Ok((
            bad_energy + over_cap + uncertified == 0,
            format!(
                "{kernels} kernels on {n} parts at eps {eps}: {bad_energy} energy drops, {over_cap} over cap {}, {uncertified} uncertified, worst final {worst:.3}",
                iteration_cap(eps)
            ),
        ))
    })();
    finish("weak regularity trace", start, result)
}

/// The four headline spot values, compared exactly.
pub fn bound_spot_values() -> Check {
    let start = Instant::now();
    let result = (|| {
        let q = |s: &str| parse_rational(s).map_err(|e| e.to_string());
        let e = |err: densecap_core::Error| err.to_string();
        let lip = lipschitz_constant(&q("4")?, 2).map_err(e)?;
        let wrl = wrl_hidden_dim(&q("4")?, 2, 1, 1).map_err(e)?;
        let comp = compression_hidden_dim(&q("1")?, &q("4")?, 2, 1, 1).map_err(e)?;
        let thr = d0_threshold(&q("4")?, 2, 1, &q("1")?).map_err(e)?;
        let is = |v: &densecap_core::bounds::BoundValue, x: u64| v.exact.as_ref().is_some_and(|e| *e == x.into());
        let ok = is(&lip, 64) && is(&wrl, 16) && comp.log2 == Log2::integer(2_097_164) && is(&thr, 18_253_611_637);
        Ok((ok, format!("lipschitz {lip}; wrl {wrl}; compression 2^{}; threshold {thr}", comp.log2)))
    })();
    finish("bound calculators", start, result)
}

/// Backprop against central differences on width-`width` networks.
pub fn gradient_correctness(width: usize, seeds: u64) -> Check {
    let start = Instant::now();
    let worst = (0..seeds).map(|s| gradient_check(width, s)).fold(0.0, f64::max);
    finish(
        "gradient check",
        start,
        Ok((worst <= 1e-5, format!("width {width}, {seeds} seeds, max relative error {worst:.3e} (tol 1e-5)"))),
    )
}

/// Codec and induction round trips plus the parameter-count identity.
pub fn round_trips(nets: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = rng(seed);
    let result = (|| {
        let mut failures = Vec::new();
        for i in 0..nets {
            let net = random_net(&mut rng, 2..=4, 12);
            let s = net.shape();
            let e = |err: densecap_core::Error| err.to_string();
            if read_network(&write_network(&net)).map_err(e)? != net {
                failures.push(format!("net {i}: network codec"));
            }
            let k = induce_kernel(&net).map_err(e)?;
            if !validate_computational(k.kernel(), k.layers(), net.bound()).is_valid() {
                failures.push(format!("net {i}: induced kernel invalid"));
            }
            if extract_network(&k).map_err(e)? != net {
                failures.push(format!("net {i}: extraction"));
            }
            let file = read_kernel(&write_computational(&k)).map_err(e)?;
            if file.computational().map_err(e)?.kernel() != k.kernel() {
                failures.push(format!("net {i}: kernel codec"));
            }
            let d = s.hidden_dim() as u128;
            if param_count(s) != net.num_parameters() as u128 + d * d {
                failures.push(format!("net {i}: parameter count"));
            }
        }
        let detail = if failures.is_empty() { format!("{nets} nets") } else { failures.join("; ") };
        Ok((failures.is_empty(), detail))
    })();
    finish("codec and induction round trips", start, result)
}

/// Dense-mode clamp after every step on a small spike regression task.
pub fn dense_clamp(seed: u64) -> Check {
    let start = Instant::now();
    let spec = DataSpec::Spike { d0: 2, grid: 3, samples: 600, data_seed: seed };
    let config = TrainConfig { width: 24, mode: Mode::Dense, epochs: 3, seed, dataset: spec, ..Default::default() };
    let result = config.load_data(Path::new(".")).and_then(|split| {
        let mut worst = 0.0f64;
        train_observed(&config, &split, |net| worst = worst.max(net.max_scaled_weight()))?;
        Ok(worst)
    });
    let result = result
        .map(|w| (w <= 10.0 + 1e-12, format!("max |W| * fan_in after each step {w:.6} (tol 10 + 1e-12)")))
        .map_err(|e| e.to_string());
    finish("dense clamp", start, result)
}

#[derive(Clone, Debug)]
pub struct SaturationPlan {
    pub subset: Option<usize>,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub limit: Duration,
}

fn cell(cells: &[CellSummary], width: usize, mode: Mode) -> Option<&CellSummary> {
    cells.iter().find(|c| c.width == width && c.mode == mode)
}

/// Standard vs dense training over widths and seeds on MNIST.
pub fn saturation(mnist_dir: &Path, plan: &SaturationPlan) -> Check {
    let start = Instant::now();
    let dataset = match plan.subset {
        Some(size) => DataSpec::MnistSubset { size, subset_seed: 0 },
        None => DataSpec::Mnist,
    };
    let config = TrainConfig { epochs: plan.epochs, dataset, ..Default::default() };
    let result = config.load_data(mnist_dir).map_err(|e| e.to_string()).and_then(|split| {
        let rows = sweep(&config, &plan.widths, &[Mode::Standard, Mode::Dense], &plan.seeds, &split);
        if let Some(r) = rows.iter().find(|r| r.error.is_some()) {
            return Err(format!("width {} {} seed {}: {}", r.width, r.mode, r.seed, r.error.as_deref().unwrap_or("")));
        }
        let cells = summarize(&rows);
        let mut failures = Vec::new();
        let mut table = Vec::new();
        for &w in &plan.widths {
            let (Some(s), Some(d)) = (cell(&cells, w, Mode::Standard), cell(&cells, w, Mode::Dense)) else {
                return Err(format!("missing cells at width {w}"));
            };
            table.push(format!(
                "w{w} std {:.1}/{:.1} dense {:.1}/{:.1}",
                s.train_mean, s.test_mean, d.train_mean, d.test_mean
            ));
            if w >= 128 && s.train_mean < 96.0 {
                failures.push(format!("standard train {:.2} < 96 at width {w}", s.train_mean));
            }
            if w >= 16 && d.train_mean > 93.0 {
                failures.push(format!("dense train {:.2} > 93 at width {w}", d.train_mean));
            }
            if w >= 128 && s.test_mean - d.test_mean < 3.0 {
                failures.push(format!("test gap {:.2} < 3 at width {w}", s.test_mean - d.test_mean));
            }
        }
        if let (Some(a), Some(b)) = (cell(&cells, 512, Mode::Dense), cell(&cells, 2048, Mode::Dense)) {
            if (b.train_mean - a.train_mean).abs() >= 1.5 {
                failures.push(format!("dense 512 -> 2048 change {:.2} >= 1.5", b.train_mean - a.train_mean));
            }
        }
        if !within(start, plan.limit) {
            failures.push(format!("runtime over {}s", plan.limit.as_secs()));
        }
        let mut detail = format!("train/test means: {}", table.join(", "));
        if !failures.is_empty() {
            detail = format!("{detail}; {}", failures.join("; "));
        }
        Ok((failures.is_empty(), detail))
    });
    finish("saturation experiment", start, result)
}
