use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use densecap_cli::{checks, config};
use densecap_core::bounds::{
    compression_hidden_dim, d0_threshold, lipschitz_constant, non_universality_check, parse_rational, vc_lower_bound,
    wrl_hidden_dim, BoundValue,
};
use densecap_core::compress::{compress, CompressOptions, Target};
use densecap_core::computational::{induce_kernel, validate_computational};
use densecap_core::cutnorm::{cut_norm, signal_cut_norm, CutMethod, DEFAULT_EXACT_CAP, DEFAULT_RESTARTS};
use densecap_core::io::{read_kernel, read_network, read_signal, write_computational, write_network, SIGNAL_HEADER};
use densecap_core::layers::LayerStructure;
use densecap_core::net::DenseNetwork;
use densecap_core::propagation::check_equivalence;
use densecap_core::regularity::CutOracle;
use densecap_train::data::default_mnist_dir;
use densecap_train::sweep::{summarize, sweep, write_csv};
use densecap_train::train::{train, DataSpec, Mode, TrainConfig};
use rand::Rng;

/// Dense networks as computational kernels: induction, cut norms,
/// compression, capacity bounds and the saturation experiment.
#[derive(Parser)]
#[command(name = "densecap", version, propagate_version = true)]
struct Cli {
    /// TOML file supplying flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random dense network.
    GenNet(GenNetArgs),
    /// Write the computational kernel of a network file.
    Induce(InduceArgs),
    /// Check the computational-kernel conditions of a kernel file.
    Validate(ValidateArgs),
    /// Compare network, kernel and graph forward passes.
    EquivCheck(EquivArgs),
    /// Cut norm of a kernel or signal file.
    Cutnorm(CutnormArgs),
    /// Compress a network through weak regularity.
    Compress(CompressArgs),
    /// Evaluate a capacity formula.
    Bounds(BoundsArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Train a grid of widths, modes and seeds; writes CSV.
    Sweep(SweepArgs),
    /// Run the invariant suites and print a pass/fail matrix.
    Verify(VerifyArgs),
}

const SUBCOMMANDS: &[&str] =
    &["gen-net", "induce", "validate", "equiv-check", "cutnorm", "compress", "bounds", "train", "sweep", "verify"];

#[derive(Args)]
struct GenNetArgs {
    #[arg(long = "L", default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    d0: usize,
    #[arg(long = "dL", default_value_t = 1)]
    dl: usize,
    /// Hidden width; a multiple of lcm(d0, dL).
    #[arg(long = "d", default_value_t = 4)]
    width: usize,
    /// Parameter bound (default L + 2).
    #[arg(long = "B")]
    bound: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InduceArgs {
    net: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    kernel: PathBuf,
}

#[derive(Args)]
struct EquivArgs {
    /// Network file to check.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Number of random networks (L in 2..=4, d <= 24, B in [L+2, 10]).
    #[arg(long, default_value_t = 0)]
    random: usize,
    /// Random inputs per network.
    #[arg(long, default_value_t = 1)]
    inputs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct CutnormArgs {
    file: PathBuf,
    /// Exhaustive search only; fails above the cap.
    #[arg(long, conflicts_with = "heuristic")]
    exact: bool,
    /// Alternating maximization (lower bound).
    #[arg(long)]
    heuristic: bool,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest reduced dimension searched exhaustively.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    cap: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    Heuristic,
}

#[derive(Args)]
struct CompressArgs {
    net: PathBuf,
    #[arg(long, conflicts_with = "epsilon", required_unless_present = "epsilon")]
    target_d: Option<usize>,
    /// Kernel cut-norm tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = OracleArg::Exact)]
    oracle: OracleArg,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Uniform inputs for the empirical output gap.
    #[arg(long, default_value_t = densecap_core::compress::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compressed network file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Formula {
    Lipschitz,
    WrlHiddenDim,
    CompressionHiddenDim,
    VcLowerBound,
    D0Threshold,
    NonUniversality,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(value_enum)]
    formula: Formula,
    #[arg(long = "B")]
    bound: Option<String>,
    #[arg(long = "L")]
    depth: Option<u64>,
    #[arg(long)]
    d0: Option<u64>,
    #[arg(long = "dL")]
    dl: Option<u64>,
    /// Accuracy, e.g. `1/8` or `0.125`.
    #[arg(long)]
    eps: Option<String>,
    /// Constant of the VC-dimension bound `c W^2`.
    #[arg(long, default_value = "1")]
    c: String,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    MnistSubset,
    Spike,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    /// Dense clamp is `[-c / fan_in, c / fan_in]`.
    #[arg(long)]
    clamp_numerator: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = DatasetArg::Mnist)]
    dataset: DatasetArg,
    #[arg(long, default_value_t = 20_000)]
    subset_size: usize,
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    #[arg(long, default_value_t = 2)]
    spike_d0: usize,
    #[arg(long, default_value_t = 4)]
    spike_grid: usize,
    #[arg(long, default_value_t = 4000)]
    spike_samples: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Keep MNIST pixels in [0, 1] instead of standardizing them.
    #[arg(long)]
    no_standardize: bool,
    /// MNIST directory (default: $DENSECAP_DATA, then data/mnist).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl TrainFlags {
    fn config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let dataset = match self.dataset {
            DatasetArg::Mnist => DataSpec::Mnist,
            DatasetArg::MnistSubset => DataSpec::MnistSubset { size: self.subset_size, subset_seed: self.subset_seed },
            DatasetArg::Spike => DataSpec::Spike {
                d0: self.spike_d0,
                grid: self.spike_grid,
                samples: self.spike_samples,
                data_seed: self.data_seed,
            },
        };
        let mode = match &self.mode {
            Some(m) => m.parse()?,
            None => d.mode,
        };
        let config = TrainConfig {
            width: self.width.unwrap_or(d.width),
            mode,
            clamp_numerator: self.clamp_numerator.unwrap_or(d.clamp_numerator),
            lr: self.lr.unwrap_or(d.lr),
            batch: self.batch.unwrap_or(d.batch),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            dataset,
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            adam_eps: self.adam_eps.unwrap_or(d.adam_eps),
            standardize: !self.no_standardize,
        };
        config.validate()?;
        Ok(config)
    }

    fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(default_mnist_dir)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Print the full metrics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_delimiter = ',', default_value = "16,128,512")]
    widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "standard,dense")]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    seeds: Vec<u64>,
    /// CSV file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Fewer instances per suite.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_net(a: GenNetArgs) -> Result<ExitCode> {
    let shape = LayerStructure::new(a.depth, a.d0, a.dl, a.width)?;
    let bound = a.bound.unwrap_or((a.depth + 2) as f64);
    let net = DenseNetwork::random(&mut checks::rng(a.seed), shape, bound)?;
    write_or_print(a.out.as_deref(), &write_network(&net))?;
    Ok(ExitCode::SUCCESS)
}

fn induce(a: InduceArgs) -> Result<ExitCode> {
    let net = read_network(&read(&a.net)?).with_context(|| format!("{}", a.net.display()))?;
    write_or_print(a.out.as_deref(), &write_computational(&induce_kernel(&net)?))?;
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let file = read_kernel(&read(&a.kernel)?).with_context(|| format!("{}", a.kernel.display()))?;
    let Some((layers, bound)) = file.layers else {
        bail!("{} has no layer structure (L = 0 in its header)", a.kernel.display());
    };
    let diag = validate_computational(&file.kernel, &layers, bound);
    println!("kernel: n = {}, L = {}, d = {}, B = {bound}", file.kernel.len(), layers.depth(), layers.hidden_dim());
    println!("{diag}");
    Ok(if diag.is_valid() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn equiv_check(a: EquivArgs) -> Result<ExitCode> {
    let mut rng = checks::rng(a.seed);
    let mut nets = Vec::new();
    if let Some(p) = &a.net {
        nets.push(read_network(&read(p)?).with_context(|| format!("{}", p.display()))?);
    }
    nets.extend((0..a.random).map(|_| checks::random_net(&mut rng, 2..=4, 24)));
    if nets.is_empty() {
        bail!("nothing to check: give --net FILE and/or --random N");
    }
    let (mut worst, mut bias, mut runs) = (0.0f64, 0.0f64, 0);
    for net in &nets {
        for _ in 0..a.inputs.max(1) {
            let x: Vec<f64> = (0..net.shape().input_dim()).map(|_| rng.random::<f64>()).collect();
            let r = check_equivalence(net, &x)?;
            worst = worst.max(r.max_discrepancy);
            bias = bias.max(r.bias_deviation);
            runs += 1;
        }
    }
    let ok = worst <= a.tol;
    println!("networks: {}, inputs: {runs}", nets.len());
    println!("max discrepancy: {worst:.3e} (tol {:.0e}) {}", a.tol, if ok { "PASS" } else { "FAIL" });
    println!("max bias deviation: {bias:.3e}");
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cutnorm(a: CutnormArgs) -> Result<ExitCode> {
    let text = read(&a.file)?;
    if text.trim_start().starts_with(SIGNAL_HEADER) {
        let f = read_signal(&text).with_context(|| format!("{}", a.file.display()))?;
        let cut = signal_cut_norm(&f);
        if a.json {
            println!("{}", serde_json::to_string_pretty(&cut)?);
        } else {
            println!("cut norm: {} (exact)", cut.value);
            println!("parts: {:?}", cut.parts);
        }
        return Ok(ExitCode::SUCCESS);
    }
    let file = read_kernel(&text).with_context(|| format!("{}", a.file.display()))?;
    let method = if a.exact {
        CutMethod::Exact { cap: a.cap }
    } else if a.heuristic {
        CutMethod::Heuristic { restarts: a.restarts, seed: a.seed }
    } else {
        CutMethod::Certified { cap: a.cap }
    };
    let est = cut_norm(&file.kernel, method)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&est)?);
    } else {
        println!("cut norm: {} ({:?})", est.value, est.kind);
        if let Some(w) = &est.witness {
            println!("rows: {:?}", w.rows);
            println!("cols: {:?}", w.cols);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn compress_cmd(a: CompressArgs) -> Result<ExitCode> {
    let net = read_network(&read(&a.net)?).with_context(|| format!("{}", a.net.display()))?;
    let target = match (a.target_d, a.epsilon) {
        (Some(d), _) => Target::Width(d),
        (None, Some(e)) => Target::Epsilon(e),
        (None, None) => bail!("give --target-d or --epsilon"),
    };
    let mut opts = CompressOptions::new(target);
    opts.oracle = match a.oracle {
        OracleArg::Exact => CutOracle::default(),
        OracleArg::Heuristic => CutOracle::Heuristic { restarts: a.restarts, seed: a.seed },
    };
    opts.samples = a.samples;
    opts.seed = a.seed;
    let c = compress(&net, &opts)?;
    let r = &c.report;
    println!("hidden width: {} -> {}", r.original_hidden_dim, r.compressed_hidden_dim);
    println!("delta_hat: {:.6e} ({:?}), lower {:.6e}", r.delta_hat, r.delta_hat_kind, r.delta_lower);
    println!("theoretical bound: {:.6e} = {:.6e} * delta_hat", r.theoretical_bound, r.chain_factor);
    println!("empirical gap: {:.6e} over {} inputs (seed {})", r.empirical_gap, r.samples, r.seed);
    if !r.failed_conditions.is_empty() {
        println!("failed conditions: {}", r.failed_conditions.join(", "));
    }
    if let Some(p) = &a.out {
        fs::write(p, write_network(&c.network)).with_context(|| format!("cannot write {}", p.display()))?;
    }
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(r)?).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().with_context(|| format!("this formula needs --{flag}"))
}

fn print_bound(v: &BoundValue, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(v)?);
        return Ok(());
    }
    match &v.exact {
        Some(x) if x.bits() <= 4096 => println!("{x}"),
        _ => println!("2^{}", v.log2),
    }
    println!("log2 {}", v.log2);
    Ok(())
}

fn bounds(a: BoundsArgs) -> Result<ExitCode> {
    let q = |s: &str| parse_rational(s);
    let c = q(&a.c)?;
    let value = match a.formula {
        Formula::Lipschitz => lipschitz_constant(&q(&need(&a.bound, "B")?)?, need(&a.depth, "L")?)?,
        Formula::WrlHiddenDim => {
            wrl_hidden_dim(&q(&need(&a.eps, "eps")?)?, need(&a.depth, "L")?, need(&a.d0, "d0")?, need(&a.dl, "dL")?)?
        }
        Formula::CompressionHiddenDim => compression_hidden_dim(
            &q(&need(&a.eps, "eps")?)?,
            &q(&need(&a.bound, "B")?)?,
            need(&a.depth, "L")?,
            need(&a.d0, "d0")?,
            need(&a.dl, "dL")?,
        )?,
        Formula::VcLowerBound => vc_lower_bound(&q(&need(&a.eps, "eps")?)?, need(&a.d0, "d0")?, &c)?,
        Formula::D0Threshold => d0_threshold(&q(&need(&a.bound, "B")?)?, need(&a.depth, "L")?, need(&a.dl, "dL")?, &c)?,
        Formula::NonUniversality => {
            let r = non_universality_check(
                &q(&need(&a.bound, "B")?)?,
                need(&a.depth, "L")?,
                need(&a.dl, "dL")?,
                need(&a.d0, "d0")?,
                &c,
            )?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("gap holds: {}", r.gap_holds);
                println!("log2 compressed parameters: {}", r.log2_compressed_params);
                println!("log2 required parameters: {}", r.log2_required_params);
                println!("log2 margin: {}", r.margin);
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    print_bound(&value, a.json)?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let config = a.flags.config()?;
    let split = config.load_data(&a.flags.data_dir())?;
    let m = train(&config, &split)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&m)?);
    } else {
        for e in &m.epochs {
            println!("epoch {:>3}  loss {:.5}  train acc {:.2}", e.epoch + 1, e.loss, e.train_acc);
        }
        println!(
            "width {} {} seed {}: train acc {:.2}, test acc {:.2}, final loss {:.5}, {:.1}s",
            config.width, config.mode, m.seed, m.train_acc, m.test_acc, m.final_loss, m.wall_s
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(a: SweepArgs) -> Result<ExitCode> {
    let config = a.flags.config()?;
    let modes: Vec<Mode> = a.modes.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    let split = config.load_data(&a.flags.data_dir())?;
    let rows = sweep(&config, &a.widths, &modes, &a.seeds, &split);
    match &a.out {
        Some(p) => write_csv(&rows, fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?)?,
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    let mut err = std::io::stderr().lock();
    for c in summarize(&rows) {
        writeln!(
            err,
            "width {:>5} {:<8} runs {}  train {:.2} +- {:.2}  test {:.2} +- {:.2}",
            c.width, c.mode, c.runs, c.train_mean, c.train_std, c.test_mean, c.test_std
        )?;
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        writeln!(err, "{failed} of {} runs failed", rows.len())?;
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let s = a.seed;
    let (nets, kernels, signals, pairs, fk) = if a.quick { (40, 30, 200, 10, 4) } else { (200, 100, 1000, 50, 20) };
    let (equiv, bias) = checks::three_path_equivalence(nets, s, Duration::from_secs(30));
    let rows = [
        ("net-core", checks::round_trips(if a.quick { 20 } else { 100 }, s)),
        ("propagation", equiv),
        ("propagation", bias),
        ("cutnorm", checks::cut_norm_exactness(kernels, signals, s)),
        ("cutnorm", checks::lipschitz_consequence(pairs, s)),
        ("regularity", checks::regularity_trace(fk, 64, 0.5, s)),
        ("regularity", checks::compression_chain((2, 2, 2, 24), 5.0, 8, 1000, s, Duration::from_secs(300))),
        ("bounds", checks::bound_spot_values()),
        ("experiments", checks::gradient_correctness(8, 3)),
        ("experiments", checks::dense_clamp(s)),
    ];
    let mut all = true;
    for (module, c) in &rows {
        all &= c.passed;
        println!("{module:<12} {c}");
    }
    println!("{}", if all { "all suites passed" } else { "some suites FAILED" });
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global().context("cannot size the thread pool")?;
    }
    match cli.command {
        Command::GenNet(a) => gen_net(a),
        Command::Induce(a) => induce(a),
        Command::Validate(a) => validate(a),
        Command::EquivCheck(a) => equiv_check(a),
        Command::Cutnorm(a) => cutnorm(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Bounds(a) => bounds(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Verify(a) => verify(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect(), SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let mut command = Cli::command().args_override_self(true);
    for name in SUBCOMMANDS {
        command = command.mut_subcommand(*name, |c| c.args_override_self(true));
    }
    let cli = match command.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
