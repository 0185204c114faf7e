//! Command-line front end for the fairness laboratory.
//!
//! Subcommands cover the closed-form theory (verification battery and α
//! scans), the standalone class-weight allocator, single training runs from
//! a JSON config, and the paired experiment suites. Every artifact is a
//! schema-stable CSV written atomically, so rerunning a command with the
//! same inputs reproduces the same bytes.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime or
//! numerical failure, 3 verification failure. Panics are caught and mapped
//! to exit 2 — the process never aborts to the shell.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dafa_lab::dafa::{allocate, clip, ClassProbMatrix, WeightScheme};
use dafa_lab::experiment::{
    fairness_report, fairness_summary, margin_report, run_distance_sweep, run_fairness_arms,
    run_margin_asymmetry, sweep_report, ExperimentConfig, FairnessPreset, NearPairPreset,
};
use dafa_lab::io::{sig, write_atomic};
use dafa_lab::theory::{alpha_grid, scan_alpha, write_scan_csv, BinaryTaskSpec};
use dafa_lab::training::{train, DafaMode, TrainConfig, TrainMode};
use dafa_lab::verify::theory_battery;
use dafa_lab::{Error, Result};

/// Name of the environment variable supplying the default master seed.
const SEED_ENV: &str = "DAFA_LAB_SEED";

/// Print to stdout, ignoring broken-pipe errors (e.g. piping into `head`)
/// instead of panicking like the std print macros.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Non-newline counterpart of [`outln!`].
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

fn main() {
    let code = match std::panic::catch_unwind(run) {
        Ok(code) => code,
        Err(_) => {
            // The default panic hook has already printed the message.
            eprintln!("error: internal panic; please report this as a bug");
            2
        }
    };
    std::process::exit(code);
}

fn run() -> i32 {
    let _ = env_logger::try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Map an error to the exit-code contract: bad inputs and configuration
/// are 1, failures while doing the work are 2.
fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidMatrix { .. }
        | Error::InvalidSigma { .. }
        | Error::InvalidOrder { .. }
        | Error::InvalidMargins { .. }
        | Error::InvalidGaps { .. }
        | Error::EmptyArchitecture { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonPositiveMargin { .. } => 1,
        Error::Io { .. }
        | Error::EmptyClass { .. }
        | Error::ZeroBaseline { .. }
        | Error::DegenerateInput { .. }
        | Error::ZeroEmbedding { .. }
        | Error::DegenerateRow { .. } => 2,
    }
}

/// The master seed from the environment, if set and parseable.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::config(format!("{SEED_ENV} must be a non-negative integer, got {text:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Error::config(format!("{SEED_ENV} is not valid UTF-8")))
        }
    }
}

/// Resolve one seed: explicit flag, then the environment, then `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(fallback))
}

/// Resolve a seed list: explicit flag, then the environment (as a single
/// seed), then `fallback`.
fn resolve_seeds(flag: Option<Vec<u64>>, fallback: &[u64]) -> Result<Vec<u64>> {
    if let Some(seeds) = flag {
        if seeds.is_empty() {
            return Err(Error::config("--seeds needs at least one value"));
        }
        return Ok(seeds);
    }
    Ok(match env_seed()? {
        Some(seed) => vec![seed],
        None => fallback.to_vec(),
    })
}

#[derive(Parser)]
#[command(
    name = "dafa-lab",
    version,
    about = "Desk-scale laboratory for distance-aware fair adversarial training",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form analysis: verification battery and parameter scans.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Class-weight allocation from a probability matrix file.
    #[command(subcommand)]
    Dafa(DafaCommand),
    /// Train one run per seed from a JSON config file.
    Train(TrainArgs),
    /// Paired experiment suites with CSV reports.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Run the closed-form-vs-oracle verification battery.
    Verify(VerifyArgs),
    /// Evaluate the closed forms over an ascending α grid and write a CSV.
    Scan(ScanArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Monte Carlo samples per estimate (values below 10000 are raised).
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Master seed [default: DAFA_LAB_SEED or 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Absolute agreement tolerance (widened to 3 standard errors when
    /// Monte Carlo noise exceeds it).
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    tol: f64,
}

#[derive(Args)]
struct ScanArgs {
    /// First α value (≥ 1).
    #[arg(long, allow_negative_numbers = true)]
    alpha_min: f64,
    /// Last α value.
    #[arg(long, allow_negative_numbers = true)]
    alpha_max: f64,
    /// Grid step (a step larger than the range yields a single row).
    #[arg(long, allow_negative_numbers = true)]
    alpha_step: f64,
    /// Input dimension d.
    #[arg(long)]
    d: usize,
    /// Mean scale η.
    #[arg(long, allow_negative_numbers = true)]
    eta: f64,
    /// Standard deviation σ of the harder class (≥ 1).
    #[arg(long, allow_negative_numbers = true)]
    sigma: f64,
    /// Adversarial radius ε.
    #[arg(long, allow_negative_numbers = true)]
    eps: f64,
    /// Output CSV path.
    #[arg(long, default_value = "alpha_scan.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DafaCommand {
    /// Compute per-class weights from a C×C probability matrix CSV.
    Weights(WeightsArgs),
}

/// Which pairwise transfer rule the allocator uses.
#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Transfer the hard class's similarity toward the easy one.
    Basic,
    /// Similarity scaled by the easy class's easiness (the default rule).
    Scaled,
    /// Transfer the easy class's similarity toward the hard one.
    EasyRef,
}

impl VariantArg {
    fn scheme(self) -> WeightScheme {
        match self {
            VariantArg::Basic => WeightScheme::Basic,
            VariantArg::Scaled => WeightScheme::DifficultyScaled,
            VariantArg::EasyRef => WeightScheme::EasyReference,
        }
    }
}

#[derive(Args)]
struct WeightsArgs {
    /// Headerless C×C CSV of row-stochastic class probabilities.
    #[arg(long)]
    probs: PathBuf,
    /// Allocation strength λ (0 leaves every weight at 1).
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda: f64,
    /// Pairwise transfer rule.
    #[arg(long, value_enum, default_value_t = VariantArg::Scaled)]
    variant: VariantArg,
    /// Optional lower clip bound applied after allocation.
    #[arg(long, allow_negative_numbers = true)]
    clip: Option<f64>,
    /// Output CSV path.
    #[arg(long, default_value = "weights.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config (sections data/train/attack_train/attack_eval/output).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Paired baseline-vs-weighted runs on the four-class fairness task.
    Fairness(FairnessArgs),
    /// Per-class training radii on a symmetric two-class task.
    MarginAsymmetry(MarginArgs),
    /// Baseline runs across task geometries, correlating feature-space
    /// distance with robust accuracy.
    DistanceSweep(SweepArgs),
}

#[derive(Args)]
struct FairnessArgs {
    /// Optional JSON config; must use the "fairness" data preset. Without
    /// it the calibrated default protocol runs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seeds, one paired run per seed [default: config seeds,
    /// DAFA_LAB_SEED, or 1,2,3]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Maximum concurrent training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory [default: config output dir or "out"]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MarginArgs {
    /// Distance between the two class means.
    #[arg(long, default_value_t = 2.5, allow_negative_numbers = true)]
    gap: f64,
    /// Base adversarial radius ε; the grid trains at (ε,ε), (2ε,ε), (ε,2ε)
    /// and always evaluates at ε.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    epsilon: f64,
    /// Training epochs per run.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Draws per class in each split.
    #[arg(long, default_value_t = 1000)]
    samples_per_class: usize,
    /// Training objectives to cover.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::Trades, ModeArg::Pgd])]
    modes: Vec<ModeArg>,
    /// Master seeds [default: DAFA_LAB_SEED or 1,2,3]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Maximum concurrent training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Training objective flag.
#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Trades,
    Pgd,
}

impl ModeArg {
    fn mode(self) -> TrainMode {
        match self {
            ModeArg::Trades => TrainMode::Trades,
            ModeArg::Pgd => TrainMode::Pgd,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Near-gap values to sweep (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = [1.6, 2.4, 3.2, 4.0])]
    gaps: Vec<f64>,
    /// Master seeds [default: DAFA_LAB_SEED or 1]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Maximum concurrent training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Theory(TheoryCommand::Verify(args)) => cmd_theory_verify(args),
        Command::Theory(TheoryCommand::Scan(args)) => cmd_theory_scan(args),
        Command::Dafa(DafaCommand::Weights(args)) => cmd_weights(args),
        Command::Train(args) => cmd_train(args),
        Command::Experiment(ExperimentCommand::Fairness(args)) => cmd_fairness(args),
        Command::Experiment(ExperimentCommand::MarginAsymmetry(args)) => cmd_margin(args),
        Command::Experiment(ExperimentCommand::DistanceSweep(args)) => cmd_sweep(args),
    }
}

fn cmd_theory_verify(args: VerifyArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed, 0)?;
    let report = theory_battery(args.samples, seed, args.tol)?;
    outln!(
        "closed-form verification battery ({} Monte Carlo samples, seed {seed}, tolerance {})",
        report.samples, args.tol
    );
    out!("{}", report.render());
    Ok(if report.all_passed() { 0 } else { 3 })
}

fn cmd_theory_scan(args: ScanArgs) -> Result<i32> {
    let grid = alpha_grid(args.alpha_min, args.alpha_max, args.alpha_step)?;
    let template = BinaryTaskSpec::new(args.d, args.eta, args.sigma, args.alpha_min, args.eps)?;
    let rows = scan_alpha(&template, &grid)?;
    write_scan_csv(&rows, &args.out)?;
    outln!(
        "wrote {} ({} row(s), alpha {} to {})",
        args.out.display(),
        rows.len(),
        sig(rows[0].alpha, 4),
        sig(rows[rows.len() - 1].alpha, 4)
    );
    Ok(0)
}

fn cmd_weights(args: WeightsArgs) -> Result<i32> {
    let matrix = ClassProbMatrix::read_csv(&args.probs)?;
    let mut weights = allocate(&matrix, args.lambda, 1.0, args.variant.scheme())?;
    if let Some(k) = args.clip {
        weights = clip(&weights, k)?;
    }
    weights.write_csv(&args.out)?;
    for (class, w) in weights.w.iter().enumerate() {
        outln!("class {class}: {}", sig(*w, 9));
    }
    let sum: f64 = weights.w.iter().sum();
    outln!(
        "sum {}{}",
        sig(sum, 9),
        if weights.clipped { " (clipped; conservation does not apply)" } else { "" }
    );
    outln!("wrote {}", args.out.display());
    Ok(0)
}

/// Artifact-label text of a weighting mode.
fn mode_label(mode: DafaMode) -> &'static str {
    match mode {
        DafaMode::Off => "off",
        DafaMode::LossOnly => "loss_only",
        DafaMode::MarginOnly => "margin_only",
        DafaMode::Both => "both",
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seeds) = args.seeds {
        if seeds.is_empty() {
            return Err(Error::config("--seeds needs at least one value"));
        }
        config.seeds = seeds;
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let label = mode_label(config.train.dafa_mode);
    for &seed in &config.seeds {
        let train_config = config.train_config(seed)?;
        let (_, train_set, test_set) = config.generate(seed)?;
        let (params, history, weights) = train(&train_config, &train_set, &test_set)?;
        let run = dafa_lab::experiment::ArmRun {
            label: label.to_string(),
            seed,
            params,
            history,
            weights,
        };
        let m = run.final_metrics();
        outln!(
            "{label} seed {seed}: clean avg {:6.2} worst {:6.2}  robust avg {:6.2} worst {:6.2}",
            m.avg_clean, m.worst_clean, m.avg_robust, m.worst_robust
        );
        config.write_run_artifacts(&out_dir, &run)?;
    }
    outln!("wrote artifacts for {} run(s) to {}", config.seeds.len(), out_dir.display());
    Ok(0)
}

fn cmd_fairness(args: FairnessArgs) -> Result<i32> {
    let (preset, template, config_seeds, config_out) = match &args.config {
        Some(path) => {
            let config = ExperimentConfig::load(path)?;
            let preset = config.fairness_preset().ok_or_else(|| {
                Error::config("experiment fairness requires `data.preset = \"fairness\"`")
            })?;
            let template = config.train_config(config.seeds[0])?;
            (preset, template, Some(config.seeds.clone()), Some(PathBuf::from(&config.output.dir)))
        }
        None => {
            let preset = FairnessPreset::default();
            let mut template = TrainConfig::standard(vec![preset.dim, 64, 64, 4], 40, 0.5, 0);
            template.eval_per_class = Some(25);
            (preset, template, None, None)
        }
    };
    let fallback = config_seeds.unwrap_or_else(|| vec![1, 2, 3]);
    let seeds = resolve_seeds(args.seeds, &fallback)?;
    let out_dir = args.out.or(config_out).unwrap_or_else(|| PathBuf::from("out"));

    let arms = [("baseline", DafaMode::Off), ("dafa", DafaMode::Both)];
    let runs = run_fairness_arms(&preset, &template, &arms, &seeds, args.jobs)?;
    let (baseline, treatment) = runs.split_at(seeds.len());
    let report = fairness_report(baseline, &[treatment])?;
    let report_path = out_dir.join("fairness_report.csv");
    write_atomic(&report_path, &report)?;
    out!("{}", fairness_summary(baseline, &[treatment]));
    outln!("wrote {}", report_path.display());
    Ok(0)
}

fn cmd_margin(args: MarginArgs) -> Result<i32> {
    let seeds = resolve_seeds(args.seeds, &[1, 2, 3])?;
    let preset = NearPairPreset {
        gap: args.gap,
        samples_per_class: args.samples_per_class,
        ..NearPairPreset::default()
    };
    let mut template =
        TrainConfig::standard(vec![preset.dim, 64, 64, 2], args.epochs, args.epsilon, 0);
    template.eval_per_class = Some(50);
    let modes: Vec<TrainMode> = args.modes.iter().map(|m| m.mode()).collect();
    let runs = run_margin_asymmetry(&preset, &template, &modes, &seeds, args.jobs)?;
    let report = margin_report(&runs);
    let report_path = args.out.join("margin_report.csv");
    write_atomic(&report_path, &report)?;
    print_margin_means(&report);
    outln!("wrote {}", report_path.display());
    Ok(0)
}

/// Echo the mean rows of a margin report as terminal text.
fn print_margin_means(report: &str) {
    for line in report.lines().filter(|l| l.contains(",mean,")) {
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
        outln!(
            "{:<6} {:<10} class {}: clean {:6.2}  robust {:6.2}",
            cells[0],
            cells[1],
            cells[3],
            parse(cells[4]),
            parse(cells[5])
        );
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let seeds = resolve_seeds(args.seeds, &[1])?;
    let base = FairnessPreset::default();
    let mut template = TrainConfig::standard(vec![base.dim, 64, 64, 4], 40, 0.5, 0);
    template.eval_per_class = Some(25);
    let runs = run_distance_sweep(&base, &args.gaps, &template, &seeds, args.jobs)?;
    let report = sweep_report(&runs);
    let report_path = args.out.join("distance_sweep.csv");
    write_atomic(&report_path, &report)?;
    for run in &runs {
        outln!(
            "near_gap {:4.2} seed {}: distance-robustness correlation {:+.3}",
            run.near_gap, run.seed, run.pearson
        );
    }
    outln!("wrote {}", report_path.display());
    Ok(0)
}
