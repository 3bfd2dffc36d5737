use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rrie::ensembles::{read_matrix, write_matrix};
use rrie::harness::{
    check::run_checks, default_sigma_indices, emit_plot_data, mmse_curve, run_experiment, run_overlap_experiment,
    ExperimentConfig, MmseCurveConfig, NoiseSpec, PlotFormat, PriorSpec,
};
use rrie::rie::{denoise, DenoiseOptions};
use rrie::{Error, Mat};

#[derive(Parser)]
#[command(
    name = "rrie",
    version,
    about = "Rotational invariant denoising of rectangular matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise a stored observation matrix.
    Denoise(DenoiseArgs),
    /// Monte-Carlo MSE sweep over SNR values from a JSON config.
    Experiment(ConfigArgs),
    /// Empirical and predicted singular vector overlaps for a fixed signal.
    Overlap(ConfigArgs),
    /// Gaussian-noise MMSE and mutual information curve.
    MmseCurve(MmseArgs),
    /// Run the invariant suites.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Uniform02,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Observation matrix (CSV, or the binary format).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    snr: f64,
    #[arg(long, value_enum)]
    noise: NoiseArg,
    /// Aspect ratio N/M; must match the input when given.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output file; a `.bin` extension selects the binary format.
    #[arg(long)]
    output: PathBuf,
    /// Kernel width for the density estimate.
    #[arg(long)]
    eta: Option<f64>,
    /// Clamp negative shrunk values to zero.
    #[arg(long)]
    clamp: bool,
    /// Drop each value's own kernel term when estimating at it.
    #[arg(long)]
    leave_one_out: bool,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output prefix (experiment) or file (overlap); overrides the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MmseArgs {
    /// `gaussian`, `sparse:<p>` or `uniform:<lo>:<hi>`.
    #[arg(long)]
    prior: String,
    #[arg(long)]
    lambda_max: f64,
    #[arg(long)]
    points: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Defaults to `n`.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long)]
    eta: Option<f64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn transpose(a: &Mat<f64>) -> Mat<f64> {
    a.transpose().to_owned()
}

fn run_denoise(args: DenoiseArgs) -> Outcome {
    if !(args.snr.is_finite() && args.snr > 0.0) {
        return Err(Failure::Validation(format!("--snr must be > 0, got {}", args.snr)));
    }
    let y: Mat<f64> = read_matrix(&args.input)?;
    // The estimator works with N <= M; a tall input is denoised as its transpose.
    let tall = y.nrows() > y.ncols();
    let y = if tall { transpose(&y) } else { y };
    let alpha = y.nrows() as f64 / y.ncols() as f64;
    if let Some(a) = args.alpha {
        if (a - alpha).abs() > 1e-9 {
            return Err(Failure::Validation(format!(
                "--alpha {a} does not match the input aspect ratio {alpha}"
            )));
        }
    }
    let spec = match args.noise {
        NoiseArg::Gaussian => NoiseSpec::Gaussian,
        NoiseArg::Uniform02 => NoiseSpec::Uniform02,
    };
    let shrinker = spec.shrinker(alpha).ok_or_else(|| {
        Failure::Validation(format!(
            "no closed-form R-transform for {spec:?} noise at alpha = {alpha}"
        ))
    })?;
    let options = DenoiseOptions {
        eta: args.eta,
        leave_one_out: args.leave_one_out,
        clamp: args.clamp,
    };
    let out = denoise(&y, args.snr, &shrinker, &options)?;
    let estimate = if tall { transpose(&out.estimate) } else { out.estimate };
    write_matrix(&estimate, &args.output)?;
    log::info!(
        "wrote {}x{} estimate; {} values at the density floor",
        estimate.nrows(),
        estimate.ncols(),
        out.shrinkage.edge_count()
    );
    Ok(())
}

fn run_experiment_cmd(args: ConfigArgs) -> Outcome {
    let cfg = ExperimentConfig::load(&args.config)?;
    let result = run_experiment(&cfg)?;
    let prefix = args
        .output
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("experiment"));
    let format = if cfg.emit_dat {
        PlotFormat::CsvAndDat
    } else {
        PlotFormat::Csv
    };
    let files = emit_plot_data(&result, &prefix, format)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<9} {:>8} {:>12} {:>12} {:>7}",
        "estimator", "lambda", "mean_mse", "stderr", "trials"
    )?;
    for a in &result.aggregates {
        writeln!(
            out,
            "{:<9} {:>8} {:>12.6} {:>12.6} {:>7}",
            a.estimator.as_str(),
            a.lambda,
            a.mean_mse,
            a.stderr,
            a.trials
        )?;
    }
    for f in files {
        writeln!(out, "wrote {}", f.display())?;
    }
    let failed = result.failed_rows();
    if failed > 0 {
        writeln!(out, "{failed} rows failed and were excluded")?;
    }
    Ok(())
}

fn run_overlap_cmd(args: ConfigArgs) -> Outcome {
    let cfg = ExperimentConfig::load(&args.config)?;
    let indices = cfg
        .sigma_indices
        .clone()
        .unwrap_or_else(|| default_sigma_indices(cfg.n));
    let report = run_overlap_experiment(&cfg, &indices)?;
    let path = args.output.or_else(|| cfg.output_path.clone());
    report.write_csv(open_output(path.as_deref())?)?;
    log::info!(
        "max relative error on the middle 60% of the support: {:.4}",
        report.max_relative_error(0.6)
    );
    Ok(())
}

fn run_mmse_cmd(args: MmseArgs) -> Outcome {
    let prior: PriorSpec = args.prior.parse()?;
    let mut cfg = MmseCurveConfig::new(prior, args.n, args.m.unwrap_or(args.n), args.lambda_max, args.points);
    cfg.master_seed = args.seed;
    cfg.trials = args.trials;
    cfg.eta = args.eta;
    let curve = mmse_curve(&cfg)?;
    curve.write_csv(open_output(args.output.as_deref())?)?;
    Ok(())
}

fn run_check_cmd(args: CheckArgs) -> Outcome {
    let outcomes = run_checks(args.seed);
    let mut out = io::stdout().lock();
    for c in &outcomes {
        writeln!(
            out,
            "{} {:<22} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        )?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("failed suites: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Denoise(a) => run_denoise(a),
        Command::Experiment(a) => run_experiment_cmd(a),
        Command::Overlap(a) => run_overlap_cmd(a),
        Command::MmseCurve(a) => run_mmse_cmd(a),
        Command::Check(a) => run_check_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
