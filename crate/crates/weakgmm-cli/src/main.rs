//! Command-line driver for the `weakgmm` library.
//!
//! Five subcommands cover the full workflow: `gen-specs` writes a synthetic
//! calibration file, `simulate` runs the Monte Carlo study over it, `table`
//! folds the per-spec results into a binned summary, `prior` exports a prior
//! density for inspection, and `verify` runs the numerical check suite.
//!
//! Exit codes: 0 on success, 1 when a verification check or an estimator
//! fails at runtime, 2 when an input (flag, calibration file, results CSV)
//! is malformed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use weakgmm::numeric::linspace;
use weakgmm::{
    aggregate, flat_prior, generate_records, invariant_prior, load_calibration,
    parse_reports_csv, reports_to_csv, run_spec, save_calibration, Binning, Error, EstimatorId,
    FunctionalId, SimConfig, SyntheticConfig,
};
use weakgmm::verify::run_verification;

#[derive(Parser)]
#[command(
    name = "weakgmm",
    version,
    about = "Monte Carlo study of weak-instrument estimators in the Gaussian limit experiment",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo study over a calibration file; writes one CSV row
    /// per (spec, estimator, functional).
    Simulate(SimulateArgs),
    /// Aggregate a results CSV from `simulate` into a binned table.
    Table(TableArgs),
    /// Run the numerical verification suite; prints a JSON report to stdout
    /// and a readable summary to stderr.
    Verify(VerifyArgs),
    /// Export a prior density over the parameter grid of one design.
    Prior(PriorArgs),
    /// Generate a synthetic calibration file with a target mean effective F.
    GenSpecs(GenSpecsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Calibration JSON listing the designs to simulate.
    #[arg(long, value_name = "PATH")]
    specs: PathBuf,
    /// Comma-separated estimators to run (default: all seven).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    estimators: Vec<EstimatorId>,
    /// Comma-separated functionals to report (default: identity).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    functionals: Vec<FunctionalId>,
    /// Replications per design.
    #[arg(long, value_name = "N", default_value_t = 10_000)]
    reps: usize,
    /// Noise draws averaged by each bagged estimate.
    #[arg(long, value_name = "B", default_value_t = 400)]
    bag_draws: usize,
    /// Master seed; every draw of the run is derived from it.
    #[arg(long, value_name = "S", default_value_t = 42)]
    seed: u64,
    /// Grid points for objective minimization and posterior means.
    #[arg(long, value_name = "G", default_value_t = 2_001)]
    grid: usize,
    /// Output CSV path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Results CSV produced by `simulate`.
    #[arg(long, value_name = "PATH")]
    results: PathBuf,
    /// Binning dimension: `f` (mean effective F) or `k` (instrument count).
    #[arg(long, value_name = "{f,k}")]
    bin: Binning,
    /// Also write the table as CSV to this path; the readable rendering
    /// always goes to stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Also write the JSON report to this path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PriorArgs {
    /// Calibration JSON holding the design.
    #[arg(long, value_name = "PATH")]
    specs: PathBuf,
    /// Design id within the calibration file.
    #[arg(long, value_name = "ID")]
    id: String,
    /// Which prior to export.
    #[arg(long, value_enum, default_value_t = PriorChoice::Inv)]
    prior: PriorChoice,
    /// Number of grid points.
    #[arg(long, value_name = "G", default_value_t = 2_001)]
    grid: usize,
    /// Output CSV path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorChoice {
    /// Uniform density over the parameter interval.
    Flat,
    /// Square root of the invariant information.
    Inv,
}

#[derive(Args)]
struct GenSpecsArgs {
    /// Instruments per design (1 through 4).
    #[arg(long, value_name = "INT", default_value_t = 1)]
    k: usize,
    /// Target mean effective F for the batch.
    #[arg(long, value_name = "REAL")]
    target_f: f64,
    /// Number of designs to generate.
    #[arg(long, value_name = "INT")]
    n: usize,
    /// Draw heteroskedastic moment covariances instead of homoskedastic ones.
    #[arg(
        long,
        value_name = "BOOL",
        default_value_t = false,
        num_args = 0..=1,
        default_missing_value = "true"
    )]
    hetero: bool,
    /// Generator seed.
    #[arg(long, value_name = "S", default_value_t = 42)]
    seed: u64,
    /// Output JSON path (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// What went wrong, reduced to the exit-code contract.
enum Failure {
    /// Malformed input: bad file, bad field, bad flag value. Exit 2.
    Input(String),
    /// A computation failed on well-formed input. Exit 1.
    Run(String),
    /// Verification checks failed; the report was already printed. Exit 1.
    Checks,
}

/// Sorts a library error into the exit-code contract: anything traceable to
/// user-supplied input exits 2, runtime numerical failures exit 1.
fn classify(e: Error) -> Failure {
    match &e {
        Error::Calibration { .. }
        | Error::MalformedCsv { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidDesign { .. }
        | Error::InvalidModel(_)
        | Error::InvalidPrior(_)
        | Error::InvalidFunctional(_)
        | Error::Io(_) => Failure::Input(e.to_string()),
        Error::SingularKernel { .. }
        | Error::DegenerateObjective(_)
        | Error::EstimatorFailure { .. } => Failure::Run(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Table(args) => run_table(args),
        Command::Verify(args) => run_verify(args),
        Command::Prior(args) => run_prior(args),
        Command::GenSpecs(args) => run_gen_specs(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Writes `text` to `out`, or to stdout when no path was given.
fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let loaded = load_calibration(&args.specs).map_err(classify)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    if loaded.designs.is_empty() {
        return Err(Failure::Input(format!(
            "{}: no usable designs",
            args.specs.display()
        )));
    }
    let estimators = if args.estimators.is_empty() {
        EstimatorId::ALL.to_vec()
    } else {
        args.estimators
    };
    let functionals = if args.functionals.is_empty() {
        vec![FunctionalId::Identity]
    } else {
        args.functionals
    };
    let config = SimConfig {
        replications: args.reps,
        bag_draws: args.bag_draws,
        master_seed: args.seed,
        grid_points: args.grid,
        estimators,
        functionals,
    };
    let mut reports = Vec::new();
    for design in &loaded.designs {
        reports.extend(run_spec(design, &config).map_err(classify)?);
    }
    emit(&reports_to_csv(&reports), args.out.as_deref())
}

fn run_table(args: TableArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.results)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.results.display())))?;
    let source = args.results.display().to_string();
    let reports = parse_reports_csv(&text, &source).map_err(classify)?;
    let table = aggregate(&reports, args.bin).map_err(classify)?;
    print!("{}", table.render());
    if let Some(path) = args.out.as_deref() {
        fs::write(path, table.to_csv())
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<(), Failure> {
    let report = run_verification();
    eprint!("{}", report.render());
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    println!("{}", json.trim_end());
    if let Some(path) = args.out.as_deref() {
        fs::write(path, &json)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn run_prior(args: PriorArgs) -> Result<(), Failure> {
    if args.grid < 3 {
        return Err(Failure::Input(format!(
            "grid must have at least 3 points, got {}",
            args.grid
        )));
    }
    let loaded = load_calibration(&args.specs).map_err(classify)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let design = loaded
        .designs
        .iter()
        .find(|d| d.id() == args.id)
        .ok_or_else(|| {
            let known: Vec<&str> = loaded.designs.iter().map(|d| d.id()).collect();
            Failure::Input(format!(
                "design `{}` not found in {}; available: {}",
                args.id,
                args.specs.display(),
                if known.is_empty() {
                    "(none)".to_string()
                } else {
                    known.join(", ")
                }
            ))
        })?;
    let prior = match args.prior {
        PriorChoice::Flat => flat_prior(design, args.grid),
        PriorChoice::Inv => invariant_prior(design, args.grid),
    };
    let (lo, hi) = design.theta_bounds();
    let thetas = linspace(lo, hi, args.grid);
    let step = (hi - lo) / (args.grid - 1) as f64;
    let total: f64 = prior.weights().iter().sum();
    // Stored weights are trapezoid masses; dividing each by its node mass
    // recovers a density normalized to unit integral over the interval.
    let mut csv = String::from("theta,density\n");
    for (j, (&theta, &weight)) in thetas.iter().zip(prior.weights()).enumerate() {
        let mass = if j == 0 || j + 1 == args.grid {
            0.5 * step
        } else {
            step
        };
        let density = weight / (total * mass);
        csv.push_str(&format!("{theta},{density}\n"));
    }
    emit(&csv, args.out.as_deref())
}

fn run_gen_specs(args: GenSpecsArgs) -> Result<(), Failure> {
    let config = SyntheticConfig {
        k: args.k,
        target_f: args.target_f,
        n: args.n,
        hetero: args.hetero,
        seed: args.seed,
    };
    let records = generate_records(&config).map_err(classify)?;
    match args.out.as_deref() {
        Some(path) => save_calibration(&records, path).map_err(classify),
        None => {
            let mut text = serde_json::to_string_pretty(&records).expect("records serialize");
            text.push('\n');
            print!("{text}");
            Ok(())
        }
    }
}
