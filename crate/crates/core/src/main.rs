use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_fp::acceptance::Suite;
use levy_fp::config::{parse_assignment, read_config_file, Mode, RunConfig};
use levy_fp::run::run;
use levy_fp::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

/// Solvers for the Lévy–Fokker–Planck equation and its fractional diffusion limit.
#[derive(Parser, Debug)]
#[command(name = "levy-fp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides in `key=value` form, applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sup-norm error of the assembled fractional Laplacian against quadrature.
    #[command(name = "operator_test", alias = "operator-test")]
    OperatorTest(RunArgs),
    /// Spatially homogeneous relaxation to the numerical equilibrium.
    Homogeneous(RunArgs),
    /// One run of the asymptotic-preserving scheme.
    Ap(RunArgs),
    /// IMEX reference solver for the kinetic equation.
    #[command(name = "imex_reference", alias = "imex-reference")]
    ImexReference(RunArgs),
    /// Fractional heat equation solved in Fourier space.
    Limit(RunArgs),
    /// AP runs over a list of eps with an ap_error summary.
    #[command(name = "eps_sweep", alias = "eps-sweep")]
    EpsSweep(RunArgs),
    /// Time-step halving ladder with the e_dt table.
    #[command(name = "dt_refinement", alias = "dt-refinement")]
    DtRefinement(RunArgs),
    /// Runs the acceptance suite; exits with 4 if any criterion fails.
    #[command(name = "self_test", alias = "self-test")]
    SelfTest,
}

fn load(mode: Mode, args: &RunArgs) -> Result<RunConfig, Error> {
    let mut pairs = match &args.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    for o in &args.overrides {
        pairs.push(parse_assignment(o)?);
    }
    if let Some(out) = &args.out {
        pairs.push(("output_dir".into(), out.display().to_string()));
    }
    RunConfig::from_assignments(Some(mode), &pairs)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::DensityMismatch { .. }
        | Error::GridMismatch(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn self_test() -> ExitCode {
    let outcomes = Suite::new().run_all();
    for o in &outcomes {
        println!("{}", o.line());
        for d in &o.details {
            println!("    {d}");
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed} of {} criteria passed", outcomes.len());
    if passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ACCEPTANCE)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::OperatorTest(a) => (Mode::OperatorTest, a),
        Command::Homogeneous(a) => (Mode::Homogeneous, a),
        Command::Ap(a) => (Mode::Ap, a),
        Command::ImexReference(a) => (Mode::ImexReference, a),
        Command::Limit(a) => (Mode::Limit, a),
        Command::EpsSweep(a) => (Mode::EpsSweep, a),
        Command::DtRefinement(a) => (Mode::DtRefinement, a),
        Command::SelfTest => return self_test(),
    };
    let result = load(mode, args).and_then(|cfg| run(&cfg));
    match result {
        Ok(report) => {
            for note in &report.notes {
                println!("{note}");
            }
            for file in &report.files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
