use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ramify_cli::run::{run_experiment, CommandKind, RunOptions};
use ramify_cli::verify::{verify_suite, CheckSelection};
use ramify_cli::{AppError, ExperimentSpec};

/// Branching-process experiments: analytic solves, particle simulations,
/// and identity verification on finite configuration spaces.
#[derive(Parser)]
#[command(name = "ramify", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's outputs.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict exports to one format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads for replica-parallel runs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the branching evolution equation for H_t(phi).
    SolveH(CommonArgs),
    /// Solve the perturbed linear equation for Q_t(f).
    SolveQ(CommonArgs),
    /// Solve a cumulant: V_t(f) for offspring laws, N_t(f) for mechanisms.
    Cumulant(CommonArgs),
    /// Simulate the branching particle system and estimate a functional.
    Simulate(CommonArgs),
    /// Run named verification checks against the analytic references.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated subset of: mass, iterate_bound, laplace, moment,
        /// branching, extinction, cumulant, composition.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
    },
    /// Discrete branching over measure-valued particles.
    Compose(CommonArgs),
}

fn options(common: &CommonArgs) -> RunOptions {
    RunOptions {
        seed: common.seed,
        out_dir: common.out.clone(),
        format: common.format.clone(),
        workers: common.workers,
    }
}

fn dispatch(cmd: &Command) -> Result<(), AppError> {
    match cmd {
        Command::SolveH(c) => run_and_report(c, CommandKind::SolveH),
        Command::SolveQ(c) => run_and_report(c, CommandKind::SolveQ),
        Command::Cumulant(c) => run_and_report(c, CommandKind::Cumulant),
        Command::Simulate(c) => run_and_report(c, CommandKind::Simulate),
        Command::Compose(c) => run_and_report(c, CommandKind::Compose),
        Command::Verify { common, checks } => {
            let spec = ExperimentSpec::load(&common.config)?;
            let opts = options(common);
            let selection: Vec<CheckSelection> = if checks.is_empty() {
                CheckSelection::defaults_for(&spec)
            } else {
                checks
                    .iter()
                    .map(|s| s.parse().map_err(AppError::Validation))
                    .collect::<Result<_, _>>()?
            };
            let out_dir = opts
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(&spec.outputs.directory));
            let (outcomes, files) = verify_suite(&spec, &selection, &opts, &out_dir)?;
            for o in &outcomes {
                println!("{}", o.human_line());
            }
            for f in &files {
                eprintln!("wrote {}", f.display());
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed > 0 {
                return Err(AppError::VerifyFailed(failed));
            }
            Ok(())
        }
    }
}

fn run_and_report(common: &CommonArgs, kind: CommandKind) -> Result<(), AppError> {
    let spec = ExperimentSpec::load(&common.config)?;
    let bundle = run_experiment(&spec, kind, &options(common))?;
    println!("{}", bundle.summary);
    for f in &bundle.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
