use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cvkerr_core::decomposition::SchemeKind;
use cvkerr_core::harness::{run_experiment, ConfigOverrides, ExperimentConfig, ExperimentReport, EXPERIMENTS};
use cvkerr_core::teleport::ProtocolMode;

#[derive(Parser)]
#[command(name = "cvkerr", version, about = "Kerr gate decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json, state CSVs and transcripts.
    Run(RunArgs),
    /// List the registered experiments.
    List,
}

#[derive(Parser)]
struct RunArgs {
    /// Experiment name (see `cvkerr list`).
    #[arg(long)]
    experiment: Option<String>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Lattice points (power of two, at least 256).
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    First,
    Separated,
    Q2,
    Q2Inverse,
    Q2Reversed,
    Q2InvReversed,
    Third,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::First => SchemeKind::FirstOrder,
            SchemeArg::Separated => SchemeKind::Separated,
            SchemeArg::Q2 => SchemeKind::Q2,
            SchemeArg::Q2Inverse => SchemeKind::Q2Inverse,
            SchemeArg::Q2Reversed => SchemeKind::Q2Reversed,
            SchemeArg::Q2InvReversed => SchemeKind::Q2InvReversed,
            SchemeArg::Third => SchemeKind::ThirdOrder,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Postselect,
    Deterministic,
}

impl From<ModeArg> for ProtocolMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Direct => ProtocolMode::Direct,
            ModeArg::Postselect => ProtocolMode::Postselect,
            ModeArg::Deterministic => ProtocolMode::Deterministic,
        }
    }
}

fn config_from(args: RunArgs) -> Result<ExperimentConfig, String> {
    let overrides = ConfigOverrides {
        experiment: args.experiment,
        dim: args.dim,
        grid_points: args.grid,
        t: args.t,
        scheme: args.scheme.map(Into::into),
        mode: args.mode.map(Into::into),
        repetitions: args.reps,
        seed: args.seed,
        out_dir: args.out,
        jobs: args.jobs,
    };
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => {
            let name = overrides.experiment.as_deref().ok_or("--experiment or --config is required")?;
            ExperimentConfig::new(name)
        }
    };
    config.apply_overrides(&overrides);
    Ok(config)
}

fn print_report(report: &ExperimentReport) {
    println!("{}: log10 error {:.4} ({:.2} s)", report.experiment, report.log10_epsilon, report.runtime_seconds);
    for cell in &report.cells {
        println!("  cell {}: log10 error {:.4}", cell.label, cell.log10_epsilon);
    }
    for check in &report.checks {
        let status = if check.pass { "PASS" } else { "FAIL" };
        match (check.reference, check.tolerance) {
            (Some(r), Some(tol)) => println!("  {status} {}: {:.4} (reference {r} ± {tol})", check.name, check.value),
            (Some(r), None) => println!("  {status} {}: {:.4e} (bound {r})", check.name, check.value),
            _ => println!("  {status} {}", check.name),
        }
    }
    for (name, value) in &report.diagnostics {
        println!("  {name}: {value:.6}");
    }
    println!("  files: {}", report.files.join(", "));
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for (name, about) in EXPERIMENTS {
                println!("{name:<16} {about}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => {
            let config = match config_from(args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_experiment(&config) {
                Ok(report) => {
                    print_report(&report);
                    if report.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
