use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use costate_cli::commands::{self, Context, HomotopyArgs, HypervolumeInput};
use costate_cli::config::RunConfig;
use costate_cli::error::CliError;
use costate_core::analysis::DEFAULT_FEASIBILITY_TOL;

/// Costate sampling pipeline for low-thrust CR3BP transfers.
#[derive(Parser)]
#[command(name = "costate", version)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "COSTATE_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Correct the boundary orbits at one α and write their discretizations.
    Orbits {
        #[arg(long)]
        alpha: f64,
    },
    /// Propagate costates and dump the trajectories with their switches.
    Propagate {
        #[arg(long)]
        costate_file: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Propagation time in TU (defaults to the screening horizon).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Screen a costate file at one α.
    Screen {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        alpha: f64,
    },
    /// Run the MCMC homotopy and write the dataset, traces and snapshots.
    Homotopy {
        /// Starting costates (overrides the config).
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Continue from the snapshot in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed stages.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train the conditional diffusion model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Reward-weighted fine-tuning of a trained model.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Draw costates from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        count: usize,
        /// Guidance weight (defaults to the model's configured value).
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Dataset analysis exports.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Subcommand)]
enum Analyze {
    /// Keep records below a constraint-violation tolerance.
    Feasible {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FEASIBILITY_TOL)]
        tol: f64,
    },
    /// Δv and time of flight per record with the Pareto subset marked.
    Pareto {
        #[arg(long)]
        dataset: PathBuf,
        /// Also report the Hamiltonian at the end of each transfer.
        #[arg(long)]
        hamiltonian: bool,
    },
    /// Normalized hypervolume of a dataset or a point file.
    Hypervolume(HypervolumeArgs),
    /// Per-stage summary of iteration traces.
    Traces {
        #[arg(long)]
        traces: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct HypervolumeSource {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// CSV with `dv,tof` columns.
    #[arg(long)]
    points: Option<PathBuf>,
}

#[derive(Args)]
struct HypervolumeArgs {
    #[command(flatten)]
    source: HypervolumeSource,
    /// The point file is already normalized to the unit box.
    #[arg(long, requires = "points")]
    normalized: bool,
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("costate-out"));
    Ok(Context {
        config,
        out_dir,
        config_file: cli.config.clone(),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = context(&cli)?;
    match cli.command {
        Command::Orbits { alpha } => commands::orbits(&ctx, alpha),
        Command::Propagate {
            costate_file,
            alpha,
            duration,
        } => commands::propagate(&ctx, &costate_file, alpha, duration),
        Command::Screen { samples, alpha } => commands::screen(&ctx, &samples, alpha),
        Command::Homotopy {
            initial,
            resume,
            stop_after,
        } => commands::homotopy(
            &ctx,
            &HomotopyArgs {
                initial,
                resume,
                stop_after,
            },
        ),
        Command::Train { dataset } => commands::train_model(&ctx, &dataset),
        Command::Finetune { dataset, model } => commands::finetune_model(&ctx, &dataset, &model),
        Command::Sample {
            model,
            alpha,
            count,
            guidance,
        } => commands::sample_model(&ctx, &model, alpha, count, guidance),
        Command::Analyze(a) => match a {
            Analyze::Feasible { dataset, tol } => commands::analyze_feasible(&ctx, &dataset, tol),
            Analyze::Pareto { dataset, hamiltonian } => commands::analyze_pareto(&ctx, &dataset, hamiltonian),
            Analyze::Hypervolume(h) => {
                let input = match (&h.source.dataset, &h.source.points) {
                    (Some(d), _) => HypervolumeInput::Dataset(d),
                    (None, Some(p)) => HypervolumeInput::Points {
                        path: p,
                        normalized: h.normalized,
                    },
                    (None, None) => unreachable!("clap requires one source"),
                };
                commands::analyze_hypervolume(&ctx, input)
            }
            Analyze::Traces { traces } => commands::analyze_traces(&ctx, &traces).map(|_| ()),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
