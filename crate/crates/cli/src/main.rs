use std::path::PathBuf;
use std::process::ExitCode;

use cenkf_cli::config::ConstraintConfig;
use cenkf_cli::{parse_config, run, Kind, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cenkf", version, about = "Constrained ensemble Kalman filtering and inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic truth and noisy observations.
    Simulate(RunArgs),
    /// Run the ensemble Kalman filter on a measurement file.
    Filter(RunArgs),
    /// Run ensemble Kalman inversion.
    Invert(RunArgs),
    /// Parse and check a configuration file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory in the configuration file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots of the CSV results.
    #[arg(long)]
    plots: bool,
}

fn load(path: &PathBuf) -> Result<RunConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn describe(cfg: &RunConfig) {
    let constraints = match &cfg.constraints {
        ConstraintConfig::State(c) => format!("{} equality and {} inequality rows", c.num_eq(), c.num_in()),
        ConstraintConfig::Parameters(c) => format!("{} equality and {} inequality parameter rows", c.f_u.nrows(), c.g_u.nrows()),
    };
    println!(
        "{}: kind {}, model {}, {} members, variant {:?}, {constraints}, seed {}, output {}",
        cfg.path.display(),
        cfg.kind.name(),
        cfg.model_name(),
        cfg.ensemble.members,
        cfg.ensemble.variant,
        cfg.seed,
        cfg.output.display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::ValidateConfig { config } => {
            return match load(&config) {
                Ok(cfg) => {
                    describe(&cfg);
                    ExitCode::SUCCESS
                }
                Err(code) => code,
            };
        }
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Filter(a) => (Kind::Filter, a),
        Command::Invert(a) => (Kind::Invert, a),
    };
    let mut cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if cfg.kind != kind {
        eprintln!(
            "error: {}: configuration kind is {:?} but the subcommand is {}",
            args.config.display(),
            cfg.kind.name(),
            kind.name()
        );
        return ExitCode::from(2);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = out;
    }
    match run(&cfg, args.plots) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
