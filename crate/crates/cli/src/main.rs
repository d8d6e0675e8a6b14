//! adhesim: rigid-disk dynamics with delayed adhesion, driven by TOML
//! configs. Exit codes: 0 success, 1 validation, 2 solver failure, 3 I/O.

mod config;
mod error;
mod output;
mod plot;
mod studies;

use std::path::PathBuf;
use std::time::Instant;

use adhesim_core::Simulation;
use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "adhesim", version, about = "Rigid disks with delayed adhesion forces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation; writes trajectory, diagnostics, multipliers, summary
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override output.dir from the config
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Age-grid refinement study of the stationary bond density
    DensityStudy {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated age steps
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025])]
        da_list: Vec<f64>,
    },
    /// Delayed runs against the friction limit over a list of epsilon
    LimitCompare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated epsilon values
        #[arg(long, value_delimiter = ',', required = true)]
        eps_list: Vec<f64>,
    },
    /// Monte Carlo check of the no-contact MSD against the exact curve
    MsdValidate {
        #[arg(long)]
        config: PathBuf,
        /// Ensemble size (at least 2)
        #[arg(long)]
        replicas: usize,
    },
    /// Render a CSV from the other commands to a self-contained SVG
    Plot {
        #[arg(long)]
        kind: PlotKind,
        /// Input CSV path
        #[arg(long = "in")]
        input: PathBuf,
        /// Output SVG path
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Msd,
    Activation,
    Trajectory,
    Density,
}

impl From<PlotKind> for plot::Kind {
    fn from(kind: PlotKind) -> Self {
        match kind {
            PlotKind::Msd => plot::Kind::Msd,
            PlotKind::Activation => plot::Kind::Activation,
            PlotKind::Trajectory => plot::Kind::Trajectory,
            PlotKind::Density => plot::Kind::Density,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real usage errors
            // are validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli.command) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, out, seed } => {
            let mut file = config::parse_file(&config)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            let mut exp = file.build()?;
            if let Some(dir) = out {
                exp.out_dir = dir;
            }
            let started = Instant::now();
            let traj = Simulation::new(exp.sim)?.run()?;
            output::write_run(&exp.out_dir, &traj, started.elapsed())?;
            // The run's exact spec, defaults and overrides resolved.
            let resolved = exp.out_dir.join("config.toml");
            std::fs::write(&resolved, config::to_toml_string(&file))
                .map_err(|e| error::io_at(&resolved, e))?;
            let last = traj
                .diagnostics()
                .last()
                .expect("runs record the initial step");
            println!(
                "wrote {}: {} steps to T = {}, final msd {:.6e}",
                exp.out_dir.display(),
                traj.diagnostics().len() - 1,
                traj.final_time(),
                last.msd
            );
            Ok(())
        }
        Command::DensityStudy { config, da_list } => {
            let exp = config::parse_file(&config)?.build()?;
            studies::density_study(&exp, &da_list)
        }
        Command::LimitCompare { config, eps_list } => {
            let exp = config::parse_file(&config)?.build()?;
            studies::limit_compare(&exp, &eps_list)
        }
        Command::MsdValidate { config, replicas } => {
            let exp = config::parse_file(&config)?.build()?;
            studies::msd_validate(&exp, replicas)
        }
        Command::Plot { kind, input, out } => {
            let csv = plot::load_csv(&input)?;
            let svg = plot::render(kind.into(), &csv)?;
            std::fs::write(&out, svg).map_err(|e| error::io_at(&out, e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
