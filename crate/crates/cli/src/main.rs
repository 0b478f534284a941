mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(
    name = "ekl",
    version,
    about = "Metastable transition times of underdamped Langevin dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single ε (overrides `epsilon` and `epsilon_grid`)
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Base seed (overrides `ensemble.base_seed`)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted override, e.g. `--set ensemble.n_traj=500`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical points, barriers and the saddle frame -> landscape.json
    Analyze(Common),
    /// Closed-form mean transition times -> predictions.csv
    Predict(Common),
    /// Monte Carlo hitting times -> hitting.json
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write trajectories.csv
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Capacity quadrature around the saddle -> capacity.json
    Capacity(Common),
    /// Built-in acceptance checks -> verify.json; exit 1 if any fails
    Verify {
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run only these check ids (comma separated)
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Analyze(c) => commands::analyze(&c),
        Command::Predict(c) => commands::predict(&c),
        Command::Simulate {
            common,
            dump_trajectories,
        } => commands::simulate(&common, dump_trajectories),
        Command::Capacity(c) => commands::capacity(&c),
        Command::Verify { out, seed, only, jobs } => commands::verify(&out, seed, &only, jobs),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() || e.downcast_ref::<std::io::Error>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
