//! `regmap`: command-line driver of the registration error pipeline.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use regmap::pooling::Schema;

use failure::{exit_code, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "regmap", version, about = "Voxel-wise registration error prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "REGMAP_THREADS")]
    pub threads: Option<usize>,
    /// intensity | registration | combined | combined+md | no-pooling | single:<family>
    #[arg(long, global = true)]
    pub schema: Option<Schema>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairInputs {
    /// Directory written by `regmap synth`; supplies defaults for the
    /// image and truth paths.
    #[arg(long)]
    pub pair: Option<PathBuf>,
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub moving: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fixed/moving pair with its true transform.
    Synth {
        /// Cube edge length in voxels.
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        amplitude_mm: Option<f64>,
        #[arg(long)]
        sigma_mm: Option<f64>,
        /// Number of synthetic landmark pairs to write.
        #[arg(long, default_value_t = 100)]
        landmarks: usize,
    },
    /// Base registration plus the two perturbation ensembles.
    Register {
        #[command(flatten)]
        inputs: PairInputs,
        /// Iterations per resolution.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        ensemble_size: Option<usize>,
        #[arg(long)]
        perturb_mm: Option<f64>,
        /// Write only the base transform.
        #[arg(long)]
        no_ensembles: bool,
    },
    /// Feature table of one pair.
    Features {
        #[command(flatten)]
        inputs: PairInputs,
        /// Directory written by `regmap register`.
        #[arg(long)]
        reg: PathBuf,
        /// Directory holding a true transform as `truth_{dx,dy,dz}.mhd`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Landmark file (`xF yF zF xM yM zM` per line, mm).
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        pair_id: Option<String>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train a forest on one or more tables.
    Train {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
    },
    /// Predict a table, or one axial slice of a registered pair.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        inputs: PairInputs,
        #[arg(long)]
        reg: Option<PathBuf>,
        /// Axial slice index; the middle slice by default.
        #[arg(long)]
        slice: Option<usize>,
    },
    /// Pair-level cross-validation with report files.
    Evaluate {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        test_pairs: Option<usize>,
    },
    /// Out-of-bootstrap permutation importance of a trained model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        /// The table the model was trained on.
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
    },
    /// Synthetic experiment from pair generation to reports.
    E2e {
        #[arg(long)]
        pairs: Option<usize>,
        /// Cube edge length in voxels.
        #[arg(long)]
        dims: Option<usize>,
        /// Comma-separated iterations per resolution.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
