mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stabkit::NoiseMode;

/// Train ensembles of linear classifiers, measure their stability and
/// calibrate privatization noise from the measured spread.
#[derive(Debug, Parser)]
#[command(name = "stabkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file; keys mirror the resolved config printed on stderr.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set learning_rate=0.01` or
    /// `--set clipping.kind=whole_batch`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training set (.fds binary or .csv).
    #[arg(long)]
    train: PathBuf,
    /// Optional held-out set used for accuracy columns.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Class count for CSV inputs; inferred from the labels when omitted.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded Gaussian-cluster dataset.
    Synth {
        /// Number of rows.
        #[arg(long)]
        n: usize,
        /// Feature dimension.
        #[arg(long)]
        d: usize,
        /// Number of classes.
        #[arg(long)]
        classes: usize,
        /// Distance between class means.
        #[arg(long, default_value_t = 3.0)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; `.csv` writes CSV, anything else FDS1 binary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a dataset between CSV and FDS1 binary (chosen by extension).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Class count for CSV inputs; inferred when omitted.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train a single model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed for initialization and member data; overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (model.pvc, trace.csv, config.toml).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an ensemble from one shared initialization and report its
    /// deviation.
    Ensemble {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed for initialization and member data; overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Ensemble size; overrides `models`.
        #[arg(long)]
        models: Option<usize>,
        /// Parallel training workers. Results do not depend on this.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the deviation report of a set of model files as JSON.
    Stability {
        /// Two or more PVC1 model files.
        #[arg(long, num_args = 2.., required = true)]
        models: Vec<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add calibrated Gaussian noise to one model.
    Privatize {
        /// Model to privatize.
        #[arg(long)]
        model: PathBuf,
        /// Ensemble whose spread calibrates the noise (two or more files).
        #[arg(long, num_args = 2.., required = true)]
        ensemble: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = NoiseModeArg::Anisotropic)]
        noise_mode: NoiseModeArg,
        /// Dimensionless multiplier on the measured spread. It is not a
        /// privacy budget.
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        /// Output PVC1 file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a tree of binary classifiers.
    Tree {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// `balanced`, `vehicles_animals` or a nested JSON array such as
        /// `[[0,1],[2,3]]`; overrides `skeleton`.
        #[arg(long)]
        skeleton: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory (tree.json and nodes/).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named experiment recipe.
    Experiment {
        /// Experiment spec (TOML). Its `name` selects the recipe defaults.
        #[arg(long, required_unless_present = "preset")]
        spec: Option<PathBuf>,
        /// Run a recipe with its defaults instead of a spec file.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Override one spec key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Master seed; overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NoiseModeArg {
    Isotropic,
    Anisotropic,
}

impl From<NoiseModeArg> for NoiseMode {
    fn from(m: NoiseModeArg) -> Self {
        match m {
            NoiseModeArg::Isotropic => NoiseMode::Isotropic,
            NoiseModeArg::Anisotropic => NoiseMode::Anisotropic,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
