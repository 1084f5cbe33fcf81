//! `vhem`: train HMMs and HMM mixtures, reduce and cluster them, and run the
//! synthetic benchmarks, writing CSV run reports.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vhem", version, about = "Clustering of hidden Markov models by variational hierarchical EM")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command. Each can also be set through a `VHEM_*`
/// environment variable.
#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, global = true, env = "VHEM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "VHEM_MAX_ITERS", default_value_t = 100)]
    pub max_iters: usize,
    /// Relative improvement below which EM stops.
    #[arg(long, global = true, env = "VHEM_TOL", default_value_t = 1e-6)]
    pub tol: f64,
    /// Smallest variance allowed after an update.
    #[arg(long, global = true, env = "VHEM_COV_FLOOR", default_value_t = 1e-6)]
    pub cov_floor: f64,
    /// Covariance form of estimated models. Training defaults to diag;
    /// reduction defaults to the form of its input.
    #[arg(long, global = true, env = "VHEM_COV_TYPE", value_enum)]
    pub cov_type: Option<CovArg>,
    /// Directory receiving the CSV run reports.
    #[arg(long, global = true, env = "VHEM_REPORT_DIR", default_value = "report")]
    pub report_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovArg {
    Diag,
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitArg {
    SubsetPerturb,
    Random,
    File,
}

#[derive(Args, Debug, Clone)]
pub struct ReduceOpts {
    /// Total virtual sample mass; defaults to 10⁴ per base component.
    #[arg(long, env = "VHEM_VIRTUAL_SAMPLES")]
    pub virtual_samples: Option<f64>,
    /// Length of the virtual sequences.
    #[arg(long, env = "VHEM_TAU_VIRTUAL", default_value_t = 10)]
    pub tau_virtual: usize,
    /// Independent initializations; the best final bound wins.
    #[arg(long, env = "VHEM_RESTARTS", default_value_t = 5)]
    pub restarts: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one HMM to a dataset by Baum-Welch.
    TrainHmm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        mix: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a mixture of HMMs to a dataset by EM.
    TrainH3m {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        mix: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a mixture of HMMs to fewer components.
    Reduce {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        kr: usize,
        #[arg(long, value_enum, default_value_t = InitArg::SubsetPerturb)]
        init: InitArg,
        /// Starting mixture, required with `--init file`.
        #[arg(long)]
        init_file: Option<PathBuf>,
        #[command(flatten)]
        opts: ReduceOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster the components of a mixture hierarchically.
    Hier {
        /// Model file whose components are the leaves.
        #[arg(long)]
        leaves: PathBuf,
        /// Strictly decreasing level sizes, e.g. `4,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        ladder: Vec<usize>,
        #[command(flatten)]
        opts: ReduceOpts,
        /// Receives `level-<l>.json` for every level above the leaves.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate grouped synthetic HMMs and, optionally, sequences drawn from them.
    Synth {
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 5)]
        per_group: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        mix: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Sequences drawn from each model; 0 writes models only.
        #[arg(long, default_value_t = 0)]
        per_model: usize,
        #[arg(long, default_value_t = 50)]
        tau: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare two `id,label` CSV files by Rand index and matching accuracy.
    EvalRand {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Column of `--pred` holding the labels.
        #[arg(long, default_value = "label")]
        pred_column: String,
    },
    /// Compare the variational bound with a Monte Carlo estimate of the
    /// expected log-likelihood between two HMMs.
    McOracle {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        reduced: PathBuf,
        #[arg(long, default_value_t = 0)]
        base_index: usize,
        #[arg(long, default_value_t = 0)]
        reduced_index: usize,
        #[arg(long, default_value_t = 10)]
        tau: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Fit mixtures on portions of a dataset, pool them and reduce the pool.
    SplitPipeline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        portions: usize,
        /// Components fitted per portion.
        #[arg(long, default_value_t = 2)]
        portion_k: usize,
        #[arg(long)]
        kr: usize,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        mix: usize,
        #[command(flatten)]
        opts: ReduceOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<vhem::Error>().is_some_and(|v| !v.is_validation()));
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}
