//! `chlu`: dataset generation, training, rollouts, sampling, potential
//! probing and self-checks.

mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use chlu::experiments::{Experiment, ExperimentConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "chlu", version, about = "Relativistic Hamiltonian learning units")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    #[command(subcommand)]
    GenData(GenData),
    /// Train a model on a dataset and save a checkpoint.
    Train(TrainArgs),
    /// Integrate a trained model from an initial state and write a trajectory CSV.
    Rollout(RolloutArgs),
    /// Sample from a trained image model with annealed Langevin dynamics.
    Generate(GenerateArgs),
    /// Evaluate a planar model's potential and force on a grid.
    Probe(ProbeArgs),
    /// Run self-check suites; exits with 3 if any check fails.
    Check(CheckArgs),
}

#[derive(Subcommand, Debug)]
pub enum GenData {
    /// Gerono lemniscate q = (cos t, sin t·cos t) as one trajectory CSV.
    Lemniscate {
        #[arg(long, default_value_t = 3.0)]
        cycles: f64,
        #[arg(long, default_value_t = 200)]
        samples_per_cycle: usize,
        /// Integrator step the samples are spaced by (default 2π/samples-per-cycle).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Sine trajectories q = sin(ωt), p = ω·cos(ωt) with ω ~ U(lo, hi).
    Sine {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        length: usize,
        /// Frequency range lo:hi.
        #[arg(long, default_value = "0.5:2.0")]
        omega: String,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Procedural 28×28 seven-segment digit glyphs in IDX format.
    Glyphs {
        #[arg(long, default_value_t = 1100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: std::path::PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ExperimentArg {
    Lemniscate,
    Sine,
    Images,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Lemniscate => Experiment::Lemniscate,
            ExperimentArg::Sine => Experiment::Sine,
            ExperimentArg::Images => Experiment::Images,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    pub experiment: ExperimentArg,
    /// Trajectory CSV (lemniscate, sine) or IDX image file (images).
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<std::path::PathBuf>,
    /// TOML file overriding any preset key (see below).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<std::path::PathBuf>,
    /// Drop the supervised term (beta_mse = 0), leaving the contrastive update alone.
    #[arg(long)]
    pub alg1_literal: bool,
    /// Overrides both train.seed and model.init_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-step training metrics CSV.
    #[arg(long)]
    pub metrics: Option<std::path::PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(clap::Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub ckpt: std::path::PathBuf,
    /// `lemniscate-start`, a CSV path (first row) or `PATH#ROW`.
    #[arg(long)]
    pub init: String,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Re-run the model invariant checks after loading.
    #[arg(long)]
    pub verify: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Thermal,
    Deterministic,
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: std::path::PathBuf,
    /// `deterministic` forces temperature and friction to zero.
    #[arg(long, value_enum, default_value_t = ModeArg::Thermal)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 25)]
    pub count: usize,
    #[arg(long, default_value = "geometric:1.0:0.01")]
    pub temp_schedule: String,
    #[arg(long, default_value = "linear:0.01:0.2")]
    pub gamma_schedule: String,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    /// IDX file; chains start at the centroid of images from --held-out-from
    /// on, plus noise. Without it chains start from pure noise.
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    /// First held-out image index; earlier images are the training set used
    /// for the nearest-image distance.
    #[arg(long, default_value_t = 1000)]
    pub held_out_from: usize,
    /// Standard deviation of the start noise.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Steps between saved sample grids.
    #[arg(long, default_value_t = 200)]
    pub snapshot_every: usize,
    /// Grid columns in the PGM output.
    #[arg(long, default_value_t = 5)]
    pub cols: usize,
    /// Map pixels through clamp instead of tanh.
    #[arg(long)]
    pub no_tanh: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: std::path::PathBuf,
    #[arg(long)]
    pub verify: bool,
}

#[derive(clap::Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ckpt: std::path::PathBuf,
    /// x-axis grid min:max:resolution (also used for y unless --grid-y is set).
    #[arg(long, default_value = "-2:2:200")]
    pub grid: String,
    #[arg(long)]
    pub grid_y: Option<String>,
    #[arg(long)]
    pub out: std::path::PathBuf,
    #[arg(long)]
    pub verify: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SuiteArg {
    Gradients,
    Symplectic,
    Reversibility,
    VelocityBound,
    Boltzmann,
    All,
}

#[derive(clap::Args, Debug)]
pub struct CheckArgs {
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn train_help() -> String {
    let mut s = String::from("Preset defaults (override any key with --config FILE):\n");
    for e in [Experiment::Lemniscate, Experiment::Sine, Experiment::Images] {
        s.push_str(&format!("\n# {}\n{}", e.name(), ExperimentConfig::preset(e).to_toml()));
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cmd = Cli::command().mut_subcommand("train", |c| c.after_long_help(train_help()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
