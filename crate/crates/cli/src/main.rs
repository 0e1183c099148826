//! `thzcabin` command-line front end.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on data errors, which
//! are reported on stderr as a single `ERR:<code>: message` line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thzcabin::Band;

#[derive(Parser)]
#[command(
    name = "thzcabin",
    version,
    about = "THz in-cabin channel prediction, modeling and planning"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Ray-trace one link and write its multipath components as CSV.
    Trace(TraceArgs),
    /// Synthesize a CFR sweep from an MPC list.
    Synth(SynthArgs),
    /// Extract MPCs from a CFR sweep by local-maximum search.
    Extract(ExtractArgs),
    /// Cluster measured MPCs around traced anchors into a hybrid model.
    Fit(FitArgs),
    /// Identify bounce materials from reflection losses.
    Identify(IdentifyArgs),
    /// Planar SINR and association map.
    Covermap(CovermapArgs),
    /// Coverage curve and average rate over a random receiver population.
    Plan(PlanArgs),
    /// Two-stage transmitter placement optimization.
    Optimize(OptimizeArgs),
}

#[derive(Args, Clone)]
pub struct SceneArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Material CSV (default: materials.csv next to the scene).
    #[arg(long)]
    pub materials: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct OutArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Transmitter name in the scene.
    #[arg(long)]
    pub tx: String,
    /// Receiver name in the scene.
    #[arg(long)]
    pub rx: String,
    /// Maximum reflection order.
    #[arg(long)]
    pub max_order: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct SynthArgs {
    /// MPC CSV.
    #[arg(long)]
    pub paths: PathBuf,
    /// Frequency sweep as start:stop:count, e.g. 290e9:310e9:2001.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<Band>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WindowArg {
    Rect,
    Hann,
}

#[derive(Args)]
pub struct ExtractArgs {
    /// CFR CSV with columns azimuth_deg,zenith_deg,freq_hz,re,im.
    #[arg(long)]
    pub cfr: PathBuf,
    /// Delay-domain window.
    #[arg(long, value_enum, default_value = "rect")]
    pub window: WindowArg,
    /// Absolute noise floor in dB (default: 40 dB below the peak).
    #[arg(long, allow_hyphen_values = true)]
    pub floor_db: Option<f64>,
    /// Minimum delay separation in bins within one angle cell.
    #[arg(long, default_value_t = 3)]
    pub min_sep: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct FitArgs {
    /// Measured (extracted) MPC CSV.
    #[arg(long)]
    pub measured: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub tx: String,
    #[arg(long)]
    pub rx: String,
    /// Delay gate, ns.
    #[arg(long, default_value_t = 0.5)]
    pub gate_delay_ns: f64,
    /// Azimuth gate, degrees.
    #[arg(long, default_value_t = 20.0)]
    pub gate_az: f64,
    /// Zenith gate, degrees.
    #[arg(long, default_value_t = 20.0)]
    pub gate_zen: f64,
    /// Also draw one realization with this many subpaths per cluster.
    #[arg(long, requires_all = ["seed", "realization"])]
    pub realize: Option<usize>,
    /// Seed of the realization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Realization MPC CSV.
    #[arg(long)]
    pub realization: Option<PathBuf>,
    /// Model JSON (default: stdout).
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct IdentifyArgs {
    /// Hybrid model JSON whose clusters are labelled.
    #[arg(long, conflicts_with = "rl", required_unless_present = "rl")]
    pub model: Option<PathBuf>,
    /// Reflection losses in dB to label directly.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rl: Option<Vec<f64>>,
    /// Material CSV with reference reflection losses.
    #[arg(long)]
    pub materials: PathBuf,
    /// Largest accepted mismatch, dB.
    #[arg(long, default_value_t = 3.0)]
    pub tolerance: f64,
    /// Transmit power plus antenna gains, dB (default: from the config).
    #[arg(long, allow_hyphen_values = true)]
    pub reference_db: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct CovermapArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Transmitter names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tx: Vec<String>,
    /// Map height, m.
    #[arg(long, default_value_t = 1.0)]
    pub z: f64,
    /// Cell size, m.
    #[arg(long, default_value_t = 0.05)]
    pub res: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Clone)]
pub struct PopulationArgs {
    /// Receiver population seed.
    #[arg(long)]
    pub rx_seed: Option<u64>,
    /// Number of receivers.
    #[arg(long)]
    pub rx_count: Option<usize>,
    /// Population mean x,y,z (default: config, else the scene centre).
    #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
    pub rx_mean: Option<Vec<f64>>,
    /// Population standard deviation x,y,z (default: config, else a quarter of the extent).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub rx_stddev: Option<Vec<f64>>,
}

#[derive(Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub tx: Vec<String>,
    #[command(flatten)]
    pub pop: PopulationArgs,
    /// Threshold sweep lo:hi in 1 dB steps.
    #[arg(long, default_value = "-10:40", allow_hyphen_values = true)]
    pub thresholds: String,
    /// Also write a JSON summary (rate, reach) here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Candidate transmitter names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<String>,
    /// Transmitter counts screened in stage 1, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub n: Vec<usize>,
    /// Coverage threshold, dB.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Minimum per-transmitter coverage at the threshold.
    #[arg(long)]
    pub pth: Option<f64>,
    /// Powell tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Powell iteration limit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[command(flatten)]
    pub pop: PopulationArgs,
    /// Stop after screening.
    #[arg(long)]
    pub stage1_only: bool,
    /// Write the SINR map of the optimized deployment here.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
    /// Map height, m.
    #[arg(long, default_value_t = 1.0)]
    pub map_z: f64,
    /// Map cell size, m.
    #[arg(long, default_value_t = 0.05)]
    pub map_res: f64,
    /// Result JSON (default: stdout).
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_band(s: &str) -> Result<Band, String> {
    s.parse().map_err(|e: thzcabin::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("ERR:{}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
