//! `pvad`: corpus generation, training, quantization, streaming inference,
//! evaluation harnesses, gate sweeps and power reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvad_core::Error;
use serde::Serialize;

/// Exit status for each error class.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const FILE: u8 = 4;
    pub const FORMAT: u8 = 5;
    pub const NUMERIC: u8 = 6;
}

#[derive(Parser, Debug)]
#[command(name = "pvad", version, about = "Bone-conduction personalized voice activity detection toolkit")]
struct Cli {
    /// Config file (TOML, or a `<command>.config.json` snapshot from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the synth and train seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic dual-channel corpus and its manifest.
    Synth(SynthArgs),
    /// Dump per-frame features of a WAV file as CSV.
    Features(FeaturesArgs),
    /// Train a float model on one channel of a corpus.
    Train(TrainArgs),
    /// Calibrate and quantize a float model.
    Quantize(QuantizeArgs),
    /// Stream a WAV file through a model and write per-frame predictions.
    Infer(InferArgs),
    /// Run an SNR evaluation harness for a BC and an AC model.
    Eval(EvalArgs),
    /// Sweep the energy gate threshold over the test split.
    GateSweep(GateSweepArgs),
    /// Power, latency and battery-life report for SoC profiles.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelArg {
    Bc,
    Ac,
}

impl From<ChannelArg> for pvad_core::audio::Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Bc => pvad_core::audio::Channel::Bc,
            ChannelArg::Ac => pvad_core::audio::Channel::Ac,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub train_hours: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub test_hours: Option<f64>,
    /// Clip length in seconds.
    #[arg(long, allow_hyphen_values = true)]
    pub clip_len: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Corpus manifest written by `synth`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "bc")]
    pub channel: ChannelArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationArg {
    Percentile,
    Minmax,
}

#[derive(Args, Debug, Serialize)]
pub struct QuantizeArgs {
    /// Float model (`model.json`).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "bc")]
    pub channel: ChannelArg,
    #[arg(long)]
    pub out: PathBuf,
    /// 8 for deployment, 16 for the higher-precision diagnostic.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(8..=16))]
    pub bits: u32,
    /// Training clips used as the representative set.
    #[arg(long, default_value_t = 20)]
    pub calib_clips: usize,
    #[arg(long, value_enum)]
    pub calibration: Option<CalibrationArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Hold,
    Decay,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    /// Float `model.json` or int8 `qmodel.json`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Enable energy gating at this threshold (dB).
    #[arg(long, allow_hyphen_values = true)]
    pub gate_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub skip_output: Option<f64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    /// Timing profile for the latency column (built-in name or TOML path).
    #[arg(long, default_value = "apollo4")]
    pub profile: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    EqualEnv,
    EqualSnr,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bc_model: PathBuf,
    #[arg(long)]
    pub ac_model: PathBuf,
    #[arg(long, value_enum, default_value = "equal-env")]
    pub mode: ModeArg,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,0,10,20")]
    pub snr_grid: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GateSweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "bc")]
    pub channel: ChannelArg,
    /// Thresholds in dB; `-inf` and `inf` are accepted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
    pub peak_dbfs: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PowerArgs {
    /// Built-in profile names (apollo4, nrf5340) or TOML profile paths.
    #[arg(long, value_delimiter = ',', default_value = "apollo4")]
    pub profile: Vec<String>,
    /// Fractions of inferences skipped by the gate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub skip: Vec<f64>,
    /// Also write power.csv and power.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Range(_) | Error::Contract(_) => exit::CONFIG,
        Error::Io { .. } => exit::FILE,
        Error::Format(_) | Error::UnsupportedFormat(_) | Error::UnsupportedRate(_) | Error::Manifest(_) => exit::FORMAT,
        Error::Numeric(_) => exit::NUMERIC,
        _ => exit::OTHER,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
