use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecg_digitize::pipeline::{GridFallback, InputMode};

#[derive(Debug, Parser)]
#[command(name = "ecgd", version, about = "Digitize single-lead ECG images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus of renderings and ground truth.
    Synth(SynthArgs),
    /// Convert images or masks into signal JSON files.
    Digitize(DigitizeArgs),
    /// Score predictions against references and write a CSV report.
    Evaluate(EvaluateArgs),
    /// Detect grid geometry and print it as JSON lines.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 185)]
    pub n_clean: usize,
    #[arg(long, default_value_t = 100)]
    pub n_overlap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixels per large square, both axes.
    #[arg(long, default_value_t = 40.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 2)]
    pub thickness: usize,
    #[arg(long)]
    pub minor_lines: bool,
    /// Ground-truth sampling rate, Hz.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Standard deviation of additive noise, mV.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 960)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Raw,
    Mask,
}

impl From<ModeArg> for InputMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => InputMode::Raw,
            ModeArg::Mask => InputMode::Mask,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FallbackArg {
    Error,
    AssumeSquareDefault,
}

impl From<FallbackArg> for GridFallback {
    fn from(f: FallbackArg) -> Self {
        match f {
            FallbackArg::Error => GridFallback::Error,
            FallbackArg::AssumeSquareDefault => GridFallback::AssumeSquareDefault,
        }
    }
}

/// Pipeline settings; each flag overrides the value from `--config`.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with a full or partial pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Output sampling rate, Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub angle_scale: Option<f64>,
    #[arg(long)]
    pub hedge_floor: Option<f64>,
    #[arg(long)]
    pub hedge_step: Option<f64>,
    #[arg(long)]
    pub lag_window: Option<usize>,
    /// Remove connected components smaller than 4 px before tracing.
    #[arg(long)]
    pub denoise: bool,
    #[arg(long, value_enum)]
    pub grid_fallback: Option<FallbackArg>,
    /// Square size used by `--grid-fallback assume-square-default`.
    #[arg(long)]
    pub default_square_px: Option<f64>,
    /// Fixed grid geometry `W` or `WxH` in px per large square; skips detection.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(f64, f64)>,
    /// Run on a single thread.
    #[arg(long)]
    pub sequential: bool,
}

fn parse_grid(s: &str) -> Result<(f64, f64), String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|e| format!("invalid grid size {t:?}: {e}"))
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((num(w)?, num(h)?)),
        None => num(s).map(|v| (v, v)),
    }
}

#[derive(Debug, Args)]
pub struct DigitizeArgs {
    /// Image files or directories. In mask mode these are `<id>.mask.png` files.
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write `<id>.diag.json` with grid, hedging and trace details.
    #[arg(long)]
    pub emit_diagnostics: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `<id>.pred.json` files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of reference `<id>.json` files (and masks, for IoU).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// CSV report path.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
}
