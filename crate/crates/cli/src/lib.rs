//! Library side of the `ecgd` binary: argument types, the run manifest and
//! one module per subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use ecg_digitize::par::Execution;
use ecg_digitize::pipeline::PipelineConfig;
use ecg_digitize::GridGeometry;

pub mod args;
pub mod commands;
pub mod manifest;

pub use args::{Cli, Command};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "ECGD_THREADS";

/// Result of a batch command that got as far as processing samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    AllOk,
    SomeFailed,
}

impl Outcome {
    pub fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::AllOk
        } else {
            Outcome::SomeFailed
        }
    }

    pub fn exit_code(self) -> ExitCode {
        match self {
            Outcome::AllOk => ExitCode::SUCCESS,
            Outcome::SomeFailed => ExitCode::from(1),
        }
    }
}

/// Exit status for configuration and usage errors.
pub const USAGE_EXIT: u8 = 2;

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Synth(a) => commands::synth::run(&a),
        Command::Digitize(a) => commands::digitize::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Grid(a) => commands::grid::run(&a),
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker pool")?;
    Ok(())
}

/// Base config from `--config` (if any) with flag overrides applied.
pub fn resolve_config(a: &args::ConfigArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(v) = a.rate {
        cfg.rate = v;
    }
    if let Some(v) = a.alpha {
        cfg.trace.alpha = v;
    }
    if let Some(v) = a.angle_scale {
        cfg.trace.angle_scale = v;
    }
    if let Some(v) = a.hedge_floor {
        cfg.hedging.floor = v;
    }
    if let Some(v) = a.hedge_step {
        cfg.hedging.step = v;
    }
    if let Some(v) = a.lag_window {
        cfg.lag_window = v;
    }
    if a.denoise {
        cfg.denoise = true;
    }
    if let Some(f) = a.grid_fallback {
        cfg.grid_fallback = f.into();
    }
    if let Some(v) = a.default_square_px {
        cfg.default_square_px = v;
    }
    if let Some((w, h)) = a.grid {
        cfg.grid = Some(GridGeometry::new(w, h)?);
    }
    if a.sequential || !Execution::available() {
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Files directly inside `dir` whose names satisfy `keep`, sorted by name.
pub fn list_files(dir: &Path, keep: impl Fn(&str) -> bool) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.is_file() && keep(name) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `name` minus `suffix`, if it ends with it (ASCII case-insensitive).
pub fn strip_suffix_ci<'a>(name: &'a str, suffix: &str) -> Option<&'a str> {
    let cut = name.len().checked_sub(suffix.len())?;
    (name.is_char_boundary(cut) && name[cut..].eq_ignore_ascii_case(suffix)).then(|| &name[..cut])
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
