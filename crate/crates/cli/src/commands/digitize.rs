use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::bail;
use ecg_digitize::par;
use ecg_digitize::pipeline::{digitize, DigitizeInput, InputMode, PipelineConfig};
use ecg_digitize::raster::RasterImage;
use serde_json::json;

use super::{load_image, write_file};
use crate::args::DigitizeArgs;
use crate::manifest::{RunManifest, SampleEntry};
use crate::{create_dir, list_files, resolve_config, strip_suffix_ci, Outcome};

const IMAGE_EXTS: [&str; 2] = [".png", ".bmp"];
const MASK_EXTS: [&str; 2] = [".mask.png", ".mask.bmp"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Job {
    pub id: String,
    pub path: PathBuf,
    /// Color image beside a mask, used for grid detection.
    pub companion: Option<PathBuf>,
}

fn id_for(name: &str, exts: &[&str]) -> Option<String> {
    exts.iter()
        .find_map(|e| strip_suffix_ci(name, e))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|n| n.to_str()).unwrap_or_default()
}

/// Expands files and directories into jobs, sorted by id.
pub fn discover(inputs: &[PathBuf], mode: InputMode) -> anyhow::Result<Vec<Job>> {
    let is_mask = |n: &str| id_for(n, &MASK_EXTS).is_some();
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            paths.extend(match mode {
                InputMode::Raw => {
                    list_files(input, |n| !is_mask(n) && id_for(n, &IMAGE_EXTS).is_some())?
                }
                InputMode::Mask => list_files(input, is_mask)?,
            });
        } else if input.is_file() {
            paths.push(input.clone());
        } else {
            bail!("input {} does not exist", input.display());
        }
    }
    let mut jobs: Vec<Job> = paths
        .into_iter()
        .map(|path| {
            let name = file_name(&path);
            let id = match mode {
                InputMode::Mask => id_for(name, &MASK_EXTS).or_else(|| id_for(name, &IMAGE_EXTS)),
                InputMode::Raw => id_for(name, &IMAGE_EXTS),
            }
            .unwrap_or_else(|| name.to_string());
            let companion = match mode {
                InputMode::Raw => None,
                InputMode::Mask => IMAGE_EXTS
                    .iter()
                    .map(|e| path.with_file_name(format!("{id}{e}")))
                    .find(|p| p.is_file()),
            };
            Job {
                id,
                path,
                companion,
            }
        })
        .collect();
    jobs.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.path.cmp(&b.path)));
    Ok(jobs)
}

pub fn run(a: &DigitizeArgs) -> anyhow::Result<Outcome> {
    let cfg = resolve_config(&a.config)?;
    let jobs = discover(&a.input, cfg.mode)?;
    create_dir(&a.out)?;

    let mut seen = BTreeSet::new();
    let duplicate: Vec<bool> = jobs.iter().map(|j| !seen.insert(j.id.clone())).collect();
    let indexed: Vec<(&Job, bool)> = jobs.iter().zip(duplicate).collect();
    let samples = par::map(&indexed, cfg.execution, |&(job, dup)| {
        if dup {
            return SampleEntry::failed(&job.id, "input", "duplicate sample id");
        }
        process(job, &cfg, &a.out, a.emit_diagnostics)
    });

    let manifest = RunManifest::new("digitize", serde_json::to_value(&cfg)?, samples);
    manifest.write(&a.out)?;
    Ok(Outcome::from_failures(manifest.failures()))
}

fn process(job: &Job, cfg: &PipelineConfig, out: &Path, diagnostics: bool) -> SampleEntry {
    let fail = |stage: &str, e: String| SampleEntry::failed(&job.id, stage, e);
    let decoded = match load_image(&job.path) {
        Ok(d) => d,
        Err((stage, e)) => return fail(stage, e),
    };
    let companion: Option<RasterImage> = match &job.companion {
        Some(p) => match load_image(p) {
            Ok(d) => Some(d.into_color()),
            Err((_, e)) => return fail("companion", e),
        },
        None => None,
    };
    let result = match cfg.mode {
        InputMode::Raw => digitize(DigitizeInput::Raw(&decoded.into_color()), cfg),
        InputMode::Mask => match decoded.into_mask() {
            Ok(mask) => digitize(
                DigitizeInput::Mask {
                    mask: &mask,
                    companion: companion.as_ref(),
                },
                cfg,
            ),
            Err(e) => return fail("decode", format!("{}: {e}", job.path.display())),
        },
    };
    let d = match result {
        Ok(d) => d,
        Err(e) => return fail(e.stage(), e.to_string()),
    };

    let mut outputs = vec![format!("{}.pred.json", job.id)];
    if let Err(e) = write_file(&out.join(&outputs[0]), d.signal.to_json()) {
        return fail("write", format!("{e:#}"));
    }
    if diagnostics {
        let name = format!("{}.diag.json", job.id);
        // Timings go to the manifest so this file stays reproducible.
        let mut diag = d.diagnostics.clone();
        diag.timings.clear();
        let text = serde_json::to_string_pretty(&diag).expect("serializable");
        if let Err(e) = write_file(&out.join(&name), text + "\n") {
            return fail("write", format!("{e:#}"));
        }
        outputs.push(name);
    }
    let mut entry = SampleEntry::ok(&job.id, outputs);
    entry.timings_ms = d
        .diagnostics
        .timings
        .iter()
        .map(|t| (t.stage.clone(), t.ms))
        .collect();
    entry.details = Some(json!({
        "input": file_name(&job.path),
        "companion": job.companion.as_deref().map(file_name),
        "grid": d.diagnostics.grid,
        "grid_source": d.diagnostics.grid_source,
        "hedging_stop": d.diagnostics.hedging.as_ref().map(|h| h.stop_reason),
        "hedging_factor": d.diagnostics.hedging.as_ref().map(|h| h.final_factor),
        "n_samples": d.signal.len(),
    }));
    entry
}
