use anyhow::bail;
use ecg_digitize::par::{self, Execution};
use ecg_digitize::raster::{encode_png_mask, encode_png_rgb};
use ecg_digitize::synth::{corpus_sample, RenderSpec};
use serde::Serialize;
use serde_json::json;

use super::write_file;
use crate::args::SynthArgs;
use crate::manifest::{RunManifest, SampleEntry};
use crate::{create_dir, Outcome};

#[derive(Serialize)]
struct Snapshot<'a> {
    n_clean: usize,
    n_overlap: usize,
    seed: u64,
    rate: f64,
    noise_mv: f64,
    render: &'a RenderSpec,
}

pub fn clean_id(i: usize) -> String {
    format!("c{i:04}")
}

pub fn overlap_id(i: usize) -> String {
    format!("o{i:04}")
}

pub fn run(a: &SynthArgs) -> anyhow::Result<Outcome> {
    let base = RenderSpec {
        spacing_x: a.spacing,
        spacing_y: a.spacing,
        minor_lines: a.minor_lines,
        thickness: a.thickness,
        width: a.width,
        height: a.height,
        ..RenderSpec::default()
    };
    base.validate()?;
    if !(a.rate.is_finite() && a.rate > 0.0) {
        bail!("rate must be positive");
    }
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        bail!("noise must be non-negative");
    }
    if a.n_overlap > 0 && a.height <= ecg_digitize::synth::OVERLAY_BAND_PX {
        bail!(
            "overlap samples need a canvas taller than {} px",
            ecg_digitize::synth::OVERLAY_BAND_PX
        );
    }
    create_dir(&a.out)?;

    let total = a.n_clean + a.n_overlap;
    let exec = if Execution::available() {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let samples = par::map_indices(total, exec, |k| {
        let overlap = k >= a.n_clean;
        let id = if overlap {
            overlap_id(k - a.n_clean)
        } else {
            clean_id(k)
        };
        match write_sample(a, &base, k, overlap, &id) {
            Ok(entry) => entry,
            Err(e) => SampleEntry::failed(id, "synth", format!("{e:#}")),
        }
    });

    let snapshot = Snapshot {
        n_clean: a.n_clean,
        n_overlap: a.n_overlap,
        seed: a.seed,
        rate: a.rate,
        noise_mv: a.noise,
        render: &base,
    };
    let manifest = RunManifest::new("synth", serde_json::to_value(snapshot)?, samples);
    manifest.write(&a.out)?;
    Ok(Outcome::from_failures(manifest.failures()))
}

fn write_sample(
    a: &SynthArgs,
    base: &RenderSpec,
    index: usize,
    overlap: bool,
    id: &str,
) -> anyhow::Result<SampleEntry> {
    let s = corpus_sample(a.seed, index as u64, overlap, base, a.rate, a.noise)?;
    let mut files = vec![
        (format!("{id}.png"), encode_png_rgb(&s.rendering.image)?),
        (format!("{id}.mask.png"), encode_png_mask(&s.rendering.mask)?),
        (format!("{id}.json"), s.truth.to_json().into_bytes()),
    ];
    if let Some(o) = &s.overlay {
        files.push((format!("{id}.overlap.png"), encode_png_rgb(&o.image)?));
        files.push((format!("{id}.overlap.mask.png"), encode_png_mask(&o.mask)?));
    }
    for (name, bytes) in &files {
        write_file(&a.out.join(name), bytes)?;
    }
    let mut entry = SampleEntry::ok(id, files.into_iter().map(|f| f.0).collect());
    entry.details = Some(json!({
        "seed": s.seed,
        "grid": s.rendering.grid,
        "offset_x": s.render_spec.offset_x,
        "offset_y": s.render_spec.offset_y,
        "baseline_row": s.rendering.baseline_row,
        "clipped": s.rendering.clipped,
        "overlap_side": s.overlay.as_ref().map(|o| o.side),
    }));
    Ok(entry)
}
