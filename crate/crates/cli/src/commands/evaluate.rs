use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ecg_digitize::calibrate::DigitalSignal;
use ecg_digitize::metrics::{aggregate, iou, AggregateReport, EvalReport};
use ecg_digitize::par;
use ecg_digitize::pipeline::{evaluate, PipelineConfig};

use super::load_image;
use crate::args::EvaluateArgs;
use crate::{list_files, resolve_config, strip_suffix_ci, Outcome};

pub const OVERLAP_GROUP: &str = "overlap";
pub const CLEAN_GROUP: &str = "no-overlap";
pub const ROW_HEADER: [&str; 7] = ["id", "group", "mse", "pearson", "lag", "iou", "n_samples"];
pub const FOOTER_HEADER: [&str; 8] = [
    "group", "n", "mse_mean", "mse_std", "mse_max", "rho_mean", "rho_min", "rho_std",
];

/// Id of the clean sample a prediction id refers to.
pub fn base_id(id: &str) -> &str {
    id.strip_suffix(".overlap").unwrap_or(id)
}

pub fn group_of(id: &str) -> &'static str {
    if id.ends_with(".overlap") {
        OVERLAP_GROUP
    } else {
        CLEAN_GROUP
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub id: String,
    pub group: &'static str,
    pub report: EvalReport,
}

struct Pair {
    id: String,
    pred: PathBuf,
    reference: PathBuf,
}

fn read_signal(path: &Path) -> anyhow::Result<DigitalSignal> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DigitalSignal::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// IoU between the clean reference mask and the mask the sample was digitized from.
fn mask_iou(ref_dir: &Path, id: &str) -> Option<f64> {
    let clean = load_image(&ref_dir.join(format!("{}.mask.png", base_id(id)))).ok()?;
    let used = load_image(&ref_dir.join(format!("{id}.mask.png"))).ok()?;
    iou(&clean.into_mask().ok()?, &used.into_mask().ok()?).ok()
}

fn score(pair: &Pair, ref_dir: &Path, cfg: &PipelineConfig) -> anyhow::Result<Row> {
    let pred = read_signal(&pair.pred)?;
    let reference = read_signal(&pair.reference)?;
    let mut report = evaluate(&pred, &reference, cfg)?;
    report.iou = mask_iou(ref_dir, &pair.id);
    Ok(Row {
        id: pair.id.clone(),
        group: group_of(&pair.id),
        report,
    })
}

pub fn run(a: &EvaluateArgs) -> anyhow::Result<Outcome> {
    let cfg = resolve_config(&a.config)?;
    let mut pairs = Vec::new();
    for pred in list_files(&a.pred, |n| strip_suffix_ci(n, ".pred.json").is_some())? {
        let name = pred.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let id = strip_suffix_ci(name, ".pred.json").unwrap_or_default().to_string();
        let candidates = [id.clone(), base_id(&id).to_string()];
        match candidates
            .iter()
            .map(|c| a.reference.join(format!("{c}.json")))
            .find(|p| p.is_file())
        {
            Some(reference) => pairs.push(Pair {
                id,
                pred,
                reference,
            }),
            None => eprintln!("warning: {id}: no reference found, skipped"),
        }
    }

    let results = par::map(&pairs, cfg.execution, |p| score(p, &a.reference, &cfg));
    let mut rows = Vec::new();
    let mut failures = 0;
    for (pair, r) in pairs.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failures += 1;
                eprintln!("error: {}: {e:#}", pair.id);
            }
        }
    }
    let footers = footers(&rows)?;
    write_report(&a.out, &rows, &footers)?;
    Ok(Outcome::from_failures(failures))
}

/// One aggregate per group present, `no-overlap` first.
pub fn footers(rows: &[Row]) -> anyhow::Result<Vec<AggregateReport>> {
    let mut out = Vec::new();
    for group in [CLEAN_GROUP, OVERLAP_GROUP] {
        let reports: Vec<EvalReport> = rows
            .iter()
            .filter(|r| r.group == group)
            .map(|r| r.report.clone())
            .collect();
        if !reports.is_empty() {
            out.push(aggregate(&reports, group)?);
        }
    }
    Ok(out)
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_report(path: &Path, rows: &[Row], footers: &[AggregateReport]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(ROW_HEADER)?;
    for r in rows {
        let rep = &r.report;
        w.write_record([
            r.id.clone(),
            r.group.to_string(),
            num(rep.mse),
            num(rep.pearson),
            rep.lag.to_string(),
            rep.iou.map(num).unwrap_or_default(),
            rep.n_samples.to_string(),
        ])?;
    }
    w.write_record(FOOTER_HEADER)?;
    for f in footers {
        w.write_record([
            f.group.clone(),
            f.n.to_string(),
            num(f.mse_mean),
            num(f.mse_std),
            num(f.mse_max),
            num(f.rho_mean),
            num(f.rho_min),
            num(f.rho_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
