use ecg_digitize::grid::detect_grid;
use serde_json::json;

use super::load_image;
use crate::args::GridArgs;
use crate::commands::digitize::discover;
use crate::Outcome;
use ecg_digitize::pipeline::InputMode;

pub fn run(a: &GridArgs) -> anyhow::Result<Outcome> {
    let mut failures = 0;
    for job in discover(&a.input, InputMode::Raw)? {
        let line = match load_image(&job.path).map(|d| detect_grid(&d.into_color())) {
            Ok(Ok(g)) => json!({ "id": job.id, "status": "ok", "grid": g }),
            Ok(Err(e)) => {
                failures += 1;
                json!({ "id": job.id, "status": "error", "stage": "grid", "error": e.to_string() })
            }
            Err((stage, e)) => {
                failures += 1;
                json!({ "id": job.id, "status": "error", "stage": stage, "error": e })
            }
        };
        println!("{line}");
    }
    Ok(Outcome::from_failures(failures))
}
