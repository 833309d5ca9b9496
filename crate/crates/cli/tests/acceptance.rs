//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Bounds and budgets are fixed constants below.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ecg_digitize::binarize::{adaptive_binarize, otsu_from_histogram, HedgingParams, StopReason};
use ecg_digitize::calibrate::{align_lag, remove_baseline, DigitalSignal};
use ecg_digitize::grid::detect_grid;
use ecg_digitize::metrics::{aggregate, iou, mse, pearson, EvalReport};
use ecg_digitize::pipeline::{digitize, evaluate, DigitizeInput, InputMode, PipelineConfig};
use ecg_digitize::raster::{to_grayscale, BinaryMask, GrayImage};
use ecg_digitize::synth::{corpus_sample, gen_signal, rasterize, RenderSpec, SignalSpec};
use ecg_digitize::trace::{least_cost_path, TraceParams, TIE_TOLERANCE};
use num::{BigInt, BigRational, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TREND_MIN_PER_GROUP: usize = 50;
const TREND_BUDGET: Duration = Duration::from_secs(60);

const ROUND_TRIP_SAMPLES: usize = 100;
const ROUND_TRIP_MIN_SPACING: f64 = 30.0;
const ROUND_TRIP_THICKNESS: usize = 2;
const ROUND_TRIP_MIN_RHO: f64 = 0.99;
const ROUND_TRIP_MAX_MSE: f64 = 0.001;
const ROUND_TRIP_MIN_FRACTION: f64 = 0.95;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(30);

const OTSU_CASES: usize = 1000;
const OTSU_BUDGET: Duration = Duration::from_secs(5);

const VITERBI_CASES: usize = 500;
const VITERBI_MAX_COLUMNS: usize = 8;
const VITERBI_MAX_NODES: usize = 4;
const VITERBI_BUDGET: Duration = Duration::from_secs(5);

const GRID_SPACINGS: [f64; 4] = [20.0, 30.0, 40.0, 50.0];
const GRID_RENDERS: usize = 40;
const GRID_TOLERANCE_PX: f64 = 1.0;
const GRID_BUDGET: Duration = Duration::from_secs(10);

const HEDGE_MIN_TRACE_KEPT: f64 = 0.95;
const HEDGE_MAX_GRID_KEPT: f64 = 0.05;
const HEDGE_STEP: f64 = 0.95;
const HEDGE_FLOOR: f64 = 0.6;
const HEDGE_BUDGET: Duration = Duration::from_secs(10);

const MAX_SHIFT: i64 = 10;
const BASELINE_RHO_TOLERANCE: f64 = 1e-12;
const METRIC_TOLERANCE: f64 = 1e-12;

type Verdict = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Verdict,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "trend reproduction", budget: Some(TREND_BUDGET), check: trend },
        Criterion { name: "round-trip fidelity", budget: Some(ROUND_TRIP_BUDGET), check: round_trip },
        Criterion { name: "otsu oracle", budget: Some(OTSU_BUDGET), check: otsu_oracle },
        Criterion { name: "viterbi oracle", budget: Some(VITERBI_BUDGET), check: viterbi_oracle },
        Criterion { name: "grid recovery", budget: Some(GRID_BUDGET), check: grid_recovery },
        Criterion { name: "hedging behavior", budget: Some(HEDGE_BUDGET), check: hedging },
        Criterion { name: "post-processing contracts", budget: None, check: post_processing },
        Criterion { name: "metric formulas", budget: None, check: metric_formulas },
        Criterion { name: "determinism", budget: None, check: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let verdict = (c.check)();
        let elapsed = start.elapsed();
        let verdict = match (verdict, c.budget) {
            (Ok(msg), Some(b)) if elapsed > b => {
                Err(format!("{msg}; took {elapsed:.2?}, budget {b:?}"))
            }
            (v, _) => v,
        };
        match verdict {
            Ok(msg) => println!("PASS  {:<28} {msg} [{elapsed:.2?}]", c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {:<28} {msg} [{elapsed:.2?}]", c.name);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mask_input<'a>(
    mask: &'a BinaryMask,
    companion: &'a ecg_digitize::RasterImage,
) -> DigitizeInput<'a> {
    DigitizeInput::Mask {
        mask,
        companion: Some(companion),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn trend() -> Verdict {
    let n = 60;
    let base = RenderSpec::default();
    let mask_cfg = PipelineConfig {
        mode: InputMode::Mask,
        ..PipelineConfig::default()
    };
    let raw_cfg = PipelineConfig::default();
    let run = |r: Result<_, _>, truth: &DigitalSignal| -> Result<EvalReport, String> {
        let d: ecg_digitize::pipeline::Digitization = r.map_err(|e: ecg_digitize::PipelineError| e.to_string())?;
        evaluate(&d.signal, truth, &mask_cfg).map_err(|e| e.to_string())
    };
    let (mut clean, mut dirty_mask, mut dirty_raw) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let c = corpus_sample(1, i, false, &base, 100.0, 0.0).map_err(|e| e.to_string())?;
        let r = &c.rendering;
        clean.push(run(digitize(mask_input(&r.mask, &r.image), &mask_cfg), &c.truth)?);

        let o = corpus_sample(1, 1000 + i, true, &base, 100.0, 0.0).map_err(|e| e.to_string())?;
        let ov = o.overlay.as_ref().expect("overlap requested");
        dirty_mask.push(run(digitize(mask_input(&ov.mask, &ov.image), &mask_cfg), &o.truth)?);
        dirty_raw.push(run(digitize(DigitizeInput::Raw(&ov.image), &raw_cfg), &o.truth)?);
    }
    ensure(n as usize >= TREND_MIN_PER_GROUP, || "corpus too small".into())?;
    let stats = |v: &[EvalReport]| {
        (
            mean(&v.iter().map(|r| r.pearson).collect::<Vec<_>>()),
            mean(&v.iter().map(|r| r.mse).collect::<Vec<_>>()),
        )
    };
    let (rc, mc) = stats(&clean);
    let (rd, md) = stats(&dirty_mask);
    let (rr, mr) = stats(&dirty_raw);
    let msg = format!(
        "clean rho {rc:.4} mse {mc:.2e}; contaminated mask rho {rd:.4} mse {md:.2e}; contaminated raw rho {rr:.4} mse {mr:.2e} (n={n} per group)"
    );
    ensure(rd < rc && md > mc && rr < rc && mr > mc, || msg.clone())?;
    Ok(msg)
}

fn round_trip() -> Verdict {
    let cfg = PipelineConfig {
        mode: InputMode::Mask,
        ..PipelineConfig::default()
    };
    let spacings = [30.0, 40.0, 50.0];
    let mut good = 0;
    let mut worst = (f64::INFINITY, 0.0f64);
    for i in 0..ROUND_TRIP_SAMPLES {
        let spacing = spacings[i % spacings.len()];
        assert!(spacing >= ROUND_TRIP_MIN_SPACING);
        let base = RenderSpec {
            thickness: ROUND_TRIP_THICKNESS,
            ..RenderSpec::square(spacing)
        };
        let s = corpus_sample(2, i as u64, false, &base, 100.0, 0.0).map_err(|e| e.to_string())?;
        let r = &s.rendering;
        let d = digitize(mask_input(&r.mask, &r.image), &cfg).map_err(|e| e.to_string())?;
        let rep = evaluate(&d.signal, &s.truth, &cfg).map_err(|e| e.to_string())?;
        worst = (worst.0.min(rep.pearson), worst.1.max(rep.mse));
        if rep.pearson >= ROUND_TRIP_MIN_RHO && rep.mse <= ROUND_TRIP_MAX_MSE {
            good += 1;
        }
    }
    let frac = good as f64 / ROUND_TRIP_SAMPLES as f64;
    let msg = format!(
        "{good}/{ROUND_TRIP_SAMPLES} within rho >= {ROUND_TRIP_MIN_RHO}, mse <= {ROUND_TRIP_MAX_MSE}; worst rho {:.5}, worst mse {:.2e}",
        worst.0, worst.1
    );
    ensure(frac >= ROUND_TRIP_MIN_FRACTION, || msg.clone())?;
    Ok(msg)
}

fn otsu_reference(hist: &[u64; 256]) -> (u8, bool) {
    let levels: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if levels.len() == 1 {
        return (levels[0] as u8, true);
    }
    let big = |v: u128| BigRational::from_integer(BigInt::from(v));
    // Sum of squared deviations from the class mean, exact.
    let scatter = |lo: usize, hi: usize| -> BigRational {
        let (mut n, mut s, mut q) = (0u128, 0u128, 0u128);
        for (i, &c) in hist.iter().enumerate().take(hi).skip(lo) {
            let c = c as u128;
            n += c;
            s += c * i as u128;
            q += c * (i * i) as u128;
        }
        if n == 0 {
            BigRational::zero()
        } else {
            big(q) - big(s) * big(s) / big(n)
        }
    };
    let mut best: Option<(usize, BigRational)> = None;
    for t in 0..255 {
        let n0: u64 = hist[..=t].iter().sum();
        if n0 == 0 || n0 == hist.iter().sum::<u64>() {
            continue;
        }
        let within = scatter(0, t + 1) + scatter(t + 1, 256);
        if best.as_ref().is_none_or(|(_, b)| within < *b) {
            best = Some((t, within));
        }
    }
    (best.expect("two levels").0 as u8, false)
}

fn otsu_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..OTSU_CASES {
        let mut h = [0u64; 256];
        match case % 3 {
            0 => h.iter_mut().for_each(|c| *c = rng.random_range(0..40)),
            1 => {
                for _ in 0..rng.random_range(1..=5) {
                    h[rng.random_range(0..256)] += rng.random_range(1..3000);
                }
            }
            _ => {
                let a = rng.random_range(0..128);
                let c = rng.random_range(1..50);
                h[a] = c;
                h[255 - a] = c;
            }
        }
        let got = otsu_from_histogram(&h);
        let want = otsu_reference(&h);
        ensure((got.threshold, got.degenerate) == want, || {
            format!("case {case}: got {got:?}, exhaustive {want:?}")
        })?;
    }
    Ok(format!("{OTSU_CASES} histograms match exhaustive minimization exactly"))
}

fn path_cost_reference(rows: &[f64], p: &TraceParams) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for w in rows.windows(2) {
        let dy = w[1] - w[0];
        let angle = dy.atan2(1.0);
        let turn = prev.map_or(0.0, |a| (angle - a).abs());
        total += p.alpha * (1.0 + dy * dy).sqrt() + (1.0 - p.alpha) * p.angle_scale * turn;
        prev = Some(angle);
    }
    total
}

fn enumerate_paths(cols: &[Vec<f64>], p: &TraceParams) -> (Vec<f64>, f64) {
    let total: usize = cols.iter().map(Vec::len).product();
    let paths: Vec<(Vec<f64>, f64)> = (0..total)
        .map(|mut code| {
            // Mixed-radix decode, last column fastest: lexicographic order.
            let mut rows = vec![0.0; cols.len()];
            for (i, c) in cols.iter().enumerate().rev() {
                rows[i] = c[code % c.len()];
                code /= c.len();
            }
            let cost = path_cost_reference(&rows, p);
            (rows, cost)
        })
        .collect();
    let best = paths.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    paths.into_iter().find(|x| x.1 <= best + tol).expect("non-empty")
}

fn viterbi_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..VITERBI_CASES {
        let cols: Vec<Vec<f64>> = (0..rng.random_range(1..=VITERBI_MAX_COLUMNS))
            .map(|_| {
                let mut c: Vec<f64> = Vec::new();
                let n = rng.random_range(1..=VITERBI_MAX_NODES);
                while c.len() < n {
                    let v = if case % 2 == 0 {
                        rng.random_range(0..10) as f64
                    } else {
                        rng.random_range(0.0..40.0)
                    };
                    if !c.contains(&v) {
                        c.push(v);
                    }
                }
                c.sort_by(f64::total_cmp);
                c
            })
            .collect();
        let params = TraceParams {
            alpha: rng.random_range(0.0..=1.0),
            angle_scale: rng.random_range(0.0..4.0),
        };
        let (rows, cost) = least_cost_path(&cols, &params);
        let (want_rows, want_cost) = enumerate_paths(&cols, &params);
        ensure(rows == want_rows && cost == want_cost, || {
            format!("case {case}: dp {rows:?} ({cost}) vs brute {want_rows:?} ({want_cost})")
        })?;
    }
    Ok(format!(
        "{VITERBI_CASES} instances (<= {VITERBI_MAX_COLUMNS} columns, <= {VITERBI_MAX_NODES} nodes) match path and cost exactly"
    ))
}

fn rendered_rows(offset: f64, spacing: f64, height: usize) -> usize {
    (-2..200)
        .map(|k| (offset + k as f64 * spacing).round())
        .filter(|&y| y >= 0.0 && y < height as f64)
        .count()
}

fn grid_recovery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst, mut fallbacks) = (0.0f64, 0);
    for i in 0..GRID_RENDERS {
        let spacing = GRID_SPACINGS[i % GRID_SPACINGS.len()];
        let mut base = RenderSpec::square(spacing);
        base.minor_lines = i % 2 == 1;
        if i % 3 == 0 {
            base.height = spacing as usize + rng.random_range(0..8);
        }
        let s = corpus_sample(3, i as u64, false, &base, 100.0, 0.0).map_err(|e| e.to_string())?;
        let g = detect_grid(&s.rendering.image).map_err(|e| format!("render {i}: {e}"))?;
        let err = (g.width_pixels - spacing).abs();
        worst = worst.max(err);
        ensure(err <= GRID_TOLERANCE_PX, || format!("render {i}: spacing {spacing}, got {g:?}"))?;
        let rows = rendered_rows(s.render_spec.offset_y, spacing, base.height);
        ensure(g.square_assumed == (rows < 2), || {
            format!("render {i}: {rows} rendered rows but square_assumed = {}", g.square_assumed)
        })?;
        fallbacks += g.square_assumed as usize;
    }
    ensure(fallbacks > 0, || "no render exercised the square fallback".into())?;
    Ok(format!(
        "{GRID_RENDERS} renders, max width error {worst:.3} px; square fallback on {fallbacks} renders with < 2 rows"
    ))
}

fn hedging() -> Verdict {
    let (mut min_trace, mut max_grid) = (1.0f64, 0.0f64);
    for seed in 0..20u64 {
        let spec = RenderSpec::default();
        let s = SignalSpec::randomized(seed, spec.canvas_duration(), 0.8 * spec.voltage_span_mv());
        let r = rasterize(&gen_signal(&s, 100.0).map_err(|e| e.to_string())?, &spec)
            .map_err(|e| e.to_string())?;
        let (mask, trace) = adaptive_binarize(&to_grayscale(&r.image), HedgingParams::default());
        let px = mask.pixels();
        let trace_kept = r.mask.pixels().iter().zip(px).filter(|(t, m)| **t && **m).count();
        let grid: Vec<usize> = (0..px.len())
            .filter(|&i| r.image.pixels()[i] == spec.palette.bold)
            .collect();
        let grid_kept = grid.iter().filter(|&&i| px[i]).count();
        min_trace = min_trace.min(trace_kept as f64 / r.mask.count() as f64);
        max_grid = max_grid.max(grid_kept as f64 / grid.len() as f64);
        check_schedule(&trace.factors, trace.stop_reason)?;
    }
    ensure(min_trace >= HEDGE_MIN_TRACE_KEPT && max_grid <= HEDGE_MAX_GRID_KEPT, || {
        format!("trace kept {min_trace:.4}, grid kept {max_grid:.4}")
    })?;

    // A grid as dark as the trace never disappears, so the floor is reached.
    let (w, h) = (200, 60);
    let mut px = vec![250u8; w * h];
    for y in 0..h {
        for x in (0..w).step_by(40) {
            px[y * w + x] = 0;
        }
    }
    let img = GrayImage::new(w, h, px).unwrap();
    let (_, t) = adaptive_binarize(&img, HedgingParams::default());
    check_schedule(&t.factors, t.stop_reason)?;
    ensure(t.stop_reason == StopReason::FloorReached && t.factors.len() == 11, || {
        format!("persistent grid: {:?} after {:?}", t.stop_reason, t.factors)
    })?;
    Ok(format!(
        "min trace kept {min_trace:.4}, max grid kept {max_grid:.4}; persistent grid clamps at {HEDGE_FLOOR} after {} factors",
        t.factors.len()
    ))
}

/// Factors must be `max(step^k, floor)`, ending at the floor only if clamped.
fn check_schedule(factors: &[f64], stop: StopReason) -> Result<(), String> {
    for (k, &f) in factors.iter().enumerate() {
        let expected = HEDGE_STEP.powi(k as i32).max(HEDGE_FLOOR);
        ensure((f - expected).abs() < 1e-12, || format!("factor {k} = {f}, expected {expected}"))?;
    }
    if stop == StopReason::FloorReached {
        ensure(*factors.last().unwrap() == HEDGE_FLOOR, || "floor not hit exactly".into())?;
    }
    Ok(())
}

fn post_processing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    let mut worst_rho = 0.0f64;
    for trial in 0..5u64 {
        let base: Vec<f64> = (0..340)
            .map(|i| (i as f64 * 0.17).sin() + 0.5 * (i as f64 * 0.043 + trial as f64).cos() + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        let reference = DigitalSignal::new(100.0, base[20..320].to_vec()).unwrap();
        for k in -MAX_SHIFT..=MAX_SHIFT {
            let start = (20 + k) as usize;
            // pred[j] = ref[j + k]
            let pred = DigitalSignal::new(100.0, base[start..start + 300].to_vec()).unwrap();
            let got = align_lag(&pred, &reference, MAX_SHIFT as usize).map_err(|e| e.to_string())?.lag;
            ensure(got == k, || format!("trial {trial}: injected {k}, recovered {got}"))?;
            checked += 1;
        }
        let offset: Vec<f64> = reference.samples().iter().map(|v| v * 1.7 + 0.8).collect();
        let noisy: Vec<f64> = offset.iter().map(|v| v + 0.2 * rng.random_range(-1.0..1.0)).collect();
        let p = DigitalSignal::new(100.0, noisy).unwrap();
        let before = pearson(&p, &reference).map_err(|e| e.to_string())?;
        let after = pearson(&remove_baseline(&p), &remove_baseline(&reference)).map_err(|e| e.to_string())?;
        worst_rho = worst_rho.max((before - after).abs());
    }
    ensure(worst_rho < BASELINE_RHO_TOLERANCE, || format!("baseline changed rho by {worst_rho:e}"))?;
    Ok(format!(
        "{checked} injected shifts recovered exactly; baseline removal moves rho by at most {worst_rho:.1e}"
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRIC_TOLERANCE
}

fn metric_formulas() -> Verdict {
    let s = |v: &[f64]| DigitalSignal::new(100.0, v.to_vec()).unwrap();
    let r = s(&[0.0, 1.0, 2.0]);
    ensure(close(mse(&s(&[0.0, 2.0, 2.0]), &r).unwrap(), 1.0 / 3.0), || "mse 1/3".into())?;
    ensure(close(mse(&s(&[0.1, 1.1, 2.1]), &r).unwrap(), 0.01), || "mse 0.01".into())?;
    // x = 1..4, y = 2,4,5,4: Sxy = 3.5, Sxx = 5, Syy = 4.75.
    let rho = pearson(&s(&[2.0, 4.0, 5.0, 4.0]), &s(&[1.0, 2.0, 3.0, 4.0])).unwrap();
    ensure(close(rho, 3.5 / (5.0f64 * 4.75).sqrt()), || format!("pearson {rho}"))?;
    ensure(close(pearson(&s(&[0.0, -1.0, -3.0, -2.0]), &s(&[0.0, 1.0, 3.0, 2.0])).unwrap(), -1.0), || {
        "pearson -1".into()
    })?;
    let m = |v: &[bool]| BinaryMask::new(v.len(), 1, v.to_vec()).unwrap();
    let j = iou(&m(&[true, true, false, false]), &m(&[false, true, true, false])).unwrap();
    ensure(close(j, 1.0 / 3.0), || format!("iou {j}"))?;
    ensure(iou(&m(&[false; 3]), &m(&[false; 3])).unwrap() == 1.0, || "empty iou".into())?;

    // Aggregate against a direct two-pass computation.
    let reports: Vec<EvalReport> = [(0.001, 0.91), (0.004, 0.97), (0.0025, 0.88), (0.0, 1.0)]
        .iter()
        .map(|&(mse, pearson)| EvalReport { mse, pearson, lag: 0, iou: None, n_samples: 10 })
        .collect();
    let agg = aggregate(&reports, "g").unwrap();
    let mses: Vec<f64> = reports.iter().map(|r| r.mse).collect();
    let rhos: Vec<f64> = reports.iter().map(|r| r.pearson).collect();
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    };
    ensure(
        close(agg.mse_mean, mean(&mses))
            && close(agg.mse_std, std(&mses))
            && agg.mse_max == 0.004
            && close(agg.rho_mean, mean(&rhos))
            && agg.rho_min == 0.88
            && close(agg.rho_std, std(&rhos)),
        || format!("aggregate {agg:?}"),
    )?;

    // The CLI footer carries the library aggregate bit for bit.
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus");
    let preds = tmp.path().join("preds");
    let report = tmp.path().join("report.csv");
    run_ecgd(&["synth", "--out", p(&corpus), "--n-clean", "4", "--n-overlap", "3", "--seed", "9"])?;
    run_ecgd(&["digitize", "--mode", "mask", "--input", p(&corpus), "--out", p(&preds)])?;
    run_ecgd(&["evaluate", "--pred", p(&preds), "--ref", p(&corpus), "--out", p(&report)])?;
    let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let split = lines.iter().position(|l| l[0] == "group").ok_or("no footer")?;
    let mut footers = 0;
    for f in &lines[split + 1..] {
        let rows: Vec<EvalReport> = lines[1..split]
            .iter()
            .filter(|r| r[1] == f[0])
            .map(|r| EvalReport {
                mse: r[2].parse().unwrap(),
                pearson: r[3].parse().unwrap(),
                lag: r[4].parse().unwrap(),
                iou: r[5].parse().ok(),
                n_samples: r[6].parse().unwrap(),
            })
            .collect();
        let a = aggregate(&rows, f[0]).map_err(|e| e.to_string())?;
        let got: Vec<f64> = f[2..8].iter().map(|v| v.parse().unwrap()).collect();
        let want = [a.mse_mean, a.mse_std, a.mse_max, a.rho_mean, a.rho_min, a.rho_std];
        ensure(got == want && f[1] == a.n.to_string(), || format!("footer {f:?} vs {a:?}"))?;
        footers += 1;
    }
    ensure(footers == 2, || format!("{footers} footers"))?;
    Ok(format!("hand values within {METRIC_TOLERANCE:e}; {footers} CLI footers equal the library aggregate exactly"))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn run_ecgd(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecgd"))
        .args(args)
        .env_remove("ECGD_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("ecgd {args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

/// Every file under `dir`, with wall-clock timings dropped from manifests.
fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() {
            for (k, v) in snapshot(&path)? {
                out.insert(format!("{name}/{k}"), v);
            }
            continue;
        }
        let mut bytes = fs::read(&path).map_err(|e| e.to_string())?;
        if name == "manifest.json" {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            for s in v["samples"].as_array_mut().into_iter().flatten() {
                s.as_object_mut().map(|o| o.remove("timings_ms"));
            }
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(name, bytes);
    }
    Ok(out)
}

fn determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let run = |root: &Path| -> Result<(), String> {
        let corpus = root.join("corpus");
        run_ecgd(&["synth", "--out", p(&corpus), "--n-clean", "4", "--n-overlap", "3", "--seed", "17"])?;
        for mode in ["raw", "mask"] {
            let preds = root.join(format!("pred-{mode}"));
            run_ecgd(&["digitize", "--mode", mode, "--input", p(&corpus), "--out", p(&preds), "--emit-diagnostics"])?;
            run_ecgd(&[
                "evaluate", "--pred", p(&preds), "--ref", p(&corpus),
                "--out", p(&root.join(format!("report-{mode}.csv"))),
            ])?;
        }
        Ok(())
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a)?;
    run(&b)?;
    let (fa, fb) = (snapshot(&a)?, snapshot(&b)?);
    ensure(fa.keys().eq(fb.keys()), || "file sets differ".into())?;
    let differing: Vec<&String> = fa.keys().filter(|k| fa[*k] != fb[*k]).collect();
    ensure(differing.is_empty(), || format!("differs: {differing:?}"))?;
    let n_json = fa.keys().filter(|k| k.ends_with(".json")).count();
    let n_csv = fa.keys().filter(|k| k.ends_with(".csv")).count();
    Ok(format!(
        "{} files identical across two runs ({n_json} JSON, {n_csv} CSV; manifest timings excluded)",
        fa.len()
    ))
}
