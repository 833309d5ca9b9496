use ecg_digitize::binarize::{adaptive_binarize, HedgingParams, StopReason};
use ecg_digitize::calibrate::DigitalSignal;
use ecg_digitize::grid::{detect_grid, GridError};
use ecg_digitize::metrics::iou;
use ecg_digitize::pipeline::{
    digitize, evaluate, DigitizeInput, GridFallback, InputMode, PipelineConfig,
};
use ecg_digitize::raster::{to_grayscale, RasterImage};
use ecg_digitize::synth::{gen_signal, inject_overlap, rasterize, RenderSpec, SignalSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn truth_for(spec: &RenderSpec, seed: u64) -> DigitalSignal {
    let s = SignalSpec::randomized(seed, spec.canvas_duration(), 0.8 * spec.voltage_span_mv());
    gen_signal(&s, 100.0).unwrap()
}

fn mask_cfg() -> PipelineConfig {
    PipelineConfig {
        mode: InputMode::Mask,
        ..PipelineConfig::default()
    }
}

/// Rows `round(off + k * s)` inside `[0, limit)`.
fn rendered_lines(off: f64, s: f64, limit: usize) -> usize {
    (-2..200)
        .map(|k| (off + k as f64 * s).round())
        .filter(|&p| p >= 0.0 && p < limit as f64)
        .count()
}

#[test]
fn clean_mask_round_trip_across_spacings() {
    for spacing in [30.0, 40.0, 50.0] {
        let spec = RenderSpec::square(spacing);
        for seed in 0..8 {
            let truth = truth_for(&spec, seed);
            let r = rasterize(&truth, &spec).unwrap();
            let d = digitize(
                DigitizeInput::Mask {
                    mask: &r.mask,
                    companion: Some(&r.image),
                },
                &mask_cfg(),
            )
            .unwrap();
            let rep = evaluate(&d.signal, &truth, &mask_cfg()).unwrap();
            assert!(
                rep.pearson >= 0.99 && rep.mse <= 1e-3,
                "spacing {spacing} seed {seed}: {rep:?}"
            );
        }
    }
}

#[test]
fn grid_recovery_and_square_fallback() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fallbacks = 0;
    for i in 0..40u64 {
        let spacing = [20.0, 30.0, 40.0, 50.0][i as usize % 4];
        let mut spec = RenderSpec::square(spacing);
        spec.offset_x = rng.random_range(0.0..spacing);
        spec.offset_y = rng.random_range(0.0..spacing);
        spec.minor_lines = rng.random_bool(0.5);
        if i % 3 == 0 {
            spec.height = spacing as usize + rng.random_range(0..6);
        }
        let truth = truth_for(&spec, i);
        let r = rasterize(&truth, &spec).unwrap();
        let g = detect_grid(&r.image).unwrap();
        assert!((g.width_pixels - spacing).abs() <= 1.0, "render {i}: {g:?}");
        let rows = rendered_lines(spec.offset_y, spacing, spec.height);
        assert_eq!(g.square_assumed, rows < 2, "render {i}: {rows} rows, {g:?}");
        fallbacks += g.square_assumed as usize;
        if !g.square_assumed {
            assert!((g.height_pixels - spacing).abs() <= 1.0, "render {i}: {g:?}");
        }
    }
    assert!(fallbacks > 0);
}

#[test]
fn hedging_strips_grid_keeps_trace() {
    for seed in 0..10 {
        let spec = RenderSpec::default();
        let truth = truth_for(&spec, seed);
        let r = rasterize(&truth, &spec).unwrap();
        let (mask, trace) = adaptive_binarize(&to_grayscale(&r.image), HedgingParams::default());
        let kept_trace = (0..r.mask.pixels().len())
            .filter(|&i| r.mask.pixels()[i] && mask.pixels()[i])
            .count();
        let grid: Vec<usize> = (0..r.image.pixels().len())
            .filter(|&i| r.image.pixels()[i] == spec.palette.bold)
            .collect();
        let kept_grid = grid.iter().filter(|&&i| mask.pixels()[i]).count();
        assert!(kept_trace as f64 >= 0.95 * r.mask.count() as f64);
        assert!(kept_grid as f64 <= 0.05 * grid.len() as f64);
        assert_eq!(trace.stop_reason, StopReason::GridGone);
        for (k, f) in trace.factors.iter().enumerate() {
            assert!((f - 0.95f64.powi(k as i32)).abs() < 1e-12);
        }
    }
}

#[test]
fn raw_path_matches_clean_mask_on_tri_level_renders() {
    let spec = RenderSpec::default();
    let truth = truth_for(&spec, 42);
    let r = rasterize(&truth, &spec).unwrap();
    let raw = digitize(DigitizeInput::Raw(&r.image), &PipelineConfig::default()).unwrap();
    assert!(raw.diagnostics.hedging.is_some());
    let rep = evaluate(&raw.signal, &truth, &PipelineConfig::default()).unwrap();
    assert!(rep.pearson >= 0.99, "{rep:?}");
}

#[test]
fn overlap_contaminates_mask_and_degrades_trace() {
    let spec = RenderSpec::default();
    let truth = truth_for(&spec, 1);
    let other = truth_for(&spec, 1001);
    let r = rasterize(&truth, &spec).unwrap();
    let o = inject_overlap(&r.image, &r.mask, &other, &spec, 1).unwrap();
    assert!(r.mask.is_subset_of(&o.mask));
    assert!(iou(&r.mask, &o.mask).unwrap() < 1.0);
    let cfg = mask_cfg();
    let clean = digitize(
        DigitizeInput::Mask {
            mask: &r.mask,
            companion: Some(&r.image),
        },
        &cfg,
    )
    .unwrap();
    let dirty = digitize(
        DigitizeInput::Mask {
            mask: &o.mask,
            companion: Some(&o.image),
        },
        &cfg,
    )
    .unwrap();
    let a = evaluate(&clean.signal, &truth, &cfg).unwrap();
    let b = evaluate(&dirty.signal, &truth, &cfg).unwrap();
    assert!(b.mse >= a.mse);
}

#[test]
fn gridless_image_reports_grid_stage() {
    let spec = RenderSpec::default();
    let truth = truth_for(&spec, 3);
    let mut r = rasterize(&truth, &spec).unwrap();
    let mut img = RasterImage::filled(960, 96, [255, 255, 255]).unwrap();
    for y in 0..96 {
        for x in 0..960 {
            if r.mask.get(x, y) {
                img.set(x, y, [30, 30, 30]);
            }
        }
    }
    r.image = img;
    assert!(matches!(
        detect_grid(&r.image),
        Err(GridError::EmptyGrid | GridError::Undetected { .. })
    ));
    let err = digitize(DigitizeInput::Raw(&r.image), &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.stage(), "grid");
    let cfg = PipelineConfig {
        grid_fallback: GridFallback::AssumeSquareDefault,
        ..PipelineConfig::default()
    };
    let d = digitize(DigitizeInput::Raw(&r.image), &cfg).unwrap();
    assert!(d.diagnostics.grid.square_assumed);
    let rep = evaluate(&d.signal, &truth, &cfg).unwrap();
    assert!(rep.pearson >= 0.99);
}

#[test]
fn white_noise_does_not_correlate() {
    let spec = RenderSpec::default();
    let truth = truth_for(&spec, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let noise: Vec<f64> = (0..truth.len()).map(|_| normal.sample(&mut rng)).collect();
    let pred = DigitalSignal::new(100.0, noise).unwrap();
    let rep = evaluate(&pred, &truth, &PipelineConfig::default()).unwrap();
    assert!(rep.n_samples >= 200);
    assert!(rep.pearson.abs() < 0.3, "{rep:?}");
}

#[test]
fn batch_is_order_preserving_and_deterministic() {
    use ecg_digitize::par::Execution;
    use ecg_digitize::pipeline::digitize_batch;
    let spec = RenderSpec::default();
    let renders: Vec<_> = (0..6)
        .map(|s| rasterize(&truth_for(&spec, s), &spec).unwrap())
        .collect();
    let inputs: Vec<_> = renders.iter().map(|r| DigitizeInput::Raw(&r.image)).collect();
    let run = |execution| {
        let cfg = PipelineConfig {
            execution,
            ..PipelineConfig::default()
        };
        digitize_batch(&inputs, &cfg)
            .into_iter()
            .map(|d| d.unwrap().signal)
            .collect::<Vec<_>>()
    };
    let seq = run(Execution::Sequential);
    assert_eq!(seq, run(Execution::Parallel));
    for (r, s) in renders.iter().zip(&seq) {
        let single = digitize(DigitizeInput::Raw(&r.image), &PipelineConfig::default()).unwrap();
        assert_eq!(&single.signal, s);
    }
}
