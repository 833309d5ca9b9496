//! Signal and mask agreement metrics, plus table-style aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::DigitalSignal;
use crate::raster::BinaryMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {pred} vs {reference} samples")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("sampling rate mismatch: {pred} Hz vs {reference} Hz")]
    RateMismatch { pred: f64, reference: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation undefined for a constant signal")]
    ConstantSignal,
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("cannot aggregate an empty report list")]
    EmptyAggregate,
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().value() / values.len() as f64
}

pub fn mse_slices(pred: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let sum: CompensatedSum = reference
        .iter()
        .zip(pred)
        .map(|(g, p)| (g - p) * (g - p))
        .collect();
    Ok(sum.value() / pred.len() as f64)
}

pub fn pearson_slices(pred: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: pred.len(),
        });
    }
    let (mg, mp) = (compensated_mean(reference), compensated_mean(pred));
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    for (g, p) in reference.iter().zip(pred) {
        let (dg, dp) = (g - mg, p - mp);
        sxy.add(dg * dp);
        sxx.add(dg * dg);
        syy.add(dp * dp);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(MetricsError::ConstantSignal);
    }
    Ok((sxy.value() / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_rates(pred: &DigitalSignal, reference: &DigitalSignal) -> Result<(), MetricsError> {
    if pred.fs() != reference.fs() {
        return Err(MetricsError::RateMismatch {
            pred: pred.fs(),
            reference: reference.fs(),
        });
    }
    Ok(())
}

/// Mean squared error in mV².
pub fn mse(pred: &DigitalSignal, reference: &DigitalSignal) -> Result<f64, MetricsError> {
    check_rates(pred, reference)?;
    mse_slices(pred.samples(), reference.samples())
}

/// Pearson correlation coefficient.
pub fn pearson(pred: &DigitalSignal, reference: &DigitalSignal) -> Result<f64, MetricsError> {
    check_rates(pred, reference)?;
    pearson_slices(pred.samples(), reference.samples())
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::DimensionMismatch(
            (a.width(), a.height()),
            (b.width(), b.height()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Evaluation of one prediction against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub pearson: f64,
    pub lag: i64,
    pub iou: Option<f64>,
    pub n_samples: usize,
}

/// Summary statistics over a group of reports. Standard deviations are
/// population (divide by n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub group: String,
    pub n: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mse_max: f64,
    pub rho_mean: f64,
    pub rho_min: f64,
    pub rho_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = compensated_mean(values);
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value()
        / values.len() as f64;
    (mean, var.max(0.0).sqrt())
}

pub fn aggregate(reports: &[EvalReport], group: &str) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let mses: Vec<f64> = reports.iter().map(|r| r.mse).collect();
    let rhos: Vec<f64> = reports.iter().map(|r| r.pearson).collect();
    let (mse_mean, mse_std) = mean_std(&mses);
    let (rho_mean, rho_std) = mean_std(&rhos);
    Ok(AggregateReport {
        group: group.to_string(),
        n: reports.len(),
        mse_mean,
        mse_std,
        mse_max: mses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rho_mean,
        rho_min: rhos.iter().copied().fold(f64::INFINITY, f64::min),
        rho_std,
    })
}
