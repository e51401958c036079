//! Prequential evaluation metrics.
//!
//! Every metric reads a [`PredictionLog`] whose rows were logged predict-then-update, so
//! `error = pred − target` is a genuine out-of-sample error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Head;
use crate::streams::{ScenarioKind, ScenarioMetadata};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub pred: f64,
    pub target: f64,
    pub loss: f64,
    pub lambda: f64,
}

impl LogRow {
    pub fn error(&self) -> f64 {
        self.pred - self.target
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PredictionLog {
    pub head: Head,
    pub rows: Vec<LogRow>,
}

impl PredictionLog {
    pub fn new(head: Head) -> Self {
        PredictionLog {
            head,
            rows: Vec::new(),
        }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(LogRow::error).collect()
    }

    /// Index of the first row at or after `t`.
    fn first_at(&self, t: f64) -> usize {
        self.rows.partition_point(|r| r.t < t)
    }
}

/// Thresholds and windows of the derived metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Rolling window (samples) for recovery and spike detection.
    pub window: usize,
    /// Recovery threshold as a multiple of the pre-shift baseline.
    pub rho: f64,
    /// Samples discarded before the stability index.
    pub burn_in: usize,
    /// Samples on each side of a regime boundary for the forgetting ratio.
    pub forgetting_window: usize,
    pub epsilon: f64,
    /// Classification threshold; `pred >= threshold` predicts class 1.
    pub threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window: 10,
            rho: 1.2,
            burn_in: 20,
            forgetting_window: 50,
            epsilon: 1e-9,
            threshold: 0.5,
        }
    }
}

/// Metrics of one run. Inapplicable fields are absent, never zero-filled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forgetting_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_spike: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_error: Option<f64>,
}

impl MetricsRecord {
    pub const FIELDS: [&'static str; 8] = [
        "rmse",
        "accuracy",
        "ttr",
        "stability_index",
        "forgetting_ratio",
        "error_spike",
        "recovery_time",
        "cumulative_error",
    ];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.rmse,
            self.accuracy,
            self.ttr,
            self.stability_index,
            self.forgetting_ratio,
            self.error_spike,
            self.recovery_time,
            self.cumulative_error,
        ]
    }
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("rmse of an empty sequence".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Mean |error| over the `window` rows before `shift_time`, and the index of the first
/// row at or after it.
fn pre_shift_baseline(log: &PredictionLog, shift_time: f64, window: usize) -> Result<(f64, usize)> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let start = log.first_at(shift_time);
    if start < window {
        return Err(Error::InsufficientData(format!(
            "{start} samples before the shift, need {window}"
        )));
    }
    if start >= log.rows.len() {
        return Err(Error::InsufficientData("no samples after the shift".into()));
    }
    let b = mean(log.rows[start - window..start].iter().map(|r| r.error().abs()));
    Ok((b, start))
}

/// Time from `shift_time` until the rolling mean |error| over `window` post-shift rows
/// first drops to `rho` times the pre-shift baseline and stays there for `window`
/// consecutive rows. `f64::INFINITY` if it never does (including when the log ends
/// before the condition has been sustained).
pub fn time_to_recovery(log: &PredictionLog, shift_time: f64, window: usize, rho: f64) -> Result<f64> {
    if !(rho >= 1.0) {
        return Err(Error::InvalidArgument(format!("rho must be >= 1, got {rho}")));
    }
    let (baseline, start) = pre_shift_baseline(log, shift_time, window)?;
    let abs: Vec<f64> = log.rows[start..].iter().map(|r| r.error().abs()).collect();
    let threshold = rho * baseline;
    // ok[i]: the window ending at post-shift row i + window - 1 is within threshold
    let ok: Vec<bool> = abs
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64 <= threshold)
        .collect();
    let mut run = 0;
    for (i, &good) in ok.iter().enumerate() {
        run = if good { run + 1 } else { 0 };
        if run == window {
            let first = i + 1 - window;
            return Ok(log.rows[start + first + window - 1].t - shift_time);
        }
    }
    Ok(f64::INFINITY)
}

/// Population variance of the errors after the first `burn_in` entries.
pub fn stability_index(errors: &[f64], burn_in: usize) -> Result<f64> {
    if errors.len() <= burn_in + 1 {
        return Err(Error::InsufficientData(format!(
            "{} errors, need more than {}",
            errors.len(),
            burn_in + 1
        )));
    }
    let tail = &errors[burn_in..];
    let m = mean(tail.iter().copied());
    Ok(mean(tail.iter().map(|e| (e - m) * (e - m))))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftMetrics {
    pub error_spike: f64,
    pub recovery_time: f64,
    pub cumulative_error: f64,
}

/// Error spike, recovery time (at `rho`) and cumulative loss after a shift.
pub fn drift_metrics(log: &PredictionLog, shift_time: f64, window: usize, rho: f64) -> Result<DriftMetrics> {
    let (baseline, start) = pre_shift_baseline(log, shift_time, window)?;
    let end = (start + window).min(log.rows.len());
    let peak = log.rows[start..end]
        .iter()
        .map(|r| r.error().abs())
        .fold(0.0, f64::max);
    Ok(DriftMetrics {
        error_spike: peak - baseline,
        recovery_time: time_to_recovery(log, shift_time, window, rho)?,
        cumulative_error: log.rows[start..].iter().map(|r| r.loss).sum(),
    })
}

fn check_classification(log: &PredictionLog) -> Result<()> {
    if log.head != Head::BinaryDirection {
        return Err(Error::InvalidArgument("accuracy needs a classification log".into()));
    }
    Ok(())
}

fn accuracy_of(rows: &[LogRow], threshold: f64) -> f64 {
    let hits = rows
        .iter()
        .filter(|r| (r.pred >= threshold) == (r.target >= 0.5))
        .count();
    hits as f64 / rows.len() as f64
}

/// Fraction of rows where `pred >= threshold` agrees with the binary target.
pub fn accuracy(log: &PredictionLog, threshold: f64) -> Result<f64> {
    check_classification(log)?;
    if log.rows.is_empty() {
        return Err(Error::InsufficientData("accuracy of an empty log".into()));
    }
    Ok(accuracy_of(&log.rows, threshold))
}

/// Mean relative accuracy drop across regime boundaries.
pub fn forgetting_ratio(log: &PredictionLog, boundaries: &[f64], cfg: &MetricsConfig) -> Result<f64> {
    check_classification(log)?;
    if boundaries.is_empty() {
        return Err(Error::InsufficientData("no regime boundaries".into()));
    }
    let w = cfg.forgetting_window;
    let mut total = 0.0;
    for &b in boundaries {
        let i = log.first_at(b);
        if i < w || i + w > log.rows.len() {
            return Err(Error::InsufficientData(format!(
                "boundary at t={b} needs {w} samples on each side"
            )));
        }
        let pre = accuracy_of(&log.rows[i - w..i], cfg.threshold);
        let post = accuracy_of(&log.rows[i..i + w], cfg.threshold);
        total += (pre - post) / pre.max(cfg.epsilon);
    }
    Ok(total / boundaries.len() as f64)
}

/// Every metric applicable to the log's head and the scenario's ground truth.
pub fn evaluate(log: &PredictionLog, meta: &ScenarioMetadata, cfg: &MetricsConfig) -> MetricsRecord {
    let errors = log.errors();
    let mut rec = MetricsRecord {
        stability_index: stability_index(&errors, cfg.burn_in).ok(),
        ..MetricsRecord::default()
    };
    match log.head {
        Head::Regression => rec.rmse = rmse(&errors).ok(),
        Head::BinaryDirection => rec.accuracy = accuracy(log, cfg.threshold).ok(),
    }
    if let Some(shift) = meta.shift_time() {
        rec.ttr = time_to_recovery(log, shift, cfg.window, cfg.rho).ok();
        if let Ok(d) = drift_metrics(log, shift, cfg.window, cfg.rho) {
            rec.error_spike = Some(d.error_spike);
            rec.recovery_time = Some(d.recovery_time);
            rec.cumulative_error = Some(d.cumulative_error);
        }
    }
    if meta.kind == ScenarioKind::FinancialRegimes && log.head == Head::BinaryDirection {
        let boundaries: Vec<f64> = meta
            .regime_boundaries()
            .into_iter()
            .filter(|&b| {
                let i = log.first_at(b);
                i >= cfg.forgetting_window && i + cfg.forgetting_window <= log.rows.len()
            })
            .collect();
        rec.forgetting_ratio = forgetting_ratio(log, &boundaries, cfg).ok();
    }
    rec
}
