//! Online training loop.
//!
//! Each arriving sample is first predicted with the current parameters (the prequential
//! record), then its descent direction `g = −∇L_total` is computed and buffered, and the
//! parameters are rebuilt:
//!
//! * `RiemannSum`: `theta = theta0 + Σ_i K(t, tau_i) g_i dt_eff` over the buffer,
//!   with `dt_eff = dt` (`DtScaled`) or `1` (`UnitWeighted`).
//! * `OdeFlow`: `theta` is integrated from the previous sample time to the new one under
//!   `dtheta/dt = (dt_eff/dt) Σ_i ∂K/∂t g_i dt + (dt_eff/Δ) K(t, t) g(theta)`, with the
//!   buffer frozen, `Δ` the sample spacing and `g(theta)` the live direction of the
//!   arriving sample. The buffered direction is the interval average of that live term.
//! * `SgdBaseline`: `theta ← theta − eta ∇L_total`.
//!
//! Storing `g = −∇L` (rather than `∇L`) is what makes the additive integral rule descend.

use serde::{Deserialize, Serialize};

use crate::buffer::{regularized_loss, BufferEntry, MemoryBuffer};
use crate::error::{Error, Result};
use crate::integral::{accumulate, ode_rhs, sensitivity_lambda};
use crate::kernel::KernelSpec;
use crate::metrics::{LogRow, PredictionLog};
use crate::model::{init_params, loss_and_grad, predict, ParamVector, PredictorShape};
use crate::ode::{integrate, OdeOptions};
use crate::streams::StreamSample;

/// Parameters beyond this magnitude are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Perturbation used by the central-difference meta-gradient.
pub const META_FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    RiemannSum,
    OdeFlow,
    SgdBaseline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateScale {
    #[default]
    DtScaled,
    UnitWeighted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaEstimator {
    #[default]
    LeibnizPath,
    CentralDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub enabled: bool,
    pub eta_lambda: f64,
    /// Number of most-recent buffered samples forming the validation window.
    pub holdout: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub estimator: MetaEstimator,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            enabled: false,
            eta_lambda: 0.01,
            holdout: 5,
            lambda_min: 1e-3,
            lambda_max: 100.0,
            estimator: MetaEstimator::LeibnizPath,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub dt: f64,
    pub update_scale: UpdateScale,
    pub capacity: usize,
    pub beta: f64,
    pub eta_sgd: f64,
    pub meta: MetaConfig,
    pub ode: OdeOptions,
    pub seed: u64,
    /// Recompute every buffered data gradient from its snapshot on each step instead of
    /// using the cached one.
    pub recompute_grads: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: Mode::RiemannSum,
            dt: 0.1,
            update_scale: UpdateScale::DtScaled,
            capacity: 100,
            beta: 0.0,
            eta_sgd: 0.05,
            meta: MetaConfig::default(),
            ode: OdeOptions::default(),
            seed: 0,
            recompute_grads: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.capacity == 0 {
            return bad("capacity must be >= 1".into());
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.eta_sgd > 0.0) {
            return bad(format!("eta_sgd must be positive, got {}", self.eta_sgd));
        }
        let m = &self.meta;
        if !(m.lambda_min > 0.0 && m.lambda_min < m.lambda_max) {
            return bad(format!(
                "need 0 < lambda_min < lambda_max, got [{}, {}]",
                m.lambda_min, m.lambda_max
            ));
        }
        if !(m.eta_lambda > 0.0) {
            return bad(format!("eta_lambda must be positive, got {}", m.eta_lambda));
        }
        if m.enabled && m.holdout == 0 {
            return bad("meta holdout must be >= 1".into());
        }
        self.ode.validate()
    }

    /// Weight of one stored sample in the history sum.
    pub fn dt_effective(&self) -> f64 {
        match self.update_scale {
            UpdateScale::DtScaled => self.dt,
            UpdateScale::UnitWeighted => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainerState {
    pub theta0: ParamVector,
    pub theta: ParamVector,
    pub kernel: KernelSpec,
    pub buffer: MemoryBuffer,
    pub t: f64,
    pub step_count: usize,
}

impl TrainerState {
    pub fn new(theta0: ParamVector, kernel: KernelSpec, capacity: usize, t_start: f64) -> Result<Self> {
        kernel.validate()?;
        Ok(TrainerState {
            theta: theta0.clone(),
            theta0,
            kernel,
            buffer: MemoryBuffer::new(capacity)?,
            t: t_start,
            step_count: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Prediction made before the sample was learned from.
    pub prediction: Vec<f64>,
    /// Data loss of that prediction.
    pub loss: f64,
}

/// Data loss, stored direction `g = −(∇L + penalty)` and the penalty addend.
fn direction(
    shape: &PredictorShape,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
    anchor: Option<(&[f64], f64)>,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let (loss, mut grad) = loss_and_grad(shape, theta, x, y)?;
    let penalty = match anchor {
        Some((mem, beta)) => {
            let (_, addend) = regularized_loss(loss, theta, mem, beta)?;
            for (g, a) in grad.iter_mut().zip(&addend) {
                *g += a;
            }
            Some(addend)
        }
        None => None,
    };
    for g in &mut grad {
        *g = -*g;
    }
    Ok((loss, grad, penalty))
}

/// Buffered contributions with their data gradients rebuilt from the stored snapshots.
fn recomputed(shape: &PredictorShape, buffer: &MemoryBuffer) -> Result<Vec<(f64, Vec<f64>)>> {
    buffer
        .entries()
        .map(|e| {
            let (_, mut g) = loss_and_grad(shape, &e.theta_snapshot, &e.x, &e.y)?;
            if let Some(p) = &e.penalty {
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi += pi;
                }
            }
            Ok((e.tau, g.into_iter().map(|v| -v).collect()))
        })
        .collect()
}

fn contributions(
    shape: &PredictorShape,
    config: &TrainerConfig,
    buffer: &MemoryBuffer,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if config.recompute_grads {
        recomputed(shape, buffer)
    } else {
        Ok(buffer.entries().map(|e| (e.tau, e.grad.clone())).collect())
    }
}

fn check_finite(theta: &[f64], t: f64) -> Result<()> {
    if theta.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

/// Advances `theta` from `state.t` to the sample time under the frozen buffer plus the
/// live direction of the arriving sample.
///
/// The live term is scaled so that the interval adds `K(t, t) g dt_eff` whatever the
/// sample spacing. The mass it actually adds is integrated alongside `theta` and turned
/// back into the direction to buffer, so the later `∂K/∂t` decay removes exactly what
/// was added and `theta` stays equal to `theta0 + Σ K g dt_eff` up to solver error.
fn flow(
    state: &TrainerState,
    config: &TrainerConfig,
    shape: &PredictorShape,
    sample: &StreamSample,
    anchor: Option<(&[f64], f64)>,
    fallback: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    let past = contributions(shape, config, &state.buffer)?;
    let dim = state.theta.len();
    let dt_eff = config.dt_effective();
    let past_scale = dt_eff / config.dt;
    let live_scale = dt_eff / (sample.t - state.t);
    let kernel = &state.kernel;
    let y = [sample.y];
    let rhs = |t: f64, z: &[f64]| -> Result<Vec<f64>> {
        let theta = &z[..dim];
        let mut d = ode_rhs(t, theta, &past, kernel, config.dt, None::<fn(&[f64]) -> Result<Vec<f64>>>)?;
        d.iter_mut().for_each(|v| *v *= past_scale);
        let (_, g, _) = direction(shape, theta, &sample.x, &y, anchor)?;
        let k = kernel.eval(t, t)? * live_scale;
        d.extend(g.iter().map(|gi| k * gi));
        for i in 0..dim {
            d[i] += d[dim + i];
        }
        Ok(d)
    };
    let mut z0 = state.theta.to_vec();
    z0.resize(2 * dim, 0.0);
    let sol = integrate(rhs, &z0, state.t, sample.t, &config.ode, None)?;
    let z = sol.last_state();
    let k_end = kernel.eval(sample.t, sample.t)? * dt_eff;
    let grad = if k_end > 0.0 {
        z[dim..].iter().map(|a| a / k_end).collect()
    } else {
        fallback.to_vec()
    };
    Ok((z[..dim].to_vec().into(), grad))
}

/// Absorbs one sample.
pub fn step(
    state: &mut TrainerState,
    config: &TrainerConfig,
    shape: &PredictorShape,
    sample: &StreamSample,
) -> Result<StepOutcome> {
    if !(sample.t > state.t) {
        return Err(Error::NonMonotoneTime {
            last: state.t,
            tau: sample.t,
        });
    }
    let t_new = sample.t;
    let y = [sample.y];
    let prediction = predict(shape, &state.theta, &sample.x)?;

    let anchor = if config.beta > 0.0 && !state.buffer.is_empty() {
        match state.buffer.theta_mem(&state.kernel, t_new) {
            Ok(mem) => Some(mem),
            Err(Error::DegenerateWeights) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let anchor_ref = anchor.as_ref().map(|m| (&m[..], config.beta));
    let (loss, g, penalty) = direction(shape, &state.theta, &sample.x, &y, anchor_ref)?;
    let entry = BufferEntry {
        tau: t_new,
        x: sample.x.clone(),
        y: y.to_vec(),
        theta_snapshot: state.theta.clone(),
        grad: g.clone(),
        loss,
        penalty,
    };

    match config.mode {
        Mode::SgdBaseline => {
            // g already carries the minus sign
            state.theta.axpy(config.eta_sgd, &g);
            state.buffer.push(entry)?;
        }
        Mode::RiemannSum => {
            state.buffer.push(entry)?;
            let dt_eff = config.dt_effective();
            state.theta = if config.recompute_grads {
                let c = recomputed(shape, &state.buffer)?;
                accumulate(&state.theta0, &c, &state.kernel, t_new, dt_eff)?
            } else {
                accumulate(&state.theta0, state.buffer.entries(), &state.kernel, t_new, dt_eff)?
            };
        }
        Mode::OdeFlow => {
            let mut entry = entry;
            let (theta, grad) = flow(state, config, shape, sample, anchor_ref, &entry.grad)?;
            state.theta = theta;
            entry.grad = grad;
            state.buffer.push(entry)?;
        }
    }
    check_finite(&state.theta, t_new)?;

    state.t = t_new;
    state.step_count += 1;
    if config.meta.enabled
        && config.mode != Mode::SgdBaseline
        && state.kernel.is_adaptive()
        && state.buffer.len() >= config.meta.holdout
    {
        meta_update(state, config, shape)?;
    }
    Ok(StepOutcome { prediction, loss })
}

/// Mean holdout loss when every holdout sample is predicted from the entries before it,
/// with parameters rebuilt under `kernel`.
fn meta_loss(
    state: &TrainerState,
    config: &TrainerConfig,
    shape: &PredictorShape,
    kernel: &KernelSpec,
    past: &[(f64, Vec<f64>)],
) -> Result<f64> {
    let entries: Vec<&BufferEntry> = state.buffer.entries().collect();
    let n = entries.len();
    let m = config.meta.holdout;
    let mut total = 0.0;
    for j in n - m..n {
        let theta = accumulate(&state.theta0, &past[..j], kernel, entries[j].tau, config.dt_effective())?;
        total += loss_and_grad(shape, &theta, &entries[j].x, &entries[j].y)?.0;
    }
    Ok(total / m as f64)
}

/// `∂L_meta/∂lambda` by the configured estimator, gradient path frozen.
pub fn meta_gradient(
    state: &TrainerState,
    config: &TrainerConfig,
    shape: &PredictorShape,
    estimator: MetaEstimator,
) -> Result<f64> {
    let m = config.meta.holdout;
    let n = state.buffer.len();
    if m == 0 || n < m {
        return Err(Error::InsufficientHistory { needed: m.max(1), have: n });
    }
    let past = contributions(shape, config, &state.buffer)?;
    let kernel = &state.kernel;
    match estimator {
        MetaEstimator::LeibnizPath => {
            let entries: Vec<&BufferEntry> = state.buffer.entries().collect();
            let dt_eff = config.dt_effective();
            let mut total = 0.0;
            for j in n - m..n {
                let tau = entries[j].tau;
                let theta = accumulate(&state.theta0, &past[..j], kernel, tau, dt_eff)?;
                let (_, grad) = loss_and_grad(shape, &theta, &entries[j].x, &entries[j].y)?;
                let sens = sensitivity_lambda(theta.len(), &past[..j], kernel, tau, dt_eff)?;
                total += grad.iter().zip(&sens).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(total / m as f64)
        }
        MetaEstimator::CentralDifference => {
            let h = META_FD_STEP.min(0.5 * kernel.lambda);
            let up = meta_loss(state, config, shape, &kernel.with_lambda(kernel.lambda + h), &past)?;
            let down = meta_loss(state, config, shape, &kernel.with_lambda(kernel.lambda - h), &past)?;
            Ok((up - down) / (2.0 * h))
        }
    }
}

/// `lambda ← clamp(lambda − eta_lambda ∂L_meta/∂lambda, [lambda_min, lambda_max])`.
pub fn meta_step(lambda: f64, gradient: f64, meta: &MetaConfig) -> f64 {
    (lambda - meta.eta_lambda * gradient).clamp(meta.lambda_min, meta.lambda_max)
}

/// One meta-adaptation step of the kernel rate; returns the new rate.
pub fn meta_update(state: &mut TrainerState, config: &TrainerConfig, shape: &PredictorShape) -> Result<f64> {
    let grad = meta_gradient(state, config, shape, config.meta.estimator)?;
    let lambda = meta_step(state.kernel.lambda, grad, &config.meta);
    state.kernel = state.kernel.with_lambda(lambda);
    Ok(lambda)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: PredictionLog,
    pub state: TrainerState,
}

/// Runs the prequential loop over a whole stream.
pub fn run_stream(
    config: &TrainerConfig,
    shape: &PredictorShape,
    kernel: &KernelSpec,
    stream: &[StreamSample],
) -> Result<RunOutput> {
    config.validate()?;
    shape.validate()?;
    kernel.validate()?;
    if shape.output_dim != 1 {
        return Err(Error::InvalidArgument(format!(
            "streams carry scalar targets; output_dim must be 1, got {}",
            shape.output_dim
        )));
    }
    let theta0 = init_params(shape, config.seed);
    let t_start = match stream.first() {
        Some(s) if s.t <= 0.0 => s.t - config.dt,
        _ => 0.0,
    };
    let mut state = TrainerState::new(theta0, kernel.clone(), config.capacity, t_start)?;
    let mut log = PredictionLog::new(shape.head);
    log.rows.reserve(stream.len());
    for (index, sample) in stream.iter().enumerate() {
        let out = step(&mut state, config, shape, sample).map_err(|e| Error::AtStep {
            index,
            source: Box::new(e),
        })?;
        log.rows.push(LogRow {
            t: sample.t,
            pred: out.prediction[0],
            target: sample.y,
            loss: out.loss,
            lambda: state.kernel.lambda,
        });
    }
    Ok(RunOutput { log, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Head;
    use approx::assert_relative_eq;

    /// 1-1-1 regression net; output bias is the last parameter.
    fn tiny() -> PredictorShape {
        PredictorShape::new(1, 1, 1, Head::Regression)
    }

    fn sample(t: f64, x: f64, y: f64) -> StreamSample {
        StreamSample { t, x: vec![x], y }
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let shape = tiny();
        let cfg = TrainerConfig::default();
        let theta0: ParamVector = vec![0.0, 0.0, 0.0, 0.0].into();
        let mut st = TrainerState::new(theta0.clone(), KernelSpec::exponential(1.0), 4, 0.0).unwrap();
        let out = step(&mut st, &cfg, &shape, &sample(0.1, 0.3, 0.0)).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(st.theta, theta0);
    }

    #[test]
    fn capacity_one_hand_trace() {
        let shape = tiny();
        let cfg = TrainerConfig {
            capacity: 1,
            dt: 0.5,
            ..TrainerConfig::default()
        };
        let k = KernelSpec::exponential(0.8);
        let theta0: ParamVector = vec![0.4, -0.2, 0.3, 0.1].into();
        let mut st = TrainerState::new(theta0.clone(), k.clone(), 1, 0.0).unwrap();
        step(&mut st, &cfg, &shape, &sample(0.5, 1.0, 2.0)).unwrap();
        let theta1 = st.theta.clone();
        step(&mut st, &cfg, &shape, &sample(1.0, 1.0, 2.0)).unwrap();
        // only the second entry survives: theta0 + K(t2, t2) * g2 * dt, g2 taken at theta1
        let (_, grad) = loss_and_grad(&shape, &theta1, &[1.0], &[2.0]).unwrap();
        for i in 0..4 {
            let expected = theta0[i] + 0.8 * (-grad[i]) * 0.5;
            assert_relative_eq!(st.theta[i], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn sgd_hand_evaluation() {
        // loss ½(b − y)² on the output bias alone: theta = 1, y = −1 gives ∇ = 2
        let shape = tiny();
        let cfg = TrainerConfig {
            mode: Mode::SgdBaseline,
            eta_sgd: 0.1,
            ..TrainerConfig::default()
        };
        let mut st =
            TrainerState::new(vec![0.0, 0.0, 0.0, 1.0].into(), KernelSpec::exponential(1.0), 4, 0.0)
                .unwrap();
        step(&mut st, &cfg, &shape, &sample(1.0, 0.0, -1.0)).unwrap();
        assert_relative_eq!(st.theta[3], 0.8, max_relative = 1e-15);
    }

    #[test]
    fn rejects_stale_samples() {
        let shape = tiny();
        let cfg = TrainerConfig::default();
        let mut st = TrainerState::new(ParamVector::zeros(4), KernelSpec::exponential(1.0), 4, 1.0).unwrap();
        assert!(matches!(
            step(&mut st, &cfg, &shape, &sample(1.0, 0.0, 0.0)),
            Err(Error::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let shape = tiny();
        let cfg = TrainerConfig {
            mode: Mode::SgdBaseline,
            eta_sgd: 1e13,
            ..TrainerConfig::default()
        };
        let mut st = TrainerState::new(ParamVector::zeros(4), KernelSpec::exponential(1.0), 4, 0.0).unwrap();
        assert!(matches!(
            step(&mut st, &cfg, &shape, &sample(1.0, 0.0, 1.0)),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn meta_step_examples() {
        let meta = MetaConfig::default();
        assert_eq!(meta_step(1.3, 0.0, &meta), 1.3);
        let m = MetaConfig {
            eta_lambda: 0.1,
            ..meta
        };
        assert_relative_eq!(meta_step(1.0, 2.0, &m), 0.8, max_relative = 1e-15);
        assert_eq!(meta_step(0.01, 50.0, &m), 1e-3);
        assert_eq!(meta_step(99.0, -1e5, &m), 100.0);
    }

    #[test]
    fn meta_needs_history() {
        let shape = tiny();
        let cfg = TrainerConfig {
            meta: MetaConfig {
                holdout: 3,
                ..MetaConfig::default()
            },
            ..TrainerConfig::default()
        };
        let mut st = TrainerState::new(ParamVector::zeros(4), KernelSpec::gaussian_decay(1.0), 8, 0.0).unwrap();
        step(&mut st, &cfg, &shape, &sample(0.1, 0.5, 1.0)).unwrap();
        assert!(matches!(
            meta_update(&mut st, &cfg, &shape),
            Err(Error::InsufficientHistory { needed: 3, have: 1 })
        ));
    }

    #[test]
    fn empty_stream() {
        let shape = tiny();
        let cfg = TrainerConfig::default();
        let out = run_stream(&cfg, &shape, &KernelSpec::exponential(1.0), &[]).unwrap();
        assert!(out.log.rows.is_empty());
        assert_eq!(out.state.theta, out.state.theta0);
    }

    #[test]
    fn recompute_matches_cache() {
        let shape = PredictorShape::new(2, 3, 1, Head::Regression);
        let stream: Vec<StreamSample> = (0..40)
            .map(|i| {
                let t = 0.1 * (i + 1) as f64;
                StreamSample { t, x: vec![t.sin(), t.cos()], y: (2.0 * t).sin() }
            })
            .collect();
        let k = KernelSpec::gaussian_decay(2.0);
        for beta in [0.0, 0.3] {
            let base = TrainerConfig { capacity: 15, beta, ..TrainerConfig::default() };
            let a = run_stream(&base, &shape, &k, &stream).unwrap();
            let b = run_stream(&TrainerConfig { recompute_grads: true, ..base }, &shape, &k, &stream).unwrap();
            for (x, y) in a.state.theta.iter().zip(b.state.theta.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
