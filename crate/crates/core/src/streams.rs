//! Deterministic synthetic streams.
//!
//! Sample `n` (0-based) carries time `t_n = (n + 1) * dt`. Generators first build an
//! underlying series indexed by `j`, with `window` values of history before the first
//! emitted sample, so every feature vector is fully populated.
//!
//! Scenario equations (all constants in [`ScenarioManifest`]):
//!
//! * `SmartGrid`: `D_j = base + amp·sin(2πj/day) − dip·[weekend(j)] + σ_D·ν·ε + spikes`,
//!   `S_j = peak·max(0, sin(π(h_j − 6)/12)) + w_j` with an Ornstein–Uhlenbeck wind term
//!   `w_{j+1} = w_j + κ(μ_w − w_j) + σ_w·ν·ε`, clipped at 0, and
//!   `P_j = p0 + α(D_j − S_j) + σ_P·ν·ε`. Features are the last `window` standardized
//!   `(D, S, P)` triples, target the standardized next demand `D_{j+1}`.
//! * `FinancialRegimes`: log-returns `r_j = s_j·drift + ν·vol·ε` where the regime sign
//!   `s_j` flips with probability `1/regime_mean` per step. Features are the last
//!   `window` returns divided by `vol`, label `1` if the next return is positive.
//! * `StationaryNoise`, `SuddenDrift`, `GradualDrift`: input `u_j = sin(2πj/period) +
//!   ν·ε`, target `y_n = Σ_l w_l u_{j−l} + offset(t_n) + ν·ε` with `w_l = w0·decay^l`.
//!   The offset is 0, a step of `shift_magnitude` at `shift_time`, or a linear ramp from
//!   0 at `shift_time` to `shift_magnitude` at the last sample.
//!
//! `ν` is the scenario's `noise_level`; with `ν = 0` every stream is an exact closed form.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    SmartGrid,
    FinancialRegimes,
    GradualDrift,
    SuddenDrift,
    StationaryNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_magnitude: Option<f64>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_dt() -> f64 {
    1.0
}

fn default_window() -> usize {
    4
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, horizon: usize, dt: f64, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            horizon,
            dt,
            seed,
            noise_level: 0.0,
            shift_time: None,
            shift_magnitude: None,
            window: default_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.horizon == 0 {
            return bad("scenario horizon must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("scenario dt must be positive, got {}", self.dt));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        let end = self.horizon as f64 * self.dt;
        if let Some(s) = self.shift_time {
            if !(s >= 0.0 && s < end) {
                return bad(format!("shift_time {s} outside [0, {end})"));
            }
        }
        if let Some(m) = self.shift_magnitude {
            if !m.is_finite() {
                return bad("shift_magnitude must be finite".into());
            }
        }
        if matches!(self.kind, ScenarioKind::SuddenDrift | ScenarioKind::GradualDrift)
            && (self.shift_time.is_none() || self.shift_magnitude.is_none())
        {
            return bad(format!("{:?} needs shift_time and shift_magnitude", self.kind));
        }
        Ok(())
    }

    pub fn time_of(&self, n: usize) -> f64 {
        (n + 1) as f64 * self.dt
    }

    /// Index of the first sample at or after `t`.
    pub fn first_index_at(&self, t: f64) -> usize {
        (0..self.horizon)
            .find(|&n| self.time_of(n) >= t)
            .unwrap_or(self.horizon)
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            ScenarioKind::SmartGrid => 3 * self.window,
            _ => self.window,
        }
    }
}

/// Fixed constants of every generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub grid_day_samples: usize,
    pub grid_week_samples: usize,
    pub grid_weekend_start: usize,
    pub demand_base: f64,
    pub demand_daily_amplitude: f64,
    pub demand_weekend_dip: f64,
    pub demand_noise: f64,
    pub demand_spike_probability: f64,
    pub demand_spike_size: f64,
    pub solar_peak: f64,
    pub wind_mean: f64,
    pub wind_reversion: f64,
    pub wind_noise: f64,
    pub price_base: f64,
    pub price_sensitivity: f64,
    pub price_noise: f64,
    /// `(center, scale)` used to standardize demand, supply and price features.
    pub grid_standardization: [(f64, f64); 3],
    pub regime_mean_samples: f64,
    pub regime_drift: f64,
    pub regime_volatility: f64,
    pub input_period: f64,
    pub input_noise: f64,
    pub target_noise: f64,
    pub linear_map_lead: f64,
    pub linear_map_decay: f64,
}

impl Default for ScenarioManifest {
    fn default() -> Self {
        ScenarioManifest {
            grid_day_samples: 24,
            grid_week_samples: 168,
            grid_weekend_start: 120,
            demand_base: 100.0,
            demand_daily_amplitude: 20.0,
            demand_weekend_dip: 15.0,
            demand_noise: 4.0,
            demand_spike_probability: 0.01,
            demand_spike_size: 25.0,
            solar_peak: 30.0,
            wind_mean: 10.0,
            wind_reversion: 0.1,
            wind_noise: 2.0,
            price_base: 50.0,
            price_sensitivity: 0.5,
            price_noise: 2.0,
            grid_standardization: [(100.0, 20.0), (20.0, 15.0), (90.0, 15.0)],
            regime_mean_samples: 80.0,
            regime_drift: 0.002,
            regime_volatility: 0.01,
            input_period: 16.0,
            input_noise: 0.5,
            target_noise: 0.3,
            linear_map_lead: 0.8,
            linear_map_decay: 0.5,
        }
    }
}

impl ScenarioManifest {
    pub fn linear_map(&self, window: usize) -> Vec<f64> {
        (0..window)
            .map(|l| self.linear_map_lead * self.linear_map_decay.powi(l as i32))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Shift,
    RegimeBoundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub t: f64,
    pub kind: EventKind,
}

/// Ground truth the metrics need, so evaluation never re-infers it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub kind: ScenarioKind,
    pub events: Vec<ScenarioEvent>,
    /// Noise-free target offset before and after the shift (drift scenarios only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_after: Option<f64>,
    pub manifest: ScenarioManifest,
}

impl ScenarioMetadata {
    pub fn shift_time(&self) -> Option<f64> {
        self.events.iter().find(|e| e.kind == EventKind::Shift).map(|e| e.t)
    }

    pub fn regime_boundaries(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::RegimeBoundary)
            .map(|e| e.t)
            .collect()
    }
}

const NOISE_STREAM: u64 = 1;
const REGIME_STREAM: u64 = 2;
const SPIKE_STREAM: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Vec<StreamSample>> {
    spec.validate()?;
    let m = ScenarioManifest::default();
    Ok(match spec.kind {
        ScenarioKind::SmartGrid => smart_grid(spec, &m),
        ScenarioKind::FinancialRegimes => financial(spec, &m).0,
        ScenarioKind::StationaryNoise | ScenarioKind::SuddenDrift | ScenarioKind::GradualDrift => {
            linear_drift(spec, &m)
        }
    })
}

pub fn describe(spec: &ScenarioSpec) -> Result<ScenarioMetadata> {
    spec.validate()?;
    let manifest = ScenarioManifest::default();
    let mut meta = ScenarioMetadata {
        kind: spec.kind,
        events: Vec::new(),
        offset_before: None,
        offset_after: None,
        manifest,
    };
    match spec.kind {
        ScenarioKind::SuddenDrift | ScenarioKind::GradualDrift => {
            meta.events.push(ScenarioEvent {
                t: spec.shift_time.unwrap_or_default(),
                kind: EventKind::Shift,
            });
            meta.offset_before = Some(0.0);
            meta.offset_after = spec.shift_magnitude;
        }
        ScenarioKind::FinancialRegimes => {
            let boundaries = regime_boundary_indices(spec, &meta.manifest);
            meta.events = boundaries
                .into_iter()
                .map(|n| ScenarioEvent {
                    t: spec.time_of(n),
                    kind: EventKind::RegimeBoundary,
                })
                .collect();
        }
        ScenarioKind::SmartGrid | ScenarioKind::StationaryNoise => {}
    }
    Ok(meta)
}

fn smart_grid(spec: &ScenarioSpec, m: &ScenarioManifest) -> Vec<StreamSample> {
    let len = spec.horizon + spec.window + 1;
    let mut noise = rng(spec.seed, NOISE_STREAM);
    let mut spikes = rng(spec.seed, SPIKE_STREAM);
    let nu = spec.noise_level;
    let mut wind = m.wind_mean;
    let mut series = Vec::with_capacity(len);
    for j in 0..len {
        let phase = 2.0 * PI * (j % m.grid_day_samples) as f64 / m.grid_day_samples as f64;
        let weekend = j % m.grid_week_samples >= m.grid_weekend_start;
        let mut demand = m.demand_base + m.demand_daily_amplitude * phase.sin()
            - if weekend { m.demand_weekend_dip } else { 0.0 }
            + m.demand_noise * nu * normal(&mut noise);
        if spikes.random::<f64>() < m.demand_spike_probability {
            demand += m.demand_spike_size * nu;
        }
        let hour = (j % m.grid_day_samples) as f64 * 24.0 / m.grid_day_samples as f64;
        let solar = m.solar_peak * (PI * (hour - 6.0) / 12.0).sin().max(0.0);
        let supply = solar + wind;
        let price = m.price_base
            + m.price_sensitivity * (demand - supply)
            + m.price_noise * nu * normal(&mut noise);
        wind = (wind + m.wind_reversion * (m.wind_mean - wind) + m.wind_noise * nu * normal(&mut noise))
            .max(0.0);
        series.push([demand, supply, price]);
    }
    let std = |v: [f64; 3]| -> [f64; 3] {
        let s = m.grid_standardization;
        [(v[0] - s[0].0) / s[0].1, (v[1] - s[1].0) / s[1].1, (v[2] - s[2].0) / s[2].1]
    };
    (0..spec.horizon)
        .map(|n| {
            let j = n + spec.window;
            let x = series[j + 1 - spec.window..=j]
                .iter()
                .flat_map(|&v| std(v))
                .collect();
            StreamSample {
                t: spec.time_of(n),
                x,
                y: std(series[j + 1])[0],
            }
        })
        .collect()
}

/// Regime sign of every return index; the first return starts in the positive regime.
fn regime_signs(spec: &ScenarioSpec, m: &ScenarioManifest) -> Vec<f64> {
    let len = spec.horizon + spec.window;
    let mut r = rng(spec.seed, REGIME_STREAM);
    let mut sign = 1.0;
    (0..len)
        .map(|i| {
            if i > 0 && r.random::<f64>() < 1.0 / m.regime_mean_samples {
                sign = -sign;
            }
            sign
        })
        .collect()
}

/// Sample indices whose label is the first drawn from a new regime.
fn regime_boundary_indices(spec: &ScenarioSpec, m: &ScenarioManifest) -> Vec<usize> {
    let signs = regime_signs(spec, m);
    (1..spec.horizon)
        .filter(|&n| signs[n + spec.window] != signs[n + spec.window - 1])
        .collect()
}

fn financial(spec: &ScenarioSpec, m: &ScenarioManifest) -> (Vec<StreamSample>, Vec<f64>) {
    let signs = regime_signs(spec, m);
    let mut noise = rng(spec.seed, NOISE_STREAM);
    let returns: Vec<f64> = signs
        .iter()
        .map(|s| s * m.regime_drift + spec.noise_level * m.regime_volatility * normal(&mut noise))
        .collect();
    let samples = (0..spec.horizon)
        .map(|n| StreamSample {
            t: spec.time_of(n),
            x: returns[n..n + spec.window]
                .iter()
                .map(|r| r / m.regime_volatility)
                .collect(),
            y: if returns[n + spec.window] > 0.0 { 1.0 } else { 0.0 },
        })
        .collect();
    (samples, signs)
}

fn linear_drift(spec: &ScenarioSpec, m: &ScenarioManifest) -> Vec<StreamSample> {
    let len = spec.horizon + spec.window;
    let mut noise = rng(spec.seed, NOISE_STREAM);
    let nu = spec.noise_level;
    let inputs: Vec<f64> = (0..len)
        .map(|j| (2.0 * PI * j as f64 / m.input_period).sin() + m.input_noise * nu * normal(&mut noise))
        .collect();
    let weights = m.linear_map(spec.window);
    let end = spec.time_of(spec.horizon - 1);
    (0..spec.horizon)
        .map(|n| {
            let j = n + spec.window - 1;
            // x[0] is the most recent input
            let x: Vec<f64> = (0..spec.window).map(|l| inputs[j - l]).collect();
            let t = spec.time_of(n);
            let signal: f64 = weights.iter().zip(&x).map(|(w, u)| w * u).sum();
            let y = signal + offset(spec, t, end) + m.target_noise * nu * normal(&mut noise);
            StreamSample { t, x, y }
        })
        .collect()
}

fn offset(spec: &ScenarioSpec, t: f64, end: f64) -> f64 {
    let (Some(shift), Some(mag)) = (spec.shift_time, spec.shift_magnitude) else {
        return 0.0;
    };
    match spec.kind {
        ScenarioKind::SuddenDrift if t >= shift => mag,
        ScenarioKind::GradualDrift if t >= shift => {
            if end > shift {
                mag * ((t - shift) / (end - shift)).min(1.0)
            } else {
                mag
            }
        }
        _ => 0.0,
    }
}

/// Writes `t,x_0..x_{k-1},y`.
pub fn write_csv<W: Write>(samples: &[StreamSample], out: W) -> Result<()> {
    let k = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("x_{i}")));
    header.push("y".into());
    w.write_record(&header).map_err(io_err)?;
    for s in samples {
        if s.x.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: s.x.len(),
            });
        }
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.x.iter().map(f64::to_string));
        rec.push(s.y.to_string());
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<StreamSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(io_err)?.clone();
    let n = header.len();
    if n < 2 || &header[0] != "t" || &header[n - 1] != "y" {
        return Err(Error::InvalidArgument("stream CSV header must be t,x_0..,y".into()));
    }
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for rec in r.records() {
        let rec = rec.map_err(io_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad number in stream CSV: {e}")))?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("stream CSV values must be finite".into()));
        }
        let t = vals[0];
        if !(t > last_t) {
            return Err(Error::NonMonotoneTime { last: last_t, tau: t });
        }
        last_t = t;
        out.push(StreamSample {
            t,
            x: vals[1..n - 1].to_vec(),
            y: vals[n - 1],
        });
    }
    Ok(out)
}

fn io_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("stream CSV: {e}"))
}
