//! Adaptive Dormand–Prince 5(4) integrator with dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Butcher tableau of the Dormand–Prince pair.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th-order weights minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension (Shampine), order 4.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-6,
            atol: 1e-9,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1.0,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.max_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid ODE options: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl OdeSolution {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `out = y + h * Σ coef_i k_i`
fn combine(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c == 0.0 {
            continue;
        }
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * c * ki;
        }
    }
    out
}

struct Step {
    y_new: Vec<f64>,
    k7: Vec<f64>,
    err: Vec<f64>,
    dense: [Vec<f64>; 5],
}

fn dopri_step<F>(rhs: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<Step>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k2 = rhs(t + C2 * h, &combine(y, h, &[(A21, k1)]))?;
    let k3 = rhs(t + C3 * h, &combine(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = rhs(t + C4 * h, &combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = rhs(
        t + C5 * h,
        &combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = rhs(
        t + h,
        &combine(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    )?;
    let y_new = combine(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = rhs(t + h, &y_new)?;

    let n = y.len();
    let mut err = vec![0.0; n];
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    let mut r4 = vec![0.0; n];
    let mut r5 = vec![0.0; n];
    for i in 0..n {
        err[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let dy = y_new[i] - y[i];
        let bspl = h * k1[i] - dy;
        r1[i] = y[i];
        r2[i] = dy;
        r3[i] = bspl;
        r4[i] = dy - h * k7[i] - bspl;
        r5[i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Ok(Step {
        y_new,
        k7,
        err,
        dense: [r1, r2, r3, r4, r5],
    })
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], opts: &OdeOptions) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let scale = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

/// Evaluates the continuous extension at `theta ∈ [0, 1]` of a step.
fn interpolate(dense: &[Vec<f64>; 5], theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..dense[0].len())
        .map(|i| {
            dense[0][i]
                + theta
                    * (dense[1][i]
                        + theta1 * (dense[2][i] + theta * (dense[3][i] + theta1 * dense[4][i])))
        })
        .collect()
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1`.
///
/// Without `dense_times` the solution holds `t0` and every accepted step. With
/// `dense_times` it holds exactly those times (each in `[t0, t1]`, increasing), read from
/// the continuous extension; a request that coincides with a step boundary returns the
/// stepped state itself.
pub fn integrate<F>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    dense_times: Option<&[f64]>,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    if let Some(dt) = dense_times {
        if dt.iter().any(|&s| s < t0 || s > t1) || dt.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "dense output times must be increasing and inside [t0, t1]".into(),
            ));
        }
    }

    let mut sol = OdeSolution {
        times: Vec::new(),
        states: Vec::new(),
        steps_accepted: 0,
        steps_rejected: 0,
    };
    let mut pending = dense_times.unwrap_or(&[]).iter().copied().peekable();
    match dense_times {
        None => {
            sol.times.push(t0);
            sol.states.push(y0.to_vec());
        }
        Some(_) => {
            while let Some(&s) = pending.peek() {
                if s != t0 {
                    break;
                }
                sol.times.push(s);
                sol.states.push(y0.to_vec());
                pending.next();
            }
        }
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = rhs(t, &y)?;
    let mut h = opts.h_init.min(opts.h_max);

    while t < t1 {
        if sol.steps_accepted + sol.steps_rejected >= opts.max_steps {
            return Err(Error::MaxStepsExceeded(opts.max_steps));
        }
        let last = t + h >= t1;
        let h_try = if last { t1 - t } else { h };
        let step = dopri_step(&mut rhs, t, &y, &k1, h_try)?;
        let norm = error_norm(&step.err, &y, &step.y_new, opts);
        if !norm.is_finite() {
            return Err(Error::Divergence { t });
        }
        let growth = if norm == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };

        if norm <= 1.0 {
            let t_new = if last { t1 } else { t + h_try };
            if dense_times.is_some() {
                while let Some(&s) = pending.peek() {
                    if s > t_new {
                        break;
                    }
                    let state = if s == t_new {
                        step.y_new.clone()
                    } else if s == t {
                        y.clone()
                    } else {
                        interpolate(&step.dense, (s - t) / h_try)
                    };
                    sol.times.push(s);
                    sol.states.push(state);
                    pending.next();
                }
            } else {
                sol.times.push(t_new);
                sol.states.push(step.y_new.clone());
            }
            sol.steps_accepted += 1;
            t = t_new;
            y = step.y_new;
            k1 = step.k7;
            h = (h_try * growth).min(opts.h_max);
            // a truncated final step must not shrink the controller's estimate
            if last {
                h = h.max(opts.h_min);
            }
        } else {
            sol.steps_rejected += 1;
            let h_next = h_try * growth.min(1.0);
            if h_next < opts.h_min {
                return Err(Error::StepSizeUnderflow { t, h: h_next });
            }
            h = h_next;
        }
    }
    Ok(sol)
}

/// Propagates only the 5th-order solution of the pair on `n_steps` uniform steps.
pub fn fixed_step_rk5<F>(mut rhs: F, y0: &[f64], t0: f64, t1: f64, n_steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut y = y0.to_vec();
    let mut k1 = rhs(t0, &y)?;
    for i in 0..n_steps {
        let t = t0 + i as f64 * h;
        let step = dopri_step(&mut rhs, t, &y, &k1, h)?;
        y = step.y_new;
        k1 = step.k7;
    }
    Ok(y)
}
