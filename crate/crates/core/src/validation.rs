//! Self-test battery run by `intflow validate`.
//!
//! Every check compares an analytic quantity against an independent oracle (finite
//! differences, closed forms, or a refined discretization) and reports the worst
//! discrepancy next to its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::integral::{
    accumulate, feynman_example, feynman_truncation, leibniz_derivative, sensitivity_lambda, LeibnizProblem,
    QuadratureGrid, QuadratureRule,
};
use crate::kernel::{KernelFamily, KernelSpec, MixtureComponent};
use crate::model::{init_params, loss_and_grad, Head, PredictorShape};
use crate::ode::{fixed_step_rk5, integrate, OdeOptions};
use crate::streams::{generate, ScenarioKind, ScenarioSpec, StreamSample};
use crate::trainer::{meta_gradient, run_stream, MetaEstimator, Mode, TrainerConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy (or the measured statistic for range checks).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn below(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            passed: measured.is_finite() && measured < tolerance,
            measured,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, err: crate::Error) -> Self {
        Check {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {err}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn guard(name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(name, e))
}

/// Runs every check in a fixed order.
pub fn run_all() -> Report {
    Report {
        checks: vec![
            guard("gradient_finite_difference", || gradient_check(10)),
            guard("leibniz_identity", leibniz_identity),
            guard("leibniz_variable_limits", leibniz_variable_limits),
            guard("feynman_closed_form", feynman_closed_form),
            guard("rk45_exponential_decay", rk45_decay),
            guard("rk5_order", rk5_order),
            guard("riemann_convergence", riemann_convergence),
            guard("sensitivity_oracle", || sensitivity_check(|k, t, tau| k.d_dlambda(t, tau))),
            guard("sensitivity_lambda", sensitivity_lambda_check),
            guard("meta_gradient_oracle", meta_gradient_check),
            guard("mode_consistency", mode_consistency),
            guard("ode_vs_riemann", ode_vs_riemann),
        ],
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn scalar_rel_err(a: f64, b: f64) -> f64 {
    rel_err(&[a], &[b])
}

/// Analytic parameter gradient against central differences of the loss, both heads.
pub fn gradient_check(seeds: u64) -> Result<Check> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for head in [Head::Regression, Head::BinaryDirection] {
            let shape = PredictorShape::new(rng.random_range(1..6), rng.random_range(1..7), 1, head);
            let mut theta = init_params(&shape, seed);
            for v in theta.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..shape.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = match head {
                Head::Regression => vec![rng.random_range(-2.0..2.0)],
                Head::BinaryDirection => vec![if rng.random::<bool>() { 1.0 } else { 0.0 }],
            };
            let (_, grad) = loss_and_grad(&shape, &theta, &x, &y)?;
            let mut fd = vec![0.0; theta.len()];
            for i in 0..theta.len() {
                let mut up = theta.clone();
                up[i] += h;
                let mut down = theta.clone();
                down[i] -= h;
                let (lu, _) = loss_and_grad(&shape, &up, &x, &y)?;
                let (ld, _) = loss_and_grad(&shape, &down, &x, &y)?;
                fd[i] = (lu - ld) / (2.0 * h);
            }
            worst = worst.max(rel_err(&grad, &fd));
        }
    }
    Ok(Check::below(
        "gradient_finite_difference",
        worst,
        1e-6,
        format!("{seeds} seeds x 2 heads, relative error vs central differences"),
    ))
}

/// `d/dλ` of the quadrature by differences vs quadrature of `∂f/∂λ`.
pub fn leibniz_identity() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 1.0, 2.0] {
        let x_max = feynman_truncation(lambda);
        let problem = LeibnizProblem::fixed_limits(
            0.0,
            x_max,
            |x, l| (-l * x).exp() * x.sin(),
            |x, l| -x * (-l * x).exp() * x.sin(),
        );
        let grid = QuadratureGrid::uniform(0.0, x_max, 200_001, QuadratureRule::Trapezoid)?;
        let h = 1e-4;
        let numeric = (problem.integral(lambda + h, &grid)? - problem.integral(lambda - h, &grid)?) / (2.0 * h);
        let analytic = leibniz_derivative(&problem, lambda, &grid)?;
        worst = worst.max((numeric - analytic).abs());
    }
    Ok(Check::below(
        "leibniz_identity",
        worst,
        1e-5,
        "lambda in {0.5, 1, 2}, absolute difference".into(),
    ))
}

/// `d/dλ ∫_0^λ x dx = λ` through the boundary terms.
pub fn leibniz_variable_limits() -> Result<Check> {
    let problem = LeibnizProblem {
        integrand: Box::new(|x, _| x),
        integrand_dlambda: Box::new(|_, _| 0.0),
        lower: Box::new(|_| 0.0),
        upper: Box::new(|l| l),
        lower_dlambda: Box::new(|_| 0.0),
        upper_dlambda: Box::new(|_| 1.0),
    };
    let mut worst: f64 = 0.0;
    for lambda in [0.3, 1.0, 2.5] {
        let grid = QuadratureGrid::uniform(0.0, 3.0, 31, QuadratureRule::Trapezoid)?;
        worst = worst.max((leibniz_derivative(&problem, lambda, &grid)? - lambda).abs());
    }
    Ok(Check::below(
        "leibniz_variable_limits",
        worst,
        1e-10,
        "integral of x over [0, lambda]".into(),
    ))
}

/// `I(λ) = 1/(1+λ²)` and `I'(λ) = −2λ/(1+λ²)²`.
pub fn feynman_closed_form() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 1.0, 2.0] {
        let (i, di) = feynman_example(lambda, feynman_truncation(lambda), 200_001)?;
        let q = 1.0 + lambda * lambda;
        worst = worst.max((i - 1.0 / q).abs()).max((di + 2.0 * lambda / (q * q)).abs());
    }
    Ok(Check::below(
        "feynman_closed_form",
        worst,
        1e-4,
        "lambda in {0.5, 1, 2}, absolute error".into(),
    ))
}

/// Adaptive solve of `y' = −y` on `[0, 1]`.
pub fn rk45_decay() -> Result<Check> {
    let opts = OdeOptions {
        rtol: 1e-8,
        atol: 1e-8,
        ..OdeOptions::default()
    };
    let sol = integrate(|_, y| Ok(vec![-y[0]]), &[1.0], 0.0, 1.0, &opts, None)?;
    let err = (sol.last_state()[0] - (-1.0f64).exp()).abs();
    Ok(Check::below(
        "rk45_exponential_decay",
        err,
        1e-7,
        format!("{} accepted steps", sol.steps_accepted),
    ))
}

/// Error ratio of the fixed-step fifth-order scheme under step halving.
pub fn rk5_order() -> Result<Check> {
    let exact = (-2.0f64).exp();
    let err = |n| -> Result<f64> {
        let y = fixed_step_rk5(|_, y| Ok(vec![-y[0]]), &[1.0], 0.0, 2.0, n)?;
        Ok((y[0] - exact).abs())
    };
    let ratio = err(10)? / err(20)?;
    Ok(Check {
        name: "rk5_order".into(),
        passed: (24.0..=40.0).contains(&ratio),
        measured: ratio,
        tolerance: 40.0,
        detail: "error ratio n=10 vs n=20, accepted range [24, 40]".into(),
    })
}

/// Left-Riemann sum of the exponential kernel against `1 − e^{−λt}`.
fn riemann_error(lambda: f64, t: f64, dt: f64) -> Result<f64> {
    let n = (t / dt).round() as usize;
    let entries: Vec<(f64, Vec<f64>)> = (0..n).map(|i| (i as f64 * dt, vec![1.0])).collect();
    let theta = accumulate(&[0.0], &entries, &KernelSpec::exponential(lambda), t, dt)?;
    Ok((theta[0] - (1.0 - (-lambda * t).exp())).abs())
}

pub fn riemann_convergence() -> Result<Check> {
    let e1 = riemann_error(1.0, 1.0, 1e-4)?;
    let e2 = riemann_error(1.0, 1.0, 5e-5)?;
    let ratio = e2 / e1;
    Ok(Check {
        name: "riemann_convergence".into(),
        passed: e1 < 2e-3 && (0.4..=0.6).contains(&ratio),
        measured: e1,
        tolerance: 2e-3,
        detail: format!("halving ratio {ratio:.4}, accepted range [0.4, 0.6]"),
    })
}

/// Kernels covering every family, including a mixture with a private-rate member.
pub fn kernel_zoo() -> Vec<KernelSpec> {
    let mixture = KernelSpec::mixture(
        0.8,
        vec![
            MixtureComponent {
                family: KernelFamily::ExponentialDecay,
                lambda: None,
                weight: 0.5,
            },
            MixtureComponent {
                family: KernelFamily::GaussianDecay,
                lambda: Some(0.4),
                weight: 0.3,
            },
            MixtureComponent {
                family: KernelFamily::PolynomialDecay,
                lambda: None,
                weight: 0.2,
            },
        ],
    )
    .expect("valid mixture");
    vec![
        KernelSpec::exponential(0.7),
        KernelSpec::uniform(),
        KernelSpec::gaussian_normalized(0.8),
        KernelSpec::gaussian_decay(0.6),
        KernelSpec::polynomial(),
        mixture,
    ]
}

fn random_buffer(rng: &mut ChaCha8Rng, dim: usize) -> (f64, Vec<(f64, Vec<f64>)>) {
    let n = rng.random_range(1..20);
    let t = rng.random_range(1.0..5.0);
    let mut taus: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..t)).collect();
    taus.sort_by(f64::total_cmp);
    let entries = taus
        .into_iter()
        .map(|tau| (tau, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    (t, entries)
}

/// Checks `Σ dK(t, tau_i) g_i dt` against central differences of `accumulate` in the
/// kernel rate. The derivative is injected so a broken one can be shown to fail.
pub fn sensitivity_check<D>(dk: D) -> Result<Check>
where
    D: Fn(&KernelSpec, f64, f64) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dim = 3;
    let dt = 0.1;
    let mut worst: f64 = 0.0;
    for kernel in kernel_zoo() {
        for _ in 0..20 {
            let (t, entries) = random_buffer(&mut rng, dim);
            let mut analytic = vec![0.0; dim];
            for (tau, g) in &entries {
                let w = dk(&kernel, t, *tau)? * dt;
                for (a, gi) in analytic.iter_mut().zip(g) {
                    *a += w * gi;
                }
            }
            let h = 1e-5 * kernel.lambda.max(1.0);
            let theta0 = vec![0.0; dim];
            let up = accumulate(&theta0, &entries, &kernel.with_lambda(kernel.lambda + h), t, dt)?;
            let down = accumulate(&theta0, &entries, &kernel.with_lambda(kernel.lambda - h), t, dt)?;
            let fd: Vec<f64> = up.iter().zip(down.iter()).map(|(u, d)| (u - d) / (2.0 * h)).collect();
            worst = worst.max(rel_err(&analytic, &fd));
        }
    }
    Ok(Check::below(
        "sensitivity_oracle",
        worst,
        1e-3,
        "all kernel families, 20 random buffers each".into(),
    ))
}

/// `sensitivity_lambda` itself against the same oracle.
pub fn sensitivity_lambda_check() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut worst: f64 = 0.0;
    for kernel in kernel_zoo() {
        for _ in 0..20 {
            let (t, entries) = random_buffer(&mut rng, 2);
            let s = sensitivity_lambda(2, &entries, &kernel, t, 0.1)?;
            let h = 1e-5 * kernel.lambda.max(1.0);
            let up = accumulate(&[0.0, 0.0], &entries, &kernel.with_lambda(kernel.lambda + h), t, 0.1)?;
            let down = accumulate(&[0.0, 0.0], &entries, &kernel.with_lambda(kernel.lambda - h), t, 0.1)?;
            let fd: Vec<f64> = up.iter().zip(down.iter()).map(|(u, d)| (u - d) / (2.0 * h)).collect();
            worst = worst.max(rel_err(&s, &fd));
        }
    }
    Ok(Check::below("sensitivity_lambda", worst, 1e-3, "all kernel families".into()))
}

/// Leibniz-path meta-gradient against the central-difference estimator.
pub fn meta_gradient_check() -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut spec = ScenarioSpec::new(ScenarioKind::StationaryNoise, 30, 0.1, 3);
    spec.noise_level = 0.5;
    let stream = generate(&spec)?;
    for (i, kernel) in kernel_zoo().into_iter().enumerate() {
        let shape = PredictorShape::new(spec.input_dim(), 3, 1, Head::Regression);
        let config = TrainerConfig {
            capacity: 20,
            seed: i as u64,
            ..TrainerConfig::default()
        };
        let out = run_stream(&config, &shape, &kernel, &stream)?;
        let a = meta_gradient(&out.state, &config, &shape, MetaEstimator::LeibnizPath)?;
        let b = meta_gradient(&out.state, &config, &shape, MetaEstimator::CentralDifference)?;
        worst = worst.max(scalar_rel_err(a, b));
    }
    Ok(Check::below(
        "meta_gradient_oracle",
        worst,
        1e-3,
        "all kernel families, relative error".into(),
    ))
}

/// A smooth noise-free stream observed `n` times over `[0, horizon]`.
pub fn smooth_stream(n: usize, horizon: f64) -> Vec<StreamSample> {
    let dt = horizon / n as f64;
    (1..=n)
        .map(|i| {
            let t = i as f64 * dt;
            StreamSample {
                t,
                x: vec![t.sin(), (0.5 * t).cos()],
                y: 0.5 * (0.7 * t).sin() + 0.2,
            }
        })
        .collect()
}

/// Final parameters of RiemannSum runs at successively halved steps; returns the
/// successive differences.
pub fn refinement_differences(levels: usize) -> Result<Vec<f64>> {
    let shape = PredictorShape::new(2, 4, 1, Head::Regression);
    let kernel = KernelSpec::exponential(1.0);
    let horizon = 20.0;
    let mut finals = Vec::with_capacity(levels);
    for level in 0..levels {
        let n = 200 << level;
        let config = TrainerConfig {
            dt: horizon / n as f64,
            capacity: n,
            ..TrainerConfig::default()
        };
        finals.push(run_stream(&config, &shape, &kernel, &smooth_stream(n, horizon))?.state.theta);
    }
    Ok(finals.windows(2).map(|w| w[1].distance(&w[0])).collect())
}

pub fn mode_consistency() -> Result<Check> {
    let diffs = refinement_differences(5)?;
    let worst = diffs.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    Ok(Check::below(
        "mode_consistency",
        worst,
        0.75,
        format!("successive differences {diffs:?}, worst ratio"),
    ))
}

/// Scenario used by the smoke configurations.
pub fn smoke_scenario(seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new(ScenarioKind::StationaryNoise, 200, 0.1, seed);
    spec.noise_level = 0.5;
    spec
}

/// Relative final-parameter gap between OdeFlow and RiemannSum on the smoke stream.
pub fn ode_riemann_gap(seed: u64) -> Result<f64> {
    let spec = smoke_scenario(seed);
    let stream = generate(&spec)?;
    let shape = PredictorShape::new(spec.input_dim(), 8, 1, Head::Regression);
    let kernel = KernelSpec::exponential(1.0);
    let riemann = TrainerConfig {
        dt: spec.dt,
        capacity: spec.horizon,
        seed,
        ..TrainerConfig::default()
    };
    let ode = TrainerConfig {
        mode: Mode::OdeFlow,
        ..riemann
    };
    let r = run_stream(&riemann, &shape, &kernel, &stream)?;
    let o = run_stream(&ode, &shape, &kernel, &stream)?;
    Ok(o.state.theta.distance(&r.state.theta) / r.state.theta.norm())
}

pub fn ode_vs_riemann() -> Result<Check> {
    let gap = ode_riemann_gap(0)?;
    Ok(Check::below(
        "ode_vs_riemann",
        gap,
        0.05,
        "relative norm gap of final parameters on the smoke stream".into(),
    ))
}
