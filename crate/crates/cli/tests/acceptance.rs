//! Acceptance criteria, one test each. Every test prints a `criterion N: PASS|FAIL`
//! line (visible with `--nocapture`) before asserting.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use intflow::integral::{accumulate, feynman_example, feynman_truncation, leibniz_derivative, LeibnizProblem, QuadratureGrid, QuadratureRule};
use intflow::kernel::KernelSpec;
use intflow::metrics::{drift_metrics, rmse, stability_index, DriftMetrics, PredictionLog};
use intflow::model::{Head, PredictorShape};
use intflow::ode::{fixed_step_rk5, integrate, OdeOptions};
use intflow::streams::{describe, generate, ScenarioKind, ScenarioSpec};
use intflow::trainer::{run_stream, Mode, TrainerConfig};
use intflow::validation::{gradient_check, meta_gradient_check, sensitivity_check, sensitivity_lambda_check, smoke_scenario};
use serde_json::Value;
use tempfile::TempDir;

fn report(n: u32, passed: bool, elapsed: Duration, budget: Duration, detail: String) {
    let ok = passed && elapsed <= budget;
    println!(
        "criterion {n}: {} ({detail}; {:.2}s of {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(passed, "criterion {n}: {detail}");
    assert!(elapsed <= budget, "criterion {n}: took {elapsed:?}");
}

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn criterion_1_feynman_example() {
    let start = Instant::now();
    let mut oracle_gap: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 1.0, 2.0] {
        let q = 1.0 + lambda * lambda;
        let (closed_i, closed_di) = (1.0 / q, -2.0 * lambda / (q * q));
        // the closed forms themselves, by brute-force quadrature well past the tail
        let far = 60.0 / lambda;
        let i = simpson(|x| (-lambda * x).exp() * x.sin(), 0.0, far, 400_000);
        let di = simpson(|x| -x * (-lambda * x).exp() * x.sin(), 0.0, far, 400_000);
        oracle_gap = oracle_gap.max((i - closed_i).abs()).max((di - closed_di).abs());

        let x_max = feynman_truncation(lambda);
        assert!((-lambda * x_max).exp() < 1e-12);
        let (i, di) = feynman_example(lambda, x_max, 200_001).unwrap();
        worst = worst.max((i - closed_i).abs()).max((di - closed_di).abs());
    }
    report(
        1,
        oracle_gap < 1e-9 && worst < 1e-4,
        start.elapsed(),
        Duration::from_secs(1),
        format!("closed-form oracle gap {oracle_gap:.1e}, max abs error {worst:.2e} (tol 1e-4)"),
    );
}

#[test]
fn criterion_2_leibniz_identity() {
    let start = Instant::now();
    let mut fixed: f64 = 0.0;
    for lambda in [0.5, 1.0, 2.0] {
        let x_max = feynman_truncation(lambda);
        let problem = LeibnizProblem::fixed_limits(
            0.0,
            x_max,
            |x, l| (-l * x).exp() * x.sin(),
            |x, l| -x * (-l * x).exp() * x.sin(),
        );
        let grid = QuadratureGrid::uniform(0.0, x_max, 100_001, QuadratureRule::Trapezoid).unwrap();
        let h = 1e-4;
        let numeric = (problem.integral(lambda + h, &grid).unwrap() - problem.integral(lambda - h, &grid).unwrap()) / (2.0 * h);
        fixed = fixed.max((numeric - leibniz_derivative(&problem, lambda, &grid).unwrap()).abs());
    }
    let mut variable: f64 = 0.0;
    for lambda in [0.25, 1.0, 1.7, 3.0] {
        let problem = LeibnizProblem {
            integrand: Box::new(|x, _| x),
            integrand_dlambda: Box::new(|_, _| 0.0),
            lower: Box::new(|_| 0.0),
            upper: Box::new(|l| l),
            lower_dlambda: Box::new(|_| 0.0),
            upper_dlambda: Box::new(|_| 1.0),
        };
        let grid = QuadratureGrid::uniform(0.0, 4.0, 41, QuadratureRule::Trapezoid).unwrap();
        variable = variable.max((leibniz_derivative(&problem, lambda, &grid).unwrap() - lambda).abs());
    }
    report(
        2,
        fixed < 1e-5 && variable < 1e-10,
        start.elapsed(),
        Duration::from_secs(1),
        format!("fixed limits {fixed:.1e} (tol 1e-5), variable limits {variable:.1e} (tol 1e-10)"),
    );
}

#[test]
fn criterion_3_gradient_engine() {
    let start = Instant::now();
    let check = gradient_check(10).unwrap();
    report(
        3,
        check.passed && check.measured < 1e-6,
        start.elapsed(),
        Duration::from_secs(5),
        format!("max relative error {:.1e} over 10 seeds and both heads", check.measured),
    );
}

#[test]
fn criterion_4_ode_solver() {
    let start = Instant::now();
    let opts = OdeOptions {
        rtol: 1e-8,
        atol: 1e-8,
        ..OdeOptions::default()
    };
    let sol = integrate(|_, y| Ok(vec![-y[0]]), &[1.0], 0.0, 1.0, &opts, None).unwrap();
    let err = (sol.last_state()[0] - (-1.0f64).exp()).abs();
    let exact = (-2.0f64).exp();
    let fixed = |n| (fixed_step_rk5(|_, y| Ok(vec![-y[0]]), &[1.0], 0.0, 2.0, n).unwrap()[0] - exact).abs();
    let ratio = fixed(10) / fixed(20);
    report(
        4,
        err < 1e-7 && (24.0..=40.0).contains(&ratio),
        start.elapsed(),
        Duration::from_secs(1),
        format!("adaptive error {err:.1e} (tol 1e-7), halving ratio {ratio:.2} (range [24, 40])"),
    );
}

#[test]
fn criterion_5_discretization_consistency() {
    let start = Instant::now();
    let riemann = |dt: f64| {
        let n = (1.0 / dt).round() as usize;
        let entries: Vec<(f64, Vec<f64>)> = (0..n).map(|i| (i as f64 * dt, vec![1.0])).collect();
        let theta = accumulate(&[0.0], &entries, &KernelSpec::exponential(1.0), 1.0, dt).unwrap();
        (theta[0] - (1.0 - (-1.0f64).exp())).abs()
    };
    let e1 = riemann(1e-4);
    let ratio = riemann(5e-5) / e1;

    let mut gap: f64 = 0.0;
    for seed in 0..3 {
        let spec = smoke_scenario(seed);
        assert_eq!(spec.horizon, 200);
        let stream = generate(&spec).unwrap();
        let shape = PredictorShape::new(spec.input_dim(), 8, 1, Head::Regression);
        let kernel = KernelSpec::exponential(1.0);
        let r_cfg = TrainerConfig {
            dt: spec.dt,
            capacity: 200,
            seed,
            ..TrainerConfig::default()
        };
        let o_cfg = TrainerConfig {
            mode: Mode::OdeFlow,
            ..r_cfg
        };
        let r = run_stream(&r_cfg, &shape, &kernel, &stream).unwrap().state.theta;
        let o = run_stream(&o_cfg, &shape, &kernel, &stream).unwrap().state.theta;
        gap = gap.max(o.distance(&r) / r.norm());
    }
    report(
        5,
        e1 < 2e-3 && (0.4..=0.6).contains(&ratio) && gap < 0.05,
        start.elapsed(),
        Duration::from_secs(30),
        format!("Riemann error {e1:.2e} (tol 2e-3), halving ratio {ratio:.3}, OdeFlow gap {:.2}% (tol 5%)", gap * 100.0),
    );
}

#[test]
fn criterion_6_sensitivity_path() {
    let start = Instant::now();
    let sens = sensitivity_lambda_check().unwrap();
    let kernel_sum = sensitivity_check(|k, t, tau| k.d_dlambda(t, tau)).unwrap();
    let meta = meta_gradient_check().unwrap();
    let worst = sens.measured.max(kernel_sum.measured).max(meta.measured);
    report(
        6,
        sens.passed && kernel_sum.passed && meta.passed && worst < 1e-3,
        start.elapsed(),
        Duration::from_secs(10),
        format!(
            "sensitivity {:.1e}, kernel-derivative sum {:.1e}, meta-gradient {:.1e} (tol 1e-3)",
            sens.measured, kernel_sum.measured, meta.measured
        ),
    );
}

fn sudden_drift(seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new(ScenarioKind::SuddenDrift, 2000, 0.01, seed);
    spec.noise_level = 0.5;
    // just past the 1000th sample so the shift lands on a sample boundary
    spec.shift_time = Some(10.0 + 1e-9);
    spec.shift_magnitude = Some(1.0);
    spec
}

#[test]
fn criterion_7_directional_ablation() {
    let start = Instant::now();
    let seeds = 10u64;
    let gaussian = KernelSpec::gaussian_normalized(1.0);
    let polynomial = KernelSpec::polynomial();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..seeds {
        let spec = sudden_drift(seed);
        let stream = generate(&spec).unwrap();
        let shift = describe(&spec).unwrap().shift_time().unwrap();
        let shape = PredictorShape::new(spec.input_dim(), 8, 1, Head::Regression);
        let config = TrainerConfig {
            dt: 0.3,
            capacity: 200,
            seed,
            ..TrainerConfig::default()
        };
        let drift = |k: &KernelSpec| -> DriftMetrics {
            let log = run_stream(&config, &shape, k, &stream).unwrap().log;
            drift_metrics(&log, shift, 10, 1.2).unwrap()
        };
        let (g, p) = (drift(&gaussian), drift(&polynomial));
        if g.error_spike < p.error_spike && g.recovery_time < p.recovery_time {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: gaussian spike {:.3} recovery {:.2} | polynomial spike {:.3} recovery {:.2}",
            g.error_spike, g.recovery_time, p.error_spike, p.recovery_time
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    report(
        7,
        2 * wins > seeds,
        start.elapsed(),
        Duration::from_secs(300),
        format!("GaussianNormalized(1) beat PolynomialDecay on both spike and recovery in {wins}/{seeds} seeds"),
    );
}

fn tail_rmse(log: &PredictionLog) -> f64 {
    let e = log.errors();
    rmse(&e[e.len() - e.len() / 10..]).unwrap()
}

#[test]
fn criterion_8_directional_stability() {
    let start = Instant::now();
    let seeds = 10u64;
    let kernel = KernelSpec::exponential(0.5);
    let (mut wins, mut rmse_q, mut rmse_s) = (0, 0.0, 0.0);
    for seed in 0..seeds {
        let mut spec = ScenarioSpec::new(ScenarioKind::StationaryNoise, 2000, 0.01, seed);
        spec.noise_level = 0.5;
        let stream = generate(&spec).unwrap();
        let shape = PredictorShape::new(spec.input_dim(), 8, 1, Head::Regression);
        let integral = TrainerConfig {
            dt: 0.3,
            capacity: 200,
            eta_sgd: 0.002,
            seed,
            ..TrainerConfig::default()
        };
        let sgd = TrainerConfig {
            mode: Mode::SgdBaseline,
            ..integral
        };
        let q = run_stream(&integral, &shape, &kernel, &stream).unwrap().log;
        let s = run_stream(&sgd, &shape, &kernel, &stream).unwrap().log;
        rmse_q += tail_rmse(&q) / seeds as f64;
        rmse_s += tail_rmse(&s) / seeds as f64;
        if stability_index(&q.errors(), 20).unwrap() <= stability_index(&s.errors(), 20).unwrap() {
            wins += 1;
        }
    }
    let matched = (rmse_q - rmse_s).abs() / rmse_q.max(rmse_s);
    report(
        8,
        matched <= 0.1 && 2 * wins > seeds,
        start.elapsed(),
        Duration::from_secs(300),
        format!(
            "final RMSE {rmse_q:.4} vs {rmse_s:.4} ({:.1}% apart, tol 10%), RiemannSum SI <= SGD SI in {wins}/{seeds} seeds",
            matched * 100.0
        ),
    );
}

fn intflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_intflow"))
        .args(args)
        .env_remove("INTFLOW_OUTPUT")
        .output()
        .expect("spawn intflow")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

/// Every data row has as many cells as the header and every non-label cell parses.
fn well_formed(path: &Path, label_cols: usize) -> bool {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let width = reader.headers().unwrap().len();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        if record.len() != width {
            return false;
        }
        if !record.iter().skip(label_cols).all(|c| c.is_empty() || c.parse::<f64>().is_ok()) {
            return false;
        }
        rows += 1;
    }
    rows > 0
}

/// Output files of a directory, with any wall-clock column blanked.
fn snapshot(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let text = fs::read_to_string(e.path()).unwrap();
            let text = if name.starts_with("bench") {
                text.lines().map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a).to_string()).collect::<Vec<_>>().join("\n")
            } else {
                text
            };
            (name, text)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_end_to_end() {
    let start = Instant::now();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    let mut problems = Vec::new();

    let validate = intflow(&["validate"]);
    if validate.status.code() != Some(0) {
        problems.push(format!("validate exited {:?}", validate.status.code()));
    }

    for pass in ["a", "b"] {
        for cmd in ["run", "ablate", "bench"] {
            let cfg = configs.join(format!("smoke_{cmd}.toml"));
            let out = tmp.path().join(pass).join(cmd);
            let o = intflow(&[cmd, "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap(), "--json"]);
            if o.status.code() != Some(0) {
                problems.push(format!("{cmd} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
            } else if serde_json::from_slice::<Value>(&o.stdout).is_err() {
                problems.push(format!("{cmd} --json printed invalid JSON"));
            }
        }
    }

    let a = tmp.path().join("a");
    for seed in [0, 1] {
        let log = a.join("run").join(format!("run_{seed}.csv"));
        if header(&log) != "t,pred,target,loss,lambda" || !well_formed(&log, 0) {
            problems.push(format!("malformed {}", log.display()));
        }
        let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("run").join(format!("summary_{seed}.json"))).unwrap()).unwrap();
        for key in ["config", "scenario", "metrics", "steps"] {
            if summary.get(key).is_none() {
                problems.push(format!("summary_{seed}.json lacks {key}"));
            }
        }
        if summary["config"]["seed"] != seed {
            problems.push(format!("summary_{seed}.json echoes the wrong seed"));
        }
    }
    let ablation = a.join("ablate/ablation.csv");
    if header(&ablation) != "kernel,error_spike,recovery_time,cumulative_error" || !well_formed(&ablation, 1) {
        problems.push("malformed ablation.csv".into());
    }
    let bench = a.join("bench/bench.csv");
    if !header(&bench).starts_with("mode,seeds,rmse_mean,rmse_std") || !header(&bench).ends_with(",step_time_us_mean") || !well_formed(&bench, 1)
    {
        problems.push("malformed bench.csv".into());
    }

    for cmd in ["run", "ablate", "bench"] {
        if snapshot(&a.join(cmd)) != snapshot(&tmp.path().join("b").join(cmd)) {
            problems.push(format!("{cmd} outputs differ between identical runs"));
        }
    }

    report(
        9,
        problems.is_empty(),
        start.elapsed(),
        Duration::from_secs(120),
        if problems.is_empty() {
            "validate exit 0, smoke outputs schema-valid and byte-identical on rerun".into()
        } else {
            problems.join("; ")
        },
    );
}
