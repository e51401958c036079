use approx::assert_relative_eq;
use intflow::kernel::KernelSpec;
use intflow::model::{init_params, loss_and_grad, predict, Head, PredictorShape};
use intflow::streams::{generate, ScenarioKind, ScenarioSpec, StreamSample};
use intflow::trainer::{run_stream, Mode, TrainerConfig, UpdateScale};
use intflow::validation::{ode_riemann_gap, refinement_differences};

fn noisy_stream(seed: u64, n: usize) -> (ScenarioSpec, Vec<StreamSample>) {
    let mut spec = ScenarioSpec::new(ScenarioKind::StationaryNoise, n, 0.1, seed);
    spec.noise_level = 0.5;
    let stream = generate(&spec).unwrap();
    (spec, stream)
}

/// Straight re-derivation of the RiemannSum loop from its definition.
fn riemann_by_hand(
    shape: &PredictorShape,
    kernel: &KernelSpec,
    stream: &[StreamSample],
    capacity: usize,
    dt_eff: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let theta0 = init_params(shape, seed).into_inner();
    let mut theta = theta0.clone();
    let mut history: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut preds = Vec::new();
    for s in stream {
        preds.push(predict(shape, &theta, &s.x).unwrap()[0]);
        let (_, grad) = loss_and_grad(shape, &theta, &s.x, &[s.y]).unwrap();
        history.push((s.t, grad.iter().map(|g| -g).collect()));
        let start = history.len().saturating_sub(capacity);
        theta = theta0.clone();
        for (tau, g) in &history[start..] {
            let w = kernel.eval(s.t, *tau).unwrap() * dt_eff;
            for (th, gi) in theta.iter_mut().zip(g) {
                *th += w * gi;
            }
        }
    }
    (theta, preds)
}

#[test]
fn riemann_matches_hand_loop() {
    let (spec, stream) = noisy_stream(4, 80);
    let shape = PredictorShape::new(spec.input_dim(), 5, 1, Head::Regression);
    for (kernel, scale) in [
        (KernelSpec::exponential(0.8), UpdateScale::DtScaled),
        (KernelSpec::gaussian_normalized(1.0), UpdateScale::DtScaled),
        (KernelSpec::polynomial(), UpdateScale::DtScaled),
        (KernelSpec::exponential(0.05), UpdateScale::UnitWeighted),
    ] {
        let config = TrainerConfig {
            capacity: 17,
            update_scale: scale,
            dt: 0.02,
            seed: 9,
            ..TrainerConfig::default()
        };
        let out = run_stream(&config, &shape, &kernel, &stream).unwrap();
        let (theta, preds) = riemann_by_hand(&shape, &kernel, &stream, 17, config.dt_effective(), 9);
        for (a, b) in out.state.theta.iter().zip(&theta) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12, max_relative = 1e-10);
        }
        for (row, p) in out.log.rows.iter().zip(&preds) {
            assert_relative_eq!(row.pred, *p, epsilon = 1e-12, max_relative = 1e-10);
        }
    }
}

/// Forward and gradient of the 1-1-1 tanh network written out by hand.
fn scalar_net(theta: [f64; 4], x: f64, y: f64) -> (f64, [f64; 4]) {
    let [w1, b1, w2, b2] = theta;
    let h = (w1 * x + b1).tanh();
    let r = b2 + w2 * h - y;
    let dz = r * w2 * (1.0 - h * h);
    (b2 + w2 * h, [dz * x, dz, r * h, r])
}

#[test]
fn sgd_follows_scripted_sequence() {
    let shape = PredictorShape::new(1, 1, 1, Head::Regression);
    let script = [(0.5, 1.0), (-1.0, 0.2), (2.0, -0.3), (0.1, 0.7), (-0.4, -1.1)];
    let stream: Vec<StreamSample> = script
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| StreamSample {
            t: (i + 1) as f64,
            x: vec![x],
            y,
        })
        .collect();
    let config = TrainerConfig {
        mode: Mode::SgdBaseline,
        eta_sgd: 0.3,
        seed: 2,
        ..TrainerConfig::default()
    };
    let out = run_stream(&config, &shape, &KernelSpec::exponential(1.0), &stream).unwrap();

    let init = init_params(&shape, 2);
    let mut theta = [init[0], init[1], init[2], init[3]];
    for (row, &(x, y)) in out.log.rows.iter().zip(&script) {
        let (pred, grad) = scalar_net(theta, x, y);
        assert_relative_eq!(row.pred, pred, max_relative = 1e-14);
        for (th, g) in theta.iter_mut().zip(grad) {
            *th -= 0.3 * g;
        }
    }
    for (a, b) in out.state.theta.iter().zip(theta) {
        assert_relative_eq!(*a, b, max_relative = 1e-14);
    }
}

#[test]
fn predictions_ignore_their_own_target() {
    let (spec, stream) = noisy_stream(1, 60);
    let shape = PredictorShape::new(spec.input_dim(), 4, 1, Head::Regression);
    let k = 37;
    let mut perturbed = stream.clone();
    perturbed[k].y += 100.0;
    for mode in [Mode::RiemannSum, Mode::OdeFlow, Mode::SgdBaseline] {
        let config = TrainerConfig {
            mode,
            ..TrainerConfig::default()
        };
        let kernel = KernelSpec::exponential(1.0);
        let a = run_stream(&config, &shape, &kernel, &stream).unwrap();
        let b = run_stream(&config, &shape, &kernel, &perturbed).unwrap();
        assert_eq!(a.log.rows[..=k].iter().map(|r| r.pred).collect::<Vec<_>>(),
                   b.log.rows[..=k].iter().map(|r| r.pred).collect::<Vec<_>>());
        assert_ne!(a.log.rows[k + 1].pred, b.log.rows[k + 1].pred);
    }
}

#[test]
fn runs_are_deterministic() {
    let (spec, stream) = noisy_stream(6, 50);
    let shape = PredictorShape::new(spec.input_dim(), 4, 1, Head::Regression);
    let mut config = TrainerConfig {
        mode: Mode::OdeFlow,
        seed: 11,
        ..TrainerConfig::default()
    };
    config.meta.enabled = true;
    let kernel = KernelSpec::exponential(1.0);
    let a = run_stream(&config, &shape, &kernel, &stream).unwrap();
    let b = run_stream(&config, &shape, &kernel, &stream).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.state.theta, b.state.theta);
}

#[test]
fn constant_target_is_learned() {
    let stream: Vec<StreamSample> = (0..400)
        .map(|i| StreamSample {
            t: (i + 1) as f64 * 0.05,
            x: vec![((i % 7) as f64 - 3.0) / 3.0, 1.0],
            y: 1.5,
        })
        .collect();
    let shape = PredictorShape::new(2, 4, 1, Head::Regression);
    for mode in [Mode::RiemannSum, Mode::OdeFlow, Mode::SgdBaseline] {
        let config = TrainerConfig {
            mode,
            dt: 0.3,
            capacity: 100,
            ..TrainerConfig::default()
        };
        let out = run_stream(&config, &shape, &KernelSpec::exponential(1.0), &stream).unwrap();
        let losses: Vec<f64> = out.log.rows.iter().map(|r| r.loss).collect();
        let first = losses[..40].iter().sum::<f64>() / 40.0;
        let last = losses[360..].iter().sum::<f64>() / 40.0;
        assert!(last < first, "{mode:?}: {first} -> {last}");
    }
}

#[test]
fn riemann_trajectories_converge_under_refinement() {
    let diffs = refinement_differences(4).unwrap();
    for w in diffs.windows(2) {
        assert!(w[1] / w[0] < 0.75, "{diffs:?}");
    }
}

#[test]
fn ode_flow_tracks_riemann_sum() {
    for seed in 0..3 {
        let gap = ode_riemann_gap(seed).unwrap();
        assert!(gap < 0.05, "seed {seed}: {gap}");
    }
}

#[test]
fn ode_flow_honours_sample_spacing() {
    // trainer dt differs from the stream spacing; both modes must still agree
    let (spec, stream) = noisy_stream(2, 150);
    let shape = PredictorShape::new(spec.input_dim(), 4, 1, Head::Regression);
    let riemann = TrainerConfig {
        dt: 0.03,
        capacity: 150,
        ..TrainerConfig::default()
    };
    let ode = TrainerConfig {
        mode: Mode::OdeFlow,
        ..riemann
    };
    let kernel = KernelSpec::exponential(1.0);
    let r = run_stream(&riemann, &shape, &kernel, &stream).unwrap();
    let o = run_stream(&ode, &shape, &kernel, &stream).unwrap();
    assert!(o.state.theta.distance(&r.state.theta) / r.state.theta.norm() < 0.05);
}

#[test]
fn failing_step_is_located() {
    let stream = vec![
        StreamSample { t: 1.0, x: vec![0.0], y: 0.0 },
        StreamSample { t: 2.0, x: vec![0.0, 1.0], y: 0.0 },
    ];
    let shape = PredictorShape::new(1, 2, 1, Head::Regression);
    let err = run_stream(&TrainerConfig::default(), &shape, &KernelSpec::exponential(1.0), &stream).unwrap_err();
    assert!(matches!(err, intflow::Error::AtStep { index: 1, .. }), "{err:?}");
}
