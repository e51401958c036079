//! The four subcommands. Each returns a JSON value describing what it did; `main`
//! decides whether to print that or a plain-text table.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use intflow::kernel::KernelSpec;
use intflow::metrics::{drift_metrics, evaluate, MetricsRecord, PredictionLog};
use intflow::streams::{describe, generate, ScenarioMetadata};
use intflow::trainer::{run_stream, Mode};
use intflow::validation;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ResolvedRun, RunConfig};
use crate::error::CliError;

/// Header of the ablation table.
pub const ABLATION_HEADER: [&str; 4] = ["kernel", "error_spike", "recovery_time", "cumulative_error"];

struct SeedRun {
    resolved: ResolvedRun,
    meta: ScenarioMetadata,
    log: PredictionLog,
    metrics: MetricsRecord,
    step_time_us: f64,
}

fn execute(resolved: ResolvedRun) -> Result<SeedRun, CliError> {
    let stream = generate(&resolved.scenario)?;
    let meta = describe(&resolved.scenario)?;
    let start = Instant::now();
    let out = run_stream(&resolved.trainer, &resolved.model, &resolved.kernel, &stream)
        .map_err(|e| CliError::Runtime(format!("seed {}: {e}", resolved.seed)))?;
    let step_time_us = start.elapsed().as_secs_f64() * 1e6 / stream.len().max(1) as f64;
    let metrics = evaluate(&out.log, &meta, &resolved.metrics);
    Ok(SeedRun {
        resolved,
        meta,
        log: out.log,
        metrics,
        step_time_us,
    })
}

/// Runs independent jobs in parallel; results keep the input order.
fn execute_all(jobs: Vec<ResolvedRun>) -> Result<Vec<SeedRun>, CliError> {
    jobs.into_par_iter().map(execute).collect::<Vec<_>>().into_iter().collect()
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Values of one metric across runs, or `None` if any run lacks it.
fn column(records: &[&MetricsRecord], field: usize) -> Option<Vec<f64>> {
    records.iter().map(|r| r.values()[field]).collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ResolvedRun,
    scenario: &'a ScenarioMetadata,
    steps: usize,
    metrics: &'a MetricsRecord,
}

pub fn run(config: &RunConfig, out: &Path) -> Result<Value, CliError> {
    prepare_dir(out)?;
    let runs = execute_all(config.seeds.iter().map(|&s| config.resolve(s)).collect())?;
    let mut entries = Vec::new();
    for r in &runs {
        let seed = r.resolved.seed;
        let log_path = out.join(format!("run_{seed}.csv"));
        let mut w = csv_writer(&log_path)?;
        for row in &r.log.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        let summary_path = out.join(format!("summary_{seed}.json"));
        let summary = Summary {
            config: &r.resolved,
            scenario: &r.meta,
            steps: r.log.rows.len(),
            metrics: &r.metrics,
        };
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(&summary_path, text)?;
        entries.push(json!({
            "seed": seed,
            "log": log_path,
            "summary": summary_path,
            "metrics": r.metrics,
        }));
    }
    Ok(json!({ "command": "run", "output_dir": out, "runs": entries }))
}

pub fn ablate(config: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let grid: &[KernelSpec] = &config.ablate.kernels;
    if grid.is_empty() {
        return Err(CliError::Config("ablate needs a non-empty [ablate] kernels list".into()));
    }
    let shift = describe(&config.scenario)?
        .shift_time()
        .ok_or_else(|| CliError::Config("ablate needs a drift scenario with a shift time".into()))?;
    prepare_dir(out)?;
    let mut jobs = Vec::new();
    for kernel in grid {
        for &seed in &config.seeds {
            let mut r = config.resolve(seed);
            r.kernel = kernel.clone();
            jobs.push(r);
        }
    }
    let runs = execute_all(jobs)?;
    let mut per_run = csv_writer(&out.join("ablation_runs.csv"))?;
    per_run.write_record(["kernel", "seed", "error_spike", "recovery_time", "cumulative_error"])?;
    let mut table = csv_writer(&out.join("ablation.csv"))?;
    table.write_record(ABLATION_HEADER)?;
    let mut rows = Vec::new();
    for (kernel, chunk) in grid.iter().zip(runs.chunks(config.seeds.len())) {
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for r in chunk {
            let m = &r.resolved.metrics;
            let d = drift_metrics(&r.log, shift, m.window, m.rho)?;
            per_run.write_record([
                kernel.label(),
                r.resolved.seed.to_string(),
                d.error_spike.to_string(),
                d.recovery_time.to_string(),
                d.cumulative_error.to_string(),
            ])?;
            cols[0].push(d.error_spike);
            cols[1].push(d.recovery_time);
            cols[2].push(d.cumulative_error);
        }
        let means = cols.map(|c| mean(&c));
        table.write_record([
            kernel.label(),
            means[0].to_string(),
            means[1].to_string(),
            means[2].to_string(),
        ])?;
        rows.push(json!({
            "kernel": kernel.label(),
            "error_spike": means[0],
            "recovery_time": means[1],
            "cumulative_error": means[2],
        }));
    }
    per_run.flush()?;
    table.flush()?;
    Ok(json!({ "command": "ablate", "output_dir": out, "seeds": config.seeds, "rows": rows }))
}

pub fn bench(config: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let modes: &[Mode] = &config.bench.modes;
    if modes.len() < 2 {
        return Err(CliError::Config(format!(
            "bench compares at least two trainer modes, got {}",
            modes.len()
        )));
    }
    prepare_dir(out)?;
    let mut jobs = Vec::new();
    for &mode in modes {
        for &seed in &config.seeds {
            let mut r = config.resolve(seed);
            r.trainer.mode = mode;
            jobs.push(r);
        }
    }
    let runs = execute_all(jobs)?;

    let mut per_run = csv_writer(&out.join("bench_runs.csv"))?;
    let mut header = vec!["mode".to_string(), "seed".to_string()];
    header.extend(MetricsRecord::FIELDS.iter().map(|f| f.to_string()));
    header.push("step_time_us".into());
    per_run.write_record(&header)?;

    let mut table = csv_writer(&out.join("bench.csv"))?;
    table.write_record(bench_header())?;
    let mut rows = Vec::new();
    for (mode, chunk) in modes.iter().zip(runs.chunks(config.seeds.len())) {
        let label = format!("{mode:?}");
        for r in chunk {
            let mut record = vec![label.clone(), r.resolved.seed.to_string()];
            record.extend(r.metrics.values().map(cell));
            record.push(r.step_time_us.to_string());
            per_run.write_record(&record)?;
        }
        let records: Vec<&MetricsRecord> = chunk.iter().map(|r| &r.metrics).collect();
        let mut record = vec![label.clone(), chunk.len().to_string()];
        let mut stats = serde_json::Map::new();
        for (i, field) in MetricsRecord::FIELDS.iter().enumerate() {
            let col = column(&records, i);
            let (m, s) = match &col {
                Some(c) => (Some(mean(c)), Some(std_dev(c))),
                None => (None, None),
            };
            record.push(cell(m));
            record.push(cell(s));
            if let (Some(m), Some(s)) = (m, s) {
                stats.insert(field.to_string(), json!({ "mean": m, "std": s }));
            }
        }
        let times: Vec<f64> = chunk.iter().map(|r| r.step_time_us).collect();
        record.push(mean(&times).to_string());
        table.write_record(&record)?;
        rows.push(json!({ "mode": label, "metrics": stats, "step_time_us_mean": mean(&times) }));
    }
    per_run.flush()?;
    table.flush()?;
    Ok(json!({ "command": "bench", "output_dir": out, "seeds": config.seeds, "rows": rows }))
}

/// `mode,seeds,<field>_mean,<field>_std,...,step_time_us_mean`.
pub fn bench_header() -> Vec<String> {
    let mut h = vec!["mode".to_string(), "seeds".to_string()];
    for f in MetricsRecord::FIELDS {
        h.push(format!("{f}_mean"));
        h.push(format!("{f}_std"));
    }
    h.push("step_time_us_mean".into());
    h
}

/// Runs the self-test battery. The report is returned even when checks fail so it can
/// be printed before the failure exit.
pub fn validate() -> Result<(Value, Option<CliError>), CliError> {
    let report = validation::run_all();
    let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let value = serde_json::to_value(&report)?;
    let err = (!failed.is_empty()).then_some(CliError::Validation(failed));
    Ok((value, err))
}

/// Plain-text pass/fail table of a validation report.
pub fn validation_table(value: &Value) -> String {
    let mut s = format!("{:<28} {:<6} {:>12} {:>12}  detail\n", "check", "result", "measured", "tolerance");
    for c in value["checks"].as_array().into_iter().flatten() {
        let num = |v: &Value| v.as_f64().map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<28} {:<6} {:>12} {:>12}  {}\n",
            c["name"].as_str().unwrap_or(""),
            if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" },
            num(&c["measured"]),
            num(&c["tolerance"]),
            c["detail"].as_str().unwrap_or(""),
        ));
    }
    s
}

/// Short human-readable account of a finished command.
pub fn describe_outcome(value: &Value) -> String {
    let out = value["output_dir"].as_str().map(PathBuf::from).unwrap_or_default();
    match value["command"].as_str() {
        Some("run") => {
            let mut s = String::new();
            for r in value["runs"].as_array().into_iter().flatten() {
                s.push_str(&format!("seed {}: {}\n", r["seed"], r["metrics"]));
            }
            s.push_str(&format!("wrote {}\n", out.display()));
            s
        }
        Some("ablate") | Some("bench") => {
            let mut s = String::new();
            for r in value["rows"].as_array().into_iter().flatten() {
                s.push_str(&format!("{r}\n"));
            }
            s.push_str(&format!("wrote {}\n", out.display()));
            s
        }
        _ => validation_table(value),
    }
}
