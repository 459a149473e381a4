use std::fmt::Write as _;
use std::path::Path;

use super::twin::{ExperimentResult, RunResult};
use crate::error::{Error, Result};

/// Per-cycle errors as CSV, one line per completed cycle.
pub fn series_csv(result: &RunResult) -> String {
    let mut s = String::from("cycle,state_rmse,global_param_rmse,local_param_rmse\n");
    for (k, c) in result.series.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", k + 1, c.state, c.global_param, c.local_param);
    }
    s
}

pub fn emit_series(result: &RunResult, path: &Path) -> Result<()> {
    std::fs::write(path, series_csv(result)).map_err(|e| Error::io(path, e))
}

/// Structured-text summary: configuration echo, repetition-averaged scores
/// (mean and standard deviation over converged repetitions) and one table
/// per repetition.
pub fn summary_toml(result: &ExperimentResult) -> String {
    let spinup = result.config.spinup;
    let (sm, ss) = result.state_stats();
    let (gm, gs) = result.global_stats();
    let (lm, ls) = result.local_stats();
    let mut scores = toml::Table::new();
    for (k, v) in [
        ("state_rmse_mean", sm),
        ("state_rmse_std", ss),
        ("global_param_rmse_mean", gm),
        ("global_param_rmse_std", gs),
        ("local_param_rmse_mean", lm),
        ("local_param_rmse_std", ls),
    ] {
        scores.insert(k.into(), toml::Value::Float(v));
    }
    scores.insert("repetitions".into(), toml::Value::Integer(result.runs.len() as i64));
    scores.insert("diverged".into(), toml::Value::Integer(result.diverged_count() as i64));

    let runs: Vec<toml::Value> = result
        .runs
        .iter()
        .map(|r| {
            let mut t = toml::Table::new();
            t.insert("repetition".into(), toml::Value::Integer(r.repetition as i64));
            t.insert("seed".into(), toml::Value::Integer(r.seed as i64));
            t.insert("diverged".into(), toml::Value::Boolean(r.diverged()));
            if let Some(c) = r.diverged_at {
                t.insert("diverged_at".into(), toml::Value::Integer(c as i64));
            }
            t.insert("cycles_completed".into(), toml::Value::Integer(r.series.len() as i64));
            let last = r.last();
            for (k, v) in [
                ("state_rmse", r.time_avg_state(spinup)),
                ("global_param_rmse", r.time_avg_global(spinup)),
                ("local_param_rmse", r.time_avg_local(spinup)),
                ("initial_state_rmse", r.initial.state),
                ("initial_global_param_rmse", r.initial.global_param),
                ("initial_local_param_rmse", r.initial.local_param),
                ("final_state_rmse", last.state),
                ("final_global_param_rmse", last.global_param),
                ("final_local_param_rmse", last.local_param),
            ] {
                t.insert(k.into(), toml::Value::Float(v));
            }
            toml::Value::Table(t)
        })
        .collect();

    let mut doc = toml::Table::new();
    doc.insert(
        "config".into(),
        toml::Value::try_from(&result.config).expect("configuration is always serialisable"),
    );
    doc.insert("scores".into(), toml::Value::Table(scores));
    doc.insert("run".into(), toml::Value::Array(runs));
    toml::to_string(&doc).expect("summary is always serialisable")
}

pub fn emit_summary(result: &ExperimentResult, path: &Path) -> Result<()> {
    std::fs::write(path, summary_toml(result)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::twin::{CycleScores, RunResult};
    use crate::harness::ExperimentConfig;
    use std::time::Duration;

    fn run(rep: usize, n: usize) -> RunResult {
        RunResult {
            repetition: rep,
            seed: rep as u64,
            initial: CycleScores {
                state: 3.0,
                ..Default::default()
            },
            series: (0..n)
                .map(|k| CycleScores {
                    state: 0.1 * (k + rep + 1) as f64,
                    global_param: 0.5,
                    local_param: 0.0,
                    monomial: 0.5,
                })
                .collect(),
            diverged_at: None,
            wall_time: Duration::from_millis(5),
        }
    }

    #[test]
    fn series_lines_and_stability() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let r = run(0, 3);
        emit_series(&r, &p).unwrap();
        let a = std::fs::read(&p).unwrap();
        assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 4);
        emit_series(&r, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), a);
        let err = emit_series(&r, &dir.path().join("missing/x.csv")).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn summary_has_mean_and_std() {
        let cfg = ExperimentConfig {
            cycles: 4,
            spinup: 1,
            ..Default::default()
        };
        let res = ExperimentResult {
            config: cfg,
            runs: (0..8).map(|i| run(i, 4)).collect(),
        };
        let text = summary_toml(&res);
        let doc: toml::Table = text.parse().unwrap();
        let scores = doc["scores"].as_table().unwrap();
        // recompute from the series
        let per_run: Vec<f64> = res
            .runs
            .iter()
            .map(|r| r.series[1..].iter().map(|c| c.state).sum::<f64>() / 3.0)
            .collect();
        let mean = per_run.iter().sum::<f64>() / 8.0;
        let std = (per_run.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((scores["state_rmse_mean"].as_float().unwrap() - mean).abs() < 1e-12);
        assert!((scores["state_rmse_std"].as_float().unwrap() - std).abs() < 1e-12);
        assert_eq!(doc["run"].as_array().unwrap().len(), 8);
        assert_eq!(ExperimentConfig::from_toml_str(&toml::to_string(&doc["config"]).unwrap()).unwrap(), res.config);
        assert_eq!(summary_toml(&res), text);
    }
}
