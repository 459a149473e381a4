use std::path::Path;
use std::process::{Command, Output};

fn hml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hml-enkf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SHORT: &str = r#"
model = "l96i"
filter = "letkf_hml"
n_e = 12
cycles = 30
spinup = 10
truth_spinup = 200
climatology_steps = 200
r = 6.0
"#;

#[test]
fn run_writes_series_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("out");
    let o = hml(&["run", &cfg, "--repetitions", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for rep in 0..2 {
        let csv = std::fs::read_to_string(out.join(format!("series_{rep:03}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 31);
        assert!(csv.starts_with("cycle,state_rmse,global_param_rmse,local_param_rmse\n"));
    }
    let summary: toml::Table = std::fs::read_to_string(out.join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["scores"]["repetitions"].as_integer(), Some(2));
    assert_eq!(summary["config"]["n_e"].as_integer(), Some(12));
}

#[test]
fn flags_override_the_file_and_replay_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = hml(&[
            "run", &cfg, "--ne", "10", "--filter", "lensrf_hml", "--set", "lambda=1.03", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read_to_string(out.join("summary.toml")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let t: toml::Table = a.parse().unwrap();
    assert_eq!(t["config"]["n_e"].as_integer(), Some(10));
    assert_eq!(t["config"]["filter"].as_str(), Some("lensrf_hml"));
    assert_eq!(t["config"]["lambda"].as_float(), Some(1.03));
}

#[test]
fn all_repetitions_diverging_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SHORT}global = [\"a\"]\nstd_a = 3.0\ndivergence_window = 5\n");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = hml(&["run", &cfg, "--ne", "3", "--cycles", "400", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = hml(&["tune", &cfg, "--ne", "3", "--cycles", "400", "--grid", "lambda=1.02"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_input_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    assert_eq!(hml(&["run", &cfg, "--set", "nonsense=1"]).status.code(), Some(1));
    assert_eq!(hml(&["run", "/definitely/missing.toml"]).status.code(), Some(1));
    assert_eq!(hml(&["tune", &cfg, "--grid", "lambda=abc"]).status.code(), Some(1));
    let bad = write_config(dir.path(), "n_e = 1\n");
    let o = hml(&["run", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ensemble size"));
}

#[test]
fn tune_reports_table_and_best() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let best = dir.path().join("best.toml");
    let o = hml(&["tune", &cfg, "--grid", "r=4,6;lambda=1.0,1.02", "--best", best.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 4);
    assert!(text.contains("best:"));
    let t: toml::Table = std::fs::read_to_string(best).unwrap().parse().unwrap();
    assert!(t.contains_key("lambda"));
}

#[test]
fn equiv_and_lyapunov_and_skill() {
    let o = hml(&["equiv", "--systems", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max pairwise"));

    let o = hml(&["lyapunov", "l96i", "--exponents", "3", "--steps", "200", "--transient", "100"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let o = hml(&["skill", &cfg, "--trials", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("monomials,") && out.contains("forcing,"));
}
