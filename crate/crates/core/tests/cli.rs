use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lgcol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgcol")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(&dir.join("summary.json"))).unwrap()
}

/// Rows of a CSV file after its comment line, minus the named columns.
fn csv_without(text: &str, skip: &[&str]) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !skip.contains(&header[i].as_str())).collect();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            keep.iter().map(|&i| r[i].to_string()).collect()
        })
        .collect()
}

#[test]
fn solve_pendulum_lg2_writes_zero_first_order_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lgcol(&["solve", "--problem", "pendulum", "--scheme", "lg2", "--N", "12", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s["schema"], "lgcol.summary/1");
    let run = &s["runs"][0];
    assert_eq!(run["status"], "converged");
    assert_eq!(run["e1"][0].as_f64(), Some(0.0));

    let traj = read(&dir.path().join("trajectory_pendulum_lg2_N12.csv"));
    assert!(traj.starts_with("# schema: lgcol.trajectory/1"));
    let rows = csv_without(&traj, &[]);
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows[0].len(), 6);
    let tf = run["final_time"].as_f64().unwrap();
    assert_eq!(rows[999][0].parse::<f64>().unwrap(), tf);
    assert!(rows.iter().all(|r| r[4] == "0"));
    assert!(read(&dir.path().join("config.toml")).contains("scheme = \"lg2\""));
}

#[test]
fn solve_both_schemes_gives_two_rows_and_one_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lgcol(&["solve", "--problem", "cartpole", "--scheme", "both", "--N", "10", "--out", d, "--format", "csv"]);
    assert!(code(&out) <= 1, "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("summary.csv"));
    assert!(text.starts_with("# schema: lgcol.summary/1"));
    let rows = csv_without(&text, &[]);
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1].as_str(), rows[1][1].as_str()), ("lg", "lg2"));
    let config = read(&dir.path().join("config.toml"));
    assert!(config.contains("problem = \"cartpole\"") && config.contains("n = [10]"));
}

#[test]
fn zero_collocation_points_is_a_config_error() {
    let out = lgcol(&["solve", "--problem", "pendulum", "--N", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("N:"));
    let out = lgcol(&["sweep", "--N", "8..4"]);
    assert_eq!(code(&out), 2);
    let out = lgcol(&["solve", "--N", "8", "--problem", "rocket"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("problem"));
}

#[test]
fn non_convergence_exits_one_and_still_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lgcol(&["solve", "--scheme", "lg", "--N", "10", "--max-iter", "3", "--out", d]);
    assert_eq!(code(&out), 1);
    assert_eq!(summary(dir.path())["runs"][0]["status"], "max_iter");
}

#[test]
fn full_pendulum_sweep_has_twenty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lgcol(&["sweep", "--problem", "pendulum", "--scheme", "both", "--N", "6..24:2", "--format", "csv", "--out", d]);
    assert_eq!(code(&out), 0);
    let text = read(&dir.path().join("sweep.csv"));
    let comment = text.lines().next().unwrap();
    assert!(comment.starts_with("# schema: lgcol.sweep/1"));
    for col in ["scheme", "N", "E2_q0", "joint_E2", "iterations", "wall_seconds", "status"] {
        assert!(comment.contains(col), "{col} not documented");
    }
    let rows = csv_without(&text, &[]);
    assert_eq!(rows.len(), 20);
    let order: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(order[0], ("lg".into(), "6".into()));
    assert_eq!(order[10], ("lg2".into(), "6".into()));
    assert_eq!(order[19], ("lg2".into(), "24".into()));
}

#[test]
fn repeated_sweeps_match_apart_from_wall_time() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let out = lgcol(&["sweep", "--problem", "cartpole", "--N", "6,8", "--format", "csv", "--out", d]);
        assert_eq!(code(&out), 0);
        let text = read(&dir.path().join("sweep.csv"));
        let first_line = text.lines().next().unwrap().to_string();
        (first_line, csv_without(&text, &["wall_seconds"]))
    };
    assert_eq!(run(), run());
}

#[test]
fn custom_problem_file_overrides_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("di.toml");
    fs::write(&file, "base = \"double_integrator\"\ndistance = 4.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let problem = format!("custom:{}", file.display());
    let out = lgcol(&["solve", "--problem", &problem, "--scheme", "lg2", "--N", "12", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Bang-bang over distance 4 with |u| <= 1 takes 4 s.
    let tf = summary(&out_dir)["runs"][0]["final_time"].as_f64().unwrap();
    assert!((tf - 4.0).abs() < 0.05, "{tf}");

    fs::write(&file, "base = \"pendulum\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&lgcol(&["solve", "--problem", &problem, "--N", "6"])), 2);
}

#[test]
fn config_file_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let out = lgcol(&["solve", "--scheme", "lg2", "--N", "6", "--out", first.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let echoed = read(&first.join("config.toml"));
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, &echoed).unwrap();
    let out = lgcol(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(read(&first.join("config.toml")), echoed);
    let a = summary(&first);
    assert_eq!(a["config"]["seed"], serde_json::Value::Null);
}

#[test]
fn ivp_matches_reference_integrator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lgcol(&["ivp", "--problem", "pendulum", "--u", "0", "--q0", "0.1", "--tf", "1", "--N", "16", "--scheme", "both", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("ivp.json"))).unwrap();
    assert_eq!(report["schema"], "lgcol.ivp/1");
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        assert!(r["endpoint_discrepancy"].as_f64().unwrap() < 1e-6);
        assert!(r["max_grid_discrepancy"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn ivp_accepts_time_varying_expressions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = lgcol(&["ivp", "--u", "sin(3*t)", "--q0", "0.2", "--v0", "-0.1", "--tf", "1", "--N", "14", "--out", d, "--format", "csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.path().join("ivp.csv"));
    assert!(text.starts_with("# schema: lgcol.ivp/1"));
    let rows = csv_without(&text, &[]);
    assert!(rows[0][3].parse::<f64>().unwrap() < 1e-6);
}

#[test]
fn ivp_expression_errors_exit_two_with_position() {
    let out = lgcol(&["ivp", "--u", "2*tanh(t)", "--q0", "0.1", "--tf", "1", "--N", "8"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("position 2"));
    let out = lgcol(&["ivp", "--u", "sin(t", "--q0", "0.1", "--tf", "1", "--N", "8"]);
    assert_eq!(code(&out), 2);
}
