//! End-to-end tests of the `prio-market` binary: exit codes, output
//! determinism, and self-consistency of emitted CSV data.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prio_market_core::equilibrium::{cp_revenue, masses_multi};
use prio_market_core::{CpProfile, DelayProfile, MarketParams};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prio-market")
}

fn table2_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/table2_default.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("PRIO_MARKET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn table2_body() -> String {
    fs::read_to_string(table2_path()).unwrap()
}

#[test]
fn validate_succeeds_on_bundled_scenario() {
    let out = run(&["validate", "--scenario", table2_path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("regime: partial_coverage"), "{text}");
    assert!(text.contains("part 1 (coverage): violated"));
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Five CPs against m = 6.
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json["cps"].as_array_mut().unwrap().pop();
    let path = write_scenario(dir.path(), "bad.json", &json.to_string());
    let out = run(&["equilibrium", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("cps"), "{err}");

    // Unknown top-level key.
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json.as_object_mut()
        .unwrap()
        .insert("surprise".into(), serde_json::json!(1));
    let path = write_scenario(dir.path(), "unknown.json", &json.to_string());
    let out = run(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("surprise"));
}

#[test]
fn solver_infeasibility_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json["market"]["v"] = serde_json::json!(25.0);
    let path = write_scenario(dir.path(), "tiny_v.json", &json.to_string());
    let out = run(&[
        "equilibrium",
        "--scenario",
        path.to_str().unwrap(),
        "--grid",
        "2001",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("negative mass"));
}

#[test]
fn oracle_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // Coverage fails softly: masses evaluate but users opt out of midpoints.
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json["market"]["v"] = serde_json::json!(90.0);
    let path = write_scenario(dir.path(), "v90.json", &json.to_string());
    let out = run(&[
        "oracle",
        "--scenario",
        path.to_str().unwrap(),
        "--grid",
        "10001",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("oracle mismatch"));
}

#[test]
fn oracle_passes_on_bundled_scenario() {
    let out = run(&[
        "oracle",
        "--scenario",
        table2_path().to_str().unwrap(),
        "--grid",
        "10001",
    ]);
    assert!(out.status.success());
}

#[test]
fn throttled_delays_gated_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json.as_object_mut().unwrap().insert(
        "delays".into(),
        serde_json::json!([6.06, 6.06, 4.5, 6.06, 6.06, 6.06]),
    );
    let path = write_scenario(dir.path(), "throttled.json", &json.to_string());
    let bare = run(&[
        "welfare",
        "--scenario",
        path.to_str().unwrap(),
        "--grid",
        "2001",
    ]);
    assert_eq!(bare.status.code(), Some(2));
    let flagged = run(&[
        "welfare",
        "--scenario",
        path.to_str().unwrap(),
        "--grid",
        "2001",
        "--allow-throttling",
    ]);
    assert!(flagged.status.success());
}

#[test]
fn custom_sweep_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json.as_object_mut().unwrap().insert(
        "sweep".into(),
        serde_json::json!({"path": "cps.1.s", "range": [6.0, 16.0], "steps": 21}),
    );
    let path = write_scenario(dir.path(), "swept.json", &json.to_string());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let run = run(&[
            "sweep",
            "custom",
            "--scenario",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success());
    }
    let a = fs::read(&out_a).unwrap();
    let b = fs::read(&out_b).unwrap();
    assert_eq!(a, b, "reruns must be byte-identical");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.trim_end().lines().count(), 22, "header plus 21 rows");
}

#[test]
fn infeasible_sweep_points_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&table2_body()).unwrap();
    json.as_object_mut().unwrap().insert(
        "sweep".into(),
        serde_json::json!({"path": "market.v", "range": [20.0, 100.0], "steps": 5}),
    );
    let path = write_scenario(dir.path(), "verr.json", &json.to_string());
    let out = dir.path().join("rows.csv");
    let status = run(&[
        "sweep",
        "custom",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "sweep must not abort on bad points"
    );
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.trim_end().lines().collect();
    assert_eq!(lines.len(), 6);
    let header: Vec<&str> = lines[0].split(',').collect();
    let err_col = header.iter().position(|c| *c == "error").unwrap();
    let n1_col = header.iter().position(|c| *c == "n_1").unwrap();
    let fields: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    let bad: Vec<&Vec<&str>> = fields.iter().filter(|f| !f[err_col].is_empty()).collect();
    let good: Vec<&Vec<&str>> = fields.iter().filter(|f| f[err_col].is_empty()).collect();
    assert!(!bad.is_empty(), "low base values must fail");
    assert!(!good.is_empty(), "high base values must succeed");
    for f in bad {
        assert!(f[n1_col].is_empty(), "error rows leave numerics empty");
    }
}

#[test]
fn emitted_rows_recompute_from_their_own_columns() {
    // Self-consistency: per-CP (n, n1, n2, revenue) in an optimize row must
    // reproduce from its (d, p) columns via the equilibrium operations.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt.csv");
    let status = run(&[
        "optimize",
        "--scenario",
        table2_path().to_str().unwrap(),
        "--grid",
        "2001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.trim_end().lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let idx: HashMap<&str, usize> = header.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let fields: Vec<&str> = lines[1].split(',').collect();
    let get = |name: &str| -> f64 { fields[idx[name]].parse().unwrap() };

    let params = MarketParams {
        base_value: 100.0,
        transport_cost: 500.0,
        residual_rate: 0.5,
        ad_attenuation: 0.5,
        traffic_rate: 5.0,
        access_fee: 33.0,
        cp_count: 6,
        default_delay: 6.0,
    };
    let cps: Vec<CpProfile> = (1..=6).map(|j| CpProfile::new(j, 10.0, 2.27)).collect();
    let delays = DelayProfile::new(
        (1..=6).map(|j| get(&format!("d_{j}"))).collect(),
        params.default_delay,
    )
    .unwrap();
    let masses = masses_multi(&params, &cps, &delays).unwrap();
    for j in 1..=6 {
        let mass = masses.get(j);
        assert!((mass.n - get(&format!("n_{j}"))).abs() < 1e-9);
        assert!((mass.n1 - get(&format!("n1_{j}"))).abs() < 1e-9);
        assert!((mass.n2 - get(&format!("n2_{j}"))).abs() < 1e-9);
        let p = get(&format!("p_{j}"));
        let z = delays.get(j) < params.default_delay;
        let revenue = cp_revenue(&params, &cps[j - 1], mass, p, z);
        assert!(
            (revenue - get(&format!("revenue_{j}"))).abs() < 1e-9,
            "CP{j}: {revenue} vs {}",
            get(&format!("revenue_{j}"))
        );
    }
}

#[test]
fn fig5_recipe_shows_throttling_hazard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig5.csv");
    let status = run(&[
        "sweep",
        "fig5",
        "--scenario",
        table2_path().to_str().unwrap(),
        "--grid",
        "5001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.trim_end().lines().collect();
    assert_eq!(lines.len(), 14, "13 sweep rows plus header");
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = |name: &str| header.iter().position(|c| *c == name).unwrap();
    let throttle = col("delta_throttle_closed");
    let both = col("delta_both_closed");
    let mut throttle_vals = Vec::new();
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        throttle_vals.push(fields[throttle].parse::<f64>().unwrap());
        // Prioritizing both CPs never hurts without throttling.
        assert!(fields[both].parse::<f64>().unwrap() >= 0.0);
    }
    assert!(throttle_vals.iter().any(|&v| v < 0.0));
    assert!(throttle_vals.iter().any(|&v| v > 0.0));
}
