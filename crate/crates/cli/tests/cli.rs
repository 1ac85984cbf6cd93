use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn netar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netar"))
        .args(args)
        .output()
        .expect("spawn netar")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = netar(args);
    assert!(
        out.status.success(),
        "netar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_stdout(args: &[&str]) -> Value {
    serde_json::from_str(&ok_stdout(args)).unwrap()
}

fn code(args: &[&str]) -> i32 {
    netar(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ring-network panel with one covariate, written to `dir/name`.
fn simulate_to(dir: &Path, name: &str, t_len: usize, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let spec = fixture("ring6.json");
    let t = t_len.to_string();
    let mut args = vec!["simulate", "--spec", s(&spec), "--t-len", &t, "--out", s(&out)];
    args.extend_from_slice(extra);
    ok_stdout(&args);
    out
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn stability_matches_closed_form_radius() {
    // W = swap has eigenvalues +-1; for -1 the lag polynomial is z^2 - 1.4z + 0.9,
    // whose complex roots have modulus sqrt(0.9).
    let v = json_stdout(&["stability", "--spec", s(&fixture("nar22_swap.json"))]);
    let radius = v["radius"].as_f64().unwrap();
    assert!((radius - 0.9f64.sqrt()).abs() < 1e-10, "radius {radius}");
    assert_eq!(v["stable"], Value::Bool(true));
    assert_eq!(v["sufficient_condition"], Value::Bool(false));

    let csv = ok_stdout(&["stability", "--spec", s(&fixture("nar22_swap.json")), "--format", "csv"]);
    assert!(csv.starts_with("radius,stable,sufficient_condition\n0.948"));
}

#[test]
fn effective_config_is_echoed_to_stderr() {
    let out = netar(&["stability", "--spec", s(&fixture("nar22_swap.json")), "--seed", "9"]);
    let line = String::from_utf8(out.stderr).unwrap();
    let cfg: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(cfg["effective_config"]["global"]["seed"], 9);
    assert!(cfg["effective_config"]["command"]["stability"].is_object());
}

#[test]
fn simulate_is_deterministic_and_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate_to(dir.path(), "a.csv", 30, &["--seed", "5", "--error", "sar", "--rho", "0.3"]);
    let b = simulate_to(dir.path(), "b.csv", 30, &["--seed", "5", "--error", "sar", "--rho", "0.3"]);
    let c = simulate_to(dir.path(), "c.csv", 30, &["--seed", "6", "--error", "sar", "--rho", "0.3"]);
    let (ta, tb, tc) = (
        std::fs::read_to_string(a).unwrap(),
        std::fs::read_to_string(b).unwrap(),
        std::fs::read_to_string(c).unwrap(),
    );
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
    assert!(ta.starts_with("t,node,value,y1\n"));
    assert_eq!(csv_rows(&ta).len(), 30 * 6);
}

#[test]
fn noiseless_fit_recovers_spec_and_forecasts_next_value() {
    let dir = tempfile::tempdir().unwrap();
    let full = simulate_to(dir.path(), "full.csv", 121, &["--sigma2", "0", "--seed", "2"]);
    let text = std::fs::read_to_string(&full).unwrap();
    // drop the last period and forecast it
    let all = csv_rows(&text);
    let last = &all[all.len() - 6..];
    let mut lines: Vec<&str> = text.lines().collect();
    lines.truncate(lines.len() - 6);
    let train = dir.path().join("train.csv");
    std::fs::write(&train, lines.join("\n") + "\n").unwrap();

    let ring = fixture("ring6.csv");
    let base = ["--data", s(&train), "--w", s(&ring), "--covariates", "y1"];
    let fit: Value = json_stdout(&[&["fit"][..], &base[..]].concat());
    let truth = |kind: &str| match kind {
        "a" => 0.3,
        "b" => 0.2,
        _ => 0.5,
    };
    let coefs = fit["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 18);
    for c in coefs {
        let est = c["estimate"].as_f64().unwrap();
        assert!((est - truth(c["kind"].as_str().unwrap())).abs() < 1e-8, "{c}");
    }
    assert_eq!(fit["sigma_kind"], "identity");

    let fc = ok_stdout(&[&["forecast", "--format", "csv"][..], &base[..]].concat());
    let rows = csv_rows(&fc);
    assert_eq!(rows.len(), 6);
    for (r, actual) in rows.iter().zip(last) {
        assert_eq!(r[0], actual[1]);
        let (f, x): (f64, f64) = (r[1].parse().unwrap(), actual[2].parse().unwrap());
        assert!((f - x).abs() < 1e-8 * x.abs().max(1.0), "forecast {f} vs {x}");
    }
}

#[test]
fn egls_sar_fit_reports_rho() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "d.csv", 300, &["--error", "sar", "--rho", "0.5", "--seed", "4"]);
    let ring = fixture("ring6.csv");
    let v = json_stdout(&[
        "fit", "--data", s(&data), "--w", s(&ring), "--covariates", "y1", "--estimator", "egls",
    ]);
    assert_eq!(v["estimator"], "egls_sar");
    let rho = v["sigma_kind"]["sar"]["rho_hat"].as_f64().unwrap();
    assert!((rho - 0.5).abs() < 0.25, "rho_hat {rho}");
    for c in v["coefficients"].as_array().unwrap() {
        let (lo, est, hi) = (c["ci_lo"].as_f64().unwrap(), c["estimate"].as_f64().unwrap(), c["ci_hi"].as_f64().unwrap());
        assert!(lo < est && est < hi);
    }
    assert!(v["diagnostics"]["radius"].as_f64().unwrap() < 1.0);

    let csv = ok_stdout(&[
        "fit", "--data", s(&data), "--w", s(&ring), "--covariates", "y1", "--format", "csv",
    ]);
    assert!(csv.starts_with("node,kind,lag,estimate,se,ci_lo,ci_hi\n"));
    assert_eq!(csv_rows(&csv).len(), 18);
}

#[test]
fn forecast_window_reports_pmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "d.csv", 100, &["--seed", "8"]);
    let ring = fixture("ring6.csv");
    let out = netar(&[
        "forecast", "--data", s(&data), "--w", s(&ring), "--covariates", "y1", "--train", "80", "--format", "csv",
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 20 * 6);
    let mut sq = 0.0;
    for r in &rows {
        let (f, a, e): (f64, f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!((a - f - e).abs() < 1e-12);
        sq += e * e;
    }
    let stderr = String::from_utf8(out.stderr).unwrap();
    let summary: Value = serde_json::from_str(stderr.lines().nth(1).unwrap()).unwrap();
    let pmse = summary["pmse"].as_f64().unwrap();
    assert!((pmse - sq / rows.len() as f64).abs() < 1e-10, "pmse {pmse}");
}

#[test]
fn select_picks_true_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "d.csv", 400, &["--seed", "13"]);
    let ring = fixture("ring6.csv");
    let v = json_stdout(&["select", "--data", s(&data), "--w", s(&ring), "--covariates", "y1"]);
    assert_eq!(v["q_hat"], 1);
    assert_eq!(v["bic_values"].as_array().unwrap().len(), 3);
}

#[test]
fn bootstrap_intervals_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "d.csv", 150, &["--seed", "21"]);
    let ring = fixture("ring6.csv");
    let args = ["bootstrap", "--data", s(&data), "--w", s(&ring), "--covariates", "y1", "--reps", "100"];
    let v = json_stdout(&args);
    let ints = v["intervals"].as_array().unwrap();
    assert_eq!(ints.len(), 18);
    for c in ints {
        assert!(c["ci_lo"].as_f64().unwrap() <= c["ci_hi"].as_f64().unwrap());
    }
    let again = json_stdout(&[&args[..], &["--threads", "2"]].concat());
    assert_eq!(v, again);
}

#[test]
fn replicate_is_thread_invariant() {
    let sc = fixture("small_scenario.json");
    let one = ok_stdout(&["replicate", "--scenario", s(&sc), "--format", "csv", "--threads", "1"]);
    let two = ok_stdout(&["replicate", "--scenario", s(&sc), "--format", "csv", "--threads", "2"]);
    assert_eq!(one, two);
    assert!(one.starts_with("scenario_id,estimator,group,T,true,mean_est,rmse,ci_len,cp,n_ok\n"));
    // 2 estimators x 3 groups x 2 sample sizes
    assert_eq!(csv_rows(&one).len(), 12);

    let v = json_stdout(&["replicate", "--scenario", s(&sc)]);
    assert_eq!(v["rows"].as_array().unwrap().len(), 12);
}

#[test]
fn replicate_misspec_zero_rate_matches_true_weights() {
    let out = ok_stdout(&["replicate", "--scenario", s(&fixture("small_misspec.json")), "--format", "csv"]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 8);
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][3], "true_w");
        assert_eq!(pair[1][3], "misspec_w");
        if pair[0][0] == "zero" {
            assert_eq!(pair[0][4..], pair[1][4..]);
        }
    }
}

/// Great-circle distance by the spherical law of cosines.
fn cosine_law_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    6371.0088 * (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).acos()
}

#[test]
fn geo_weights_follow_inverse_distance() {
    let coords = [(48.8566, 2.3522), (50.8503, 4.3517), (52.3676, 4.9041), (45.7640, 4.8357)];
    let v = json_stdout(&["geo-weights", "--coords", s(&fixture("coords.csv")), "--cutoff-km", "450"]);
    assert_eq!(v["node_ids"][3], "lyon");
    let mat = |k: &str| -> Vec<Vec<f64>> { serde_json::from_value(v[k].clone()).unwrap() };
    let (w, phi) = (mat("w"), mat("phi"));
    for m in [&w, &phi] {
        for (i, row) in m.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[i], 0.0);
        }
    }
    let d = |i: usize, j: usize| cosine_law_km(coords[i], coords[j]);
    let ratio = phi[0][1] / phi[0][2];
    assert!((ratio - d(0, 2) / d(0, 1)).abs() < 1e-9, "ratio {ratio}");
    for i in 0..4 {
        for j in 0..4 {
            if i != j && d(i, j) > 450.0 {
                assert_eq!(w[i][j], 0.0, "({i},{j}) beyond cutoff");
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let (wp, pp) = (dir.path().join("w.csv"), dir.path().join("phi.csv"));
    ok_stdout(&[
        "geo-weights", "--coords", s(&fixture("coords.csv")), "--format", "csv", "--out", s(&wp), "--phi-out", s(&pp),
    ]);
    let phi_csv = std::fs::read_to_string(pp).unwrap();
    assert_eq!(phi_csv.lines().count(), 4);
    assert!(std::fs::read_to_string(wp).unwrap().lines().all(|l| l.split(',').count() == 4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ring = fixture("ring6.csv");
    let swap = fixture("swap.csv");
    let data = simulate_to(dir.path(), "d.csv", 40, &[]);

    // usage
    assert_eq!(code(&["fit", "--bogus"]), 1);
    assert_eq!(code(&["fit", "--data", s(&data), "--w", s(&ring), "--estimator", "gls"]), 1);
    assert_eq!(code(&["fit", "--data", s(&data), "--w", s(&ring), "--level", "1.5"]), 1);
    assert_eq!(code(&["bootstrap", "--data", s(&data), "--w", s(&ring), "--reps", "10"]), 1);
    assert_eq!(code(&["--help"]), 0);

    // data
    assert_eq!(code(&["fit", "--data", "/nonexistent.csv", "--w", s(&ring)]), 2);
    assert_eq!(code(&["fit", "--data", s(&data), "--w", s(&swap)]), 2);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(20);
    let gappy = dir.path().join("gap.csv");
    std::fs::write(&gappy, lines.join("\n")).unwrap();
    assert_eq!(code(&["fit", "--data", s(&gappy), "--w", s(&ring)]), 2);
    assert_eq!(code(&["fit", "--data", s(&gappy), "--w", s(&ring), "--gap-policy", "forward-fill"]), 0);
    assert_eq!(code(&["fit", "--data", s(&data), "--w", s(&ring), "--log"]), 2);

    // numerical: a constant series has a singular Gram matrix
    let constant: String = std::iter::once("t,node,value\n".to_string())
        .chain((0..30).flat_map(|t| (0..2).map(move |i| format!("{t},{i},1.0\n"))))
        .collect();
    let cpath = dir.path().join("const.csv");
    std::fs::write(&cpath, constant).unwrap();
    assert_eq!(code(&["fit", "--data", s(&cpath), "--w", s(&swap)]), 3);
}
