use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn wishmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wishmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

/// 3 x 4 design, 4 rows per cell, two responses with a strong A effect.
fn small_csv() -> String {
    let mut s = String::from("factor_a,factor_b,u,v\n");
    for i in 0..3 {
        for j in 0..4 {
            for k in 0..4 {
                let u = 10.0 * i as f64 + ((i * 13 + j * 7 + k * 5) % 11) as f64 / 3.0;
                let v = ((i * 3 + j * 5 + k * k * 7) % 13) as f64 - 0.5 * j as f64;
                let _ = writeln!(s, "lvl{i},g{j},{u},{v}");
            }
        }
    }
    s
}

fn manova_args<'a>(input: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "manova",
        "--input",
        input,
        "--responses",
        "u,v",
        "--n-per-cell",
        "3",
        "--subsample-seed",
        "5",
        "--n-mc",
        "2000",
        "--mc-seed",
        "9",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn manova_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "d.csv", &small_csv());
    let json = dir.path().join("r.json");
    let out = wishmix(&manova_args(csv.to_str().unwrap(), &["--json", json.to_str().unwrap()]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("a = 3, b = 4, n = 3 per cell (N = 36), d = 2"));
    assert!(text.contains("Beta Type II MANOVA on (u, v)"));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[0]["name"], "A");
    assert_eq!(entries[0]["p"]["n_mc"], 2000);
    assert!(entries[0]["p"]["p_hat"].as_f64().unwrap() < 0.01);
    assert_eq!(report["config"]["functional"], "hotelling-lawley");
    assert_eq!(report["config"]["d"], 2);
}

#[test]
fn manova_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "d.csv", &small_csv());
    let args = manova_args(csv.to_str().unwrap(), &["--functional", "wilks", "--verbose"]);
    let a = wishmix(&args);
    let b = wishmix(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sigma_file_does_not_change_p_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "d.csv", &small_csv());
    let sigma = write(dir.path(), "s.txt", "2\n3 1.2\n1.2 0.9\n");
    let j1 = dir.path().join("1.json");
    let j2 = dir.path().join("2.json");
    let input = csv.to_str().unwrap();
    assert!(wishmix(&manova_args(input, &["--json", j1.to_str().unwrap()])).status.success());
    assert!(wishmix(&manova_args(
        input,
        &["--json", j2.to_str().unwrap(), "--sigma", sigma.to_str().unwrap()]
    ))
    .status
    .success());
    let r1: Value = serde_json::from_str(&std::fs::read_to_string(j1).unwrap()).unwrap();
    let r2: Value = serde_json::from_str(&std::fs::read_to_string(j2).unwrap()).unwrap();
    for k in 0..3 {
        let (e1, e2) = (&r1["entries"][k], &r2["entries"][k]);
        assert_eq!(e1["p"], e2["p"]);
        for (x, y) in e1["eigenvalues"].as_array().unwrap().iter().zip(e2["eigenvalues"].as_array().unwrap()) {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "d.csv", &small_csv());
    let input = csv.to_str().unwrap();

    let out = wishmix(&[
        "manova", "--input", input, "--responses", "u,missing", "--n-per-cell", "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));

    let out = wishmix(&["manova", "--input", input, "--responses", "u", "--n-per-cell", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 rows, 5 required"));

    let bad_sigma = write(dir.path(), "s.txt", "2\n1 2\n2 1\n");
    let out = wishmix(&manova_args(input, &["--sigma", bad_sigma.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));

    let out = wishmix(&["manova", "--input", input]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let out = wishmix(&["verify", "--dim", "1", "--dof", "4", "--n-draws", "20000", "--specs", "1", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    // below the minimum draw count a report never passes
    let out = wishmix(&["verify", "--dim", "1", "--dof", "4", "--n-draws", "500", "--specs", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = wishmix(&["verify", "--dim", "2", "--dof", "4.5", "--n-draws", "500", "--specs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn sample_csv(dist: &str, params: &str, n: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.txt", params);
    let out = wishmix(&["sample", "--dist", dist, "--params", p.to_str().unwrap(), "--n", n, "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn sample_wishart_mean() {
    let (header, rows) = sample_csv("wishart", "dof 5\nsigma\n2\n2 1\n1 2\ndelta\n2\n1 0\n0 0\n", "40000");
    assert_eq!(header, ["x1_1", "x1_2", "x2_2"]);
    let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
    // nu Sigma + Delta = [[11, 5], [5, 10]]
    for (c, want) in [(0, 11.0), (1, 5.0), (2, 10.0)] {
        assert!((mean(c) - want).abs() / want < 0.03, "column {c}: {}", mean(c));
    }
}

#[test]
fn sample_other_distributions() {
    let (h, rows) = sample_csv("chisq", "dof 3\nnoncen 2\n", "20000");
    assert_eq!(h, ["x"]);
    let m = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
    assert!((m - 5.0).abs() < 0.1);

    let (h, rows) = sample_csv("beta2", "dof1 4\ndof2 10\ndim 2\n", "10");
    assert_eq!(h.len(), 3);
    assert_eq!(rows.len(), 10);

    let (h, rows) = sample_csv("matrix-normal", "mean\n2 2\n1 2\n3 4\nsigma\n2\n1 0\n0 1\n", "5");
    assert_eq!(h, ["x1_1", "x1_2", "x2_1", "x2_2"]);
    assert_eq!(rows.len(), 5);

    let (a, _) = sample_csv("chisq", "dof 3\n", "3");
    assert_eq!(a, ["x"]);
}

#[test]
fn sample_rejects_bad_params() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.txt", "dof 1.5\nsigma\n2\n1 0\n0 1\ndelta\n2\n1 0\n0 0\n");
    let out = wishmix(&["sample", "--dist", "wishart", "--params", p.to_str().unwrap(), "--n", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_reports_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("c.json");
    let out = wishmix(&[
        "calibrate", "--a", "3", "--b", "3", "--n", "2", "--dim", "1", "--datasets", "50", "--n-mc", "300",
        "--seed", "1", "--json", json.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    // 3 factors x (4 functionals + F test)
    assert_eq!(summary["entries"].as_array().unwrap().len(), 15);
    assert_eq!(summary["n_datasets"], 50);
}
