use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxtrend"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn columns(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: [&str; 6] = ["--chains", "2", "--warmup", "150", "--draws", "100"];

#[test]
fn default_fit_writes_outputs_and_covers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--trend",
        "piecewise_linear",
        "--sigma",
        "3",
        "--n",
        "100",
        "--seed",
        "2",
        "--out",
        s(&sim),
    ]);
    let fit = dir.path().join("fit");
    ok(&[
        "fit",
        "-i",
        s(&sim.join("data.csv")),
        "-o",
        s(&fit),
        "--order",
        "1",
        "--seed",
        "2",
        "--save-draws",
    ]);
    for f in ["summary.csv", "diagnostics.json", "manifest.json", "draws.bin"] {
        assert!(fit.join(f).exists(), "{f} missing");
    }
    let (header, rows) = columns(&fit.join("summary.csv"));
    assert_eq!(header, ["x", "median", "q025", "q975"]);
    let (_, truth) = columns(&sim.join("truth.csv"));
    let covered = rows
        .iter()
        .zip(&truth)
        .filter(|(r, t)| r[2] <= t[1] && t[1] <= r[3])
        .count();
    let cp = covered as f64 / rows.len() as f64;
    assert!(cp >= 0.85, "CP {cp}");

    let diag = read_json(&fit.join("diagnostics.json"));
    assert_eq!(diag["rhat"].as_array().unwrap().len(), 102);
    assert!(diag["lambda"].as_f64().unwrap() > 0.0);
    assert_eq!(diag["s2"].as_f64().unwrap(), 10.0);
    let manifest = read_json(&fit.join("manifest.json"));
    assert_eq!(manifest["resolved"]["spec"]["reparam"], "t1");
    assert_eq!(manifest["resolved"]["sampler"]["n_draws"], 3000);

    let bytes = fs::read(fit.join("draws.bin")).unwrap();
    assert_eq!(&bytes[..8], b"PXTDRAW1");
    let n_draws = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    assert_eq!((n_draws, dim), (12_000, 102));
    assert_eq!(bytes.len(), 24 + 8 * n_draws * dim);
}

#[test]
fn same_seed_gives_byte_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--trend", "sinusoid", "--n", "40", "--out", s(&sim)]);
    let data = sim.join("data.csv");
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let o = dir.path().join(name);
        let mut args = vec!["fit", "-i", s(&data), "-o", s(&o), "--seed", "9"];
        args.extend(QUICK);
        ok(&args);
        outs.push(fs::read(o.join("summary.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn thinning_is_required_for_large_second_order_fits() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--trend",
        "sinusoid",
        "--n",
        "1000",
        "--grid",
        "uniform_random",
        "--out",
        s(&sim),
    ]);
    let data = sim.join("data.csv");
    let rejected = dir.path().join("rejected");
    let out = run(&["fit", "-i", s(&data), "-o", s(&rejected), "--order", "2"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "ThinningRequired");
    assert!(err["message"].as_str().unwrap().contains("thinning"));
    assert!(!rejected.exists());

    let thinned = dir.path().join("thinned");
    let mut args = vec![
        "fit",
        "-i",
        s(&data),
        "-o",
        s(&thinned),
        "--order",
        "2",
        "--thin",
        "100",
    ];
    args.extend(QUICK);
    ok(&args);
    let (_, rows) = columns(&thinned.join("summary.csv"));
    assert_eq!(rows.len(), 1000);
    let manifest = read_json(&thinned.join("manifest.json"));
    assert_eq!(manifest["resolved"]["thinned_locations"], 100);
}

#[test]
fn project_examples() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.json");
    fs::write(&req, r#"{"kind": "L1", "theta": [0.5, -0.25], "alpha": 1.0}"#).unwrap();
    let p: Value = serde_json::from_slice(&ok(&["project", "-i", s(&req)]).stdout).unwrap();
    assert_eq!(p["point"], serde_json::json!([0.5, -0.25]));
    assert_eq!(p["distance_sq"], 0.0);

    fs::write(&req, r#"{"kind": "l1", "theta": [3], "alpha": 1}"#).unwrap();
    let p: Value = serde_json::from_slice(&ok(&["project", "-i", s(&req)]).stdout).unwrap();
    assert!((p["point"][0].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((p["alpha"].as_f64().unwrap() - 2.0).abs() < 1e-12);

    fs::write(&req, r#"{"kind": "tv", "theta": [0, 4], "alpha": 0}"#).unwrap();
    let p: Value = serde_json::from_slice(&ok(&["project", "-i", s(&req)]).stdout).unwrap();
    assert!((p["point"][0].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-9);
    assert!((p["alpha"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-9);
}

#[test]
fn shape_projection_matches_the_stored_oracle() {
    let case = read_json(Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/shape_toy.json"
    )));
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.json");
    let out = dir.path().join("out.json");
    fs::write(&req, case["request"].to_string()).unwrap();
    ok(&["project", "-i", s(&req), "-o", s(&out)]);
    let p = read_json(&out);
    let want = &case["expected"];
    for (a, b) in p["point"]
        .as_array()
        .unwrap()
        .iter()
        .zip(want["point"].as_array().unwrap())
    {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((p["alpha"].as_f64().unwrap() - want["alpha"].as_f64().unwrap()).abs() < 1e-6);
}

#[test]
fn malformed_input_gives_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.json");
    fs::write(&req, "{not json").unwrap();
    let out = run(&["project", "-i", s(&req)]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "ParseError");

    let out = run(&["simulate", "--trend", "zigzag", "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "UnknownTrend");

    let out = run(&[
        "fit",
        "-i",
        s(&req),
        "-o",
        s(&dir.path().join("x")),
        "--model",
        "pbsrtf",
    ]);
    assert!(!out.status.success());
}

#[test]
fn bench_smoke_run_emits_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "bench",
        "--trend",
        "piecewise_linear",
        "--sigma",
        "3",
        "--n",
        "40",
        "--replicates",
        "1",
        "-o",
    ];
    let out_dir = dir.path().join("bench");
    args.push(s(&out_dir));
    args.extend(QUICK);
    let out = ok(&args);
    assert!(String::from_utf8_lossy(&out.stdout).contains("MAD"));
    let (header, rows) = {
        let mut r = csv::Reader::from_path(out_dir.join("bench.csv")).unwrap();
        let h: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        (h, r.records().count())
    };
    assert_eq!(header[5], "mad_mean");
    assert_eq!(rows, 1);
    let row = read_json(&out_dir.join("bench.json"));
    assert_eq!(row["per_replicate"].as_array().unwrap().len(), 1);
}

#[test]
fn thin_and_simulate_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(
        &cfg,
        r#"{"trend": "sinusoid", "sigma": 3.0, "n": 300, "grid": "uniform_random", "seed": 4}"#,
    )
    .unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim)]);
    let (_, data) = columns(&sim.join("data.csv"));
    assert_eq!(data.len(), 300);
    let th = dir.path().join("thin");
    ok(&["thin", "-i", s(&sim.join("data.csv")), "--bins", "50", "-o", s(&th)]);
    let (header, rows) = columns(&th.join("thinned.csv"));
    assert_eq!(header, ["x", "ybar", "weight"]);
    assert!(rows.len() <= 50);
    assert_eq!(rows.iter().map(|r| r[2]).sum::<f64>(), 300.0);
    let (_, mapping) = columns(&th.join("mapping.csv"));
    assert_eq!(mapping.len(), 300);
}
