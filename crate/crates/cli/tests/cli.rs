use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn hope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    let p: PathBuf = dir.path().join(name);
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn expand_then_eval_at_center_returns_f0() {
    let dir = TempDir::new().unwrap();
    let poly = path(&dir, "p.json");
    let o = hope(&[
        "expand",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0.3",
        "--order",
        "8",
        "--out",
        &poly,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("terms = 9"));
    let o = hope(&["eval", "--poly", &poly, "--input", "0.3"]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert_eq!(v, 0.3f64.sin());
}

#[test]
fn eval_batch_csv_with_header() {
    let dir = TempDir::new().unwrap();
    let poly = path(&dir, "p.json");
    let batch = path(&dir, "b.csv");
    let out = path(&dir, "v.csv");
    std::fs::write(&batch, "x\n0.0\n0.1\n-0.1\n").unwrap();
    assert!(hope(&[
        "expand",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0",
        "--order",
        "9",
        "--out",
        &poly
    ])
    .status
    .success());
    let o = hope(&[
        "eval", "--poly", &poly, "--batch", &batch, "--out", &out, "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let values = json["values"].as_array().unwrap();
    assert_eq!(values.len(), 3);
    assert!((values[1].as_f64().unwrap() - 0.1f64.sin()).abs() < 1e-15);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
}

#[test]
fn mixed_expansion_of_two_input_output() {
    let dir = TempDir::new().unwrap();
    let poly = path(&dir, "p.json");
    let o = hope(&[
        "expand",
        "--model",
        &fixture("two_out.json"),
        "--output-index",
        "1",
        "--x0",
        "0.2,-0.1",
        "--order",
        "3",
        "--mode",
        "mixed",
        "--out",
        &poly,
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["terms"], 10);
    assert_eq!(json["mode"], "mixed");
}

#[test]
fn multi_output_needs_index() {
    let dir = TempDir::new().unwrap();
    let o = hope(&[
        "expand",
        "--model",
        &fixture("two_out.json"),
        "--x0",
        "0,0",
        "--order",
        "2",
        "--out",
        &path(&dir, "p.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--output-index"));
    let o = hope(&[
        "expand",
        "--model",
        &fixture("two_out.json"),
        "--output-index",
        "5",
        "--x0",
        "0,0",
        "--order",
        "2",
        "--out",
        &path(&dir, "p.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_errors_exit_two_with_path() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "p.json");
    let o = hope(&[
        "expand",
        "--model",
        &fixture("bad_kind.json"),
        "--x0",
        "0",
        "--order",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("modules[0].kind") && err.contains("lstm"),
        "{err}"
    );
    let o = hope(&[
        "expand",
        "--model",
        &fixture("future_version.json"),
        "--x0",
        "0",
        "--order",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&out).exists());
}

#[test]
fn wrong_point_length_is_input_error() {
    let dir = TempDir::new().unwrap();
    let o = hope(&[
        "expand",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0,1",
        "--order",
        "2",
        "--out",
        &path(&dir, "p"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_warns_on_piecewise_linear() {
    let dir = TempDir::new().unwrap();
    let poly = path(&dir, "p.json");
    let out = path(&dir, "c.csv");
    let image = fixture("image.json");
    let o = hope(&[
        "expand",
        "--model",
        &fixture("relu_pool.json"),
        "--x0",
        &image,
        "--order",
        "3",
        "--out",
        &poly,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hope(&[
        "compare",
        "--model",
        &fixture("relu_pool.json"),
        "--poly",
        &poly,
        "--samples",
        "20",
        "--radius",
        "0.01",
        "--seed",
        "3",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("effective order 1"));
    assert!(stderr(&o).contains("seed: 3"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("x0,x1,"));
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn compare_grid_reports_errors() {
    let dir = TempDir::new().unwrap();
    let poly = path(&dir, "p.json");
    let out = path(&dir, "c.csv");
    hope(&[
        "expand",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0",
        "--order",
        "11",
        "--out",
        &poly,
    ]);
    let o = hope(&[
        "compare",
        "--model",
        &fixture("sine.json"),
        "--poly",
        &poly,
        "--grid",
        "-0.5:0.5:21",
        "--out",
        &out,
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(json["max_error"].as_f64().unwrap() < 1e-12);
    let o = hope(&[
        "compare",
        "--model",
        &fixture("sine.json"),
        "--poly",
        &poly,
        "--grid",
        "1:0:5",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_writes_envelope() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "b.csv");
    let o = hope(&[
        "bounds",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0",
        "--order",
        "5",
        "--interval",
        "-1",
        "1",
        "--grid",
        "201",
        "--out",
        &out,
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(json["e1"].as_f64().unwrap() <= json["e2"].as_f64().unwrap());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("x,f,poly,f1,f2,f_u,f_d"));
    assert_eq!(csv.lines().count(), 202);
}

#[test]
fn heatmap_matches_input_shape() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "h.csv");
    let per = path(&dir, "po.csv");
    let image = fixture("image.json");
    let o = hope(&[
        "heatmap",
        "--model",
        &fixture("relu_pool.json"),
        "--x0",
        &image,
        "--order",
        "2",
        "--dx",
        "0.1",
        "--out",
        &out,
        "--per-order-out",
        &per,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "channel,row,col0,col1,col2,col3"
    );
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(
        std::fs::read_to_string(&per).unwrap().lines().count(),
        1 + 2 * 16
    );
    let o = hope(&[
        "heatmap",
        "--model",
        &fixture("relu_pool.json"),
        "--x0",
        &image,
        "--method",
        "gradient",
        "--out",
        &out,
        "--per-order-out",
        &per,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_table() {
    let o = hope(&[
        "convergence",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0.3",
        "--order",
        "6",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["ratios"].as_array().unwrap().len(), 6);
    assert_eq!(json["divergent"], false);
}

#[test]
fn oracle_passes_and_rejects_high_fd_order() {
    let dir = TempDir::new().unwrap();
    let report = path(&dir, "r.csv");
    let o = hope(&[
        "oracle",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0.3",
        "--order",
        "10",
        "--report",
        &report,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&report).unwrap().lines().count(),
        11
    );
    let o = hope(&[
        "oracle",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0.3",
        "--order",
        "4",
        "--method",
        "fd",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hope(&[
        "oracle",
        "--model",
        &fixture("sine.json"),
        "--x0",
        "0.3",
        "--order",
        "6",
        "--method",
        "fd",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn relu_at_kink_is_numeric_error() {
    let dir = TempDir::new().unwrap();
    let model = path(&dir, "relu.json");
    std::fs::write(
        &model,
        r#"{"schema_version":1,"input_shape":[1],"modules":[
            {"kind":"fully_connected","in_features":1,"out_features":1,"weight":[1.0],"bias":[0.0]},
            {"kind":"activation","function":"relu"}]}"#,
    )
    .unwrap();
    let o = hope(&["oracle", "--model", &model, "--x0", "0", "--order", "2"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn bench_and_random_mlp() {
    let dir = TempDir::new().unwrap();
    let model = path(&dir, "m.json");
    let poly = path(&dir, "p.json");
    let out = path(&dir, "bench.csv");
    let o = hope(&[
        "random-mlp",
        "--input",
        "2",
        "--hidden",
        "4,4",
        "--w0",
        "1",
        "--seed",
        "9",
        "--out",
        &model,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        hope(&["expand", "--model", &model, "--x0", "0,0", "--order", "3", "--out", &poly])
            .status
            .success()
    );
    let o = hope(&[
        "bench",
        "--model",
        &model,
        "--poly",
        &poly,
        "--batches",
        "1,8",
        "--repeat",
        "2",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("batch,network_median_s,poly_median_s,speedup"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_thread_count_is_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_hope"))
        .args([
            "convergence",
            "--model",
            &fixture("sine.json"),
            "--x0",
            "0",
            "--order",
            "2",
        ])
        .env("HOPE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
