use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bonesoup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bonesoup"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const QUADRATIC: &str = r#"{
    "world": {
        "kind": "quadratic",
        "rewards": [
            {"peak": 0.0, "maximizer": [1.0, 1.0], "curvature": 1.0},
            {"peak": 0.0, "maximizer": [3.0, -1.0], "curvature": [[1.0, 0.0], [0.0, 4.0]]}
        ],
        "reference": [0.0, 0.0]
    },
    "objectives": 2,
    "methods": ["bone_soup(auto)", "rewarded_soup", "morlhf_oracle"],
    "grid": {"two_obj_step": 0.1},
    "trainer": {"eta": 0.0}
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn example21_json_matches_closed_form() {
    let o = bonesoup(&["example21", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let star: Vec<f64> = serde_json::from_value(v["theta_star"].clone()).unwrap();
    assert!((star[0] - 2.0).abs() < 1e-9 && (star[1] + 0.6).abs() < 1e-9);
    let bone: Vec<f64> = serde_json::from_value(v["bone_merged"].clone()).unwrap();
    assert!((bone[1] + 45.0 / 77.0).abs() < 1e-9);
    assert_eq!(v["bone_closer"], serde_json::Value::Bool(true));
}

#[test]
fn verify_theorem_reports_no_violations() {
    let o = bonesoup(&[
        "verify-theorem",
        "--beta",
        "0.7",
        "--k1",
        "0.5",
        "--k2",
        "3",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["violations"], 0);
    let len = v["interval_length"].as_f64().unwrap();
    assert!((len - (2.0f64 * 0.49 - 1.4 + 1.0).sqrt()).abs() < 1e-12);
}

#[test]
fn verify_theorem_rejects_beta_outside_range() {
    let o = bonesoup(&["verify-theorem", "--beta", "0.4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_matrix_circulant_rows() {
    let o = bonesoup(&["gen-matrix", "--n", "3", "--beta", "0.6"]);
    assert!(o.status.success());
    let rows: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let want = if i == j { 0.6 } else { 0.2 };
            assert!((x - want).abs() < 1e-15);
        }
    }
}

#[test]
fn gen_matrix_unknown_catalog_is_config_error() {
    assert_eq!(
        bonesoup(&["gen-matrix", "--catalog", "42"]).status.code(),
        Some(2)
    );
}

#[test]
fn gen_matrix_needs_a_source() {
    assert_eq!(bonesoup(&["gen-matrix"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_outputs_and_metrics_reread_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUADRATIC);
    let out = dir.path().join("out");
    let o = bonesoup(&["sweep", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fronts.csv", "metrics.csv", "result.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    // header plus 3 methods × 11 preferences
    assert_eq!(stdout(&o).lines().count(), 34);

    let written = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let reference: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    let r: Vec<String> = reference["hv_reference"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| format!("{:e}", x.as_f64().unwrap()))
        .collect();
    let fronts = out.join("fronts.csv");
    let o = bonesoup(&["metrics", fronts.to_str().unwrap(), "--ref", &r.join(",")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), written);
}

#[test]
fn sweep_output_does_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUADRATIC);
    let run = |w: &str| {
        let out = dir.path().join(format!("w{w}"));
        let o = bonesoup(&[
            "sweep",
            &config,
            "--workers",
            w,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn select_beta_lists_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUADRATIC);
    let o = bonesoup(&["select-beta", &config, "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scores"].as_array().unwrap().len(), 3);
    let beta = v["beta"].as_f64().unwrap();
    assert!([0.6, 0.7, 0.8].contains(&beta));
}

#[test]
fn malformed_config_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"objectives": 2}"#);
    assert_eq!(bonesoup(&["sweep", &config]).status.code(), Some(2));
}

#[test]
fn missing_config_is_io_error() {
    assert_eq!(
        bonesoup(&["sweep", "/definitely/not/here.json"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUADRATIC);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    assert_eq!(
        bonesoup(&["sweep", &config, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn non_finite_training_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = QUADRATIC
        .replace(
            r#""trainer": {"eta": 0.0}"#,
            r#""trainer": {"eta": 0.0, "learning_rate": 1e6}"#,
        )
        .replace(r#""bone_soup(auto)", "#, "");
    let config = write_config(dir.path(), &text);
    let o = bonesoup(&["select-beta", &config]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
