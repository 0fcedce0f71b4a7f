use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn nmdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmdc")).args(args).output().expect("run nmdc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel).display().to_string()
}

fn scalar_model(a: f64, b: Option<f64>, h: f64) -> String {
    let b = b.map_or("[]".to_owned(), |b| format!("[[{b}]]"));
    let g = if b == "[]" { "[]" } else { "[[1.0]]" };
    format!(
        r#"{{
  "subsystem_mode_counts": [1],
  "mode_vectors": [[1]],
  "generator": [[0.0]],
  "subsystems": [[{{"A": [[{a}]], "B": {b}, "E": [[0.1]], "L": [[0.1]], "H": [[{h}]]}}]],
  "S_bar": [[[0.1]]],
  "S_tilde": [[[0.1]]],
  "weights": [{{"R": [[[1.0]]], "G": [{g}]}}],
  "x0": [1.0],
  "initial_distribution": "stationary"
}}"#
    )
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).unwrap();
        }
        std::fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Stable scalar plant, its global pattern and a certified result.
    fn scalar_result(&self) -> (String, String, String) {
        let model = self.write("model.json", &scalar_model(-1.0, Some(1.0), 0.1));
        let pattern = self.s("pattern.json");
        let out = nmdc(&["pattern", &model, "1", "--out", &pattern]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let result = self.s("result.json");
        let out = nmdc(&["synthesize", &model, &pattern, "--out", &result]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (model, pattern, result)
    }
}

#[test]
fn malformed_generator_row_is_input_error() {
    let ws = Workspace::new();
    let text = std::fs::read_to_string(data("desk_model.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["generator"][2][0] = Value::from(5.0);
    let model = ws.write("bad.json", &serde_json::to_string_pretty(&v).unwrap());
    let out = nmdc(&["synthesize", &model, &data("patterns/c1.json")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("generator row 3"), "{}", stderr(&out));
}

#[test]
fn syntax_error_reports_line() {
    let ws = Workspace::new();
    let model = ws.write("bad.json", "{\n  \"x0\": [1.0,\n}\n");
    let out = nmdc(&["synthesize", &model, &data("patterns/c1.json")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn unstabilizable_scalar_is_infeasible() {
    // ẋ = x with no input: no positive X satisfies 2X + … < 0.
    let ws = Workspace::new();
    let model = ws.write("model.json", &scalar_model(1.0, None, 0.5));
    let pattern = ws.s("pattern.json");
    assert_eq!(code(&nmdc(&["pattern", &model, "1", "--out", &pattern])), 0);
    let result = ws.s("result.json");
    let out = nmdc(&["synthesize", &model, &pattern, "--max-iter", "2000", "--restarts", "1", "--out", &result]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(v["refused"], true);
    assert!(v.get("solution").is_none());
    assert_eq!(code(&nmdc(&["verify", &model, &result])), 1);
}

#[test]
fn fresh_result_verifies_and_perturbed_gain_fails() {
    let ws = Workspace::new();
    let (model, _, result) = ws.scalar_result();
    let out = nmdc(&["verify", &model, &result]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let report = stdout(&out);
    for line in ["schur: pass", "gain-distance: pass", "constraints: pass"] {
        assert!(report.contains(line), "{report}");
    }

    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    let k = v["solution"]["gains"][0][0][0][0].as_f64().unwrap();
    v["solution"]["gains"][0][0][0][0] = Value::from(k + 10.0);
    let bad = ws.write("perturbed.json", &serde_json::to_string(&v).unwrap());
    let out = nmdc(&["verify", &model, &bad]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("gain-distance: FAIL"), "{}", stdout(&out));
}

#[test]
fn result_against_other_model_is_rejected() {
    let ws = Workspace::new();
    let (_, _, result) = ws.scalar_result();
    let out = nmdc(&["verify", &data("desk_model.json"), &result]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn simulate_rejects_zero_paths() {
    let ws = Workspace::new();
    let (model, _, result) = ws.scalar_result();
    let out = nmdc(&["simulate", &model, &result, "--paths", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_is_deterministic() {
    let ws = Workspace::new();
    let (model, _, result) = ws.scalar_result();
    let run = |csv: &str| {
        let out = nmdc(&[
            "simulate", &model, &result, "--paths", "8", "--horizon", "5", "--dt", "0.01", "--seed", "7", "--csv", csv,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (stdout(&out), std::fs::read(csv).unwrap())
    };
    let a = run(&ws.s("a.csv"));
    let b = run(&ws.s("b.csv"));
    assert_eq!(a, b);
    assert!(String::from_utf8(a.1).unwrap().lines().count() == 9);
}

#[test]
fn simulate_attaches_report() {
    let ws = Workspace::new();
    let (model, _, result) = ws.scalar_result();
    let out_path = ws.s("with_mc.json");
    let out = nmdc(&["simulate", &model, &result, "--paths", "4", "--horizon", "5", "--dt", "0.01", "--out", &out_path]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["monte_carlo"]["paths"], 4);
    assert_eq!(v["monte_carlo"]["bound_respected"], true);
    assert_eq!(code(&nmdc(&["verify", &model, &out_path])), 0);
}

#[test]
fn sweep_of_empty_directory_is_input_error() {
    let ws = Workspace::new();
    let (model, _, _) = ws.scalar_result();
    std::fs::create_dir(ws.path("empty")).unwrap();
    let out = nmdc(&["sweep", &model, &ws.s("empty")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sweep_csv_format() {
    let ws = Workspace::new();
    let (model, pattern, _) = ws.scalar_result();
    let text = std::fs::read_to_string(&pattern).unwrap();
    ws.write("patterns/b.json", &text);
    ws.write("patterns/a.json", &text);
    ws.write("patterns/notes.txt", "ignored");
    let csv = ws.s("sweep.csv");
    let out = nmdc(&["sweep", &model, &ws.s("patterns"), "--out", &csv]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.split('\n').collect();
    assert_eq!(lines[0], "pattern,feasible,gamma_bound,iterations,globally_equivalent_all");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3], "");
    let a: Vec<&str> = lines[1].split(',').collect();
    let b: Vec<&str> = lines[2].split(',').collect();
    assert_eq!((a[0], a[1], a[4]), ("a", "true", "true"));
    assert_eq!(a[2], b[2]);
    assert!(!body.contains('\r'));
}

#[test]
fn bad_flags_are_input_errors() {
    let ws = Workspace::new();
    let (model, pattern, _) = ws.scalar_result();
    assert_eq!(code(&nmdc(&["synthesize", &model, &pattern, "--gamma-bracket", "5:1"])), 1);
    assert_eq!(code(&nmdc(&["synthesize", &model, &pattern, "--unknown"])), 1);
    assert_eq!(code(&nmdc(&["simulate", &model, &pattern, "--uncertainty", "wild"])), 1);
    assert_eq!(code(&nmdc(&["synthesize", &model, &ws.s("missing.json")])), 1);
}

#[test]
fn pattern_for_other_atlas_is_rejected() {
    let ws = Workspace::new();
    let (model, _, _) = ws.scalar_result();
    let out = nmdc(&["synthesize", &model, &data("patterns/c1.json")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("different mode atlases"), "{}", stderr(&out));
}

#[test]
fn desk_model_local_pattern_round_trip() {
    let ws = Workspace::new();
    let result = ws.s("c1.json");
    let out = nmdc(&["synthesize", &data("desk_model.json"), &data("patterns/c1.json"), "--out", &result]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    let gains = v["solution"]["gains"].as_array().unwrap();
    assert_eq!(gains.iter().map(|g| g.as_array().unwrap().len()).collect::<Vec<_>>(), vec![2, 2, 2]);
    let out = nmdc(&["verify", &data("desk_model.json"), &result]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}
