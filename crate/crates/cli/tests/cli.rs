use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_vccm");

fn vccm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Failures must be exactly one `error: CODE: ...` line.
fn assert_error(o: &Output, exit: i32, code_name: &str) {
    let err = stderr(o);
    assert_eq!(code(o), exit, "stderr: {err}");
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("error: {code_name}: ")), "stderr: {err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const PARAMS: &str = r#"
f_v = [1.1050e-5, 1.2420e-5, 0.0141, 0.0327]
k_m = [0.0680, 0.1006, 0.1053, 0.0606]
[a]
i = 0.0902
j = 0.0534
k = 0.0374
[b]
i = 0.0039
j = 0.0186
k = 0.0200
[c]
i = 9.2087e-4
j = 0.0016
k = 0.0026
[d]
i = DI
j = 0.0055
k = 0.0374
"#;

const OM2: &str = r#"
mode = "om2"
seed = 7

[synthesis]
points_per_axis = 2

[synthesis.options]
lambda = 0.5

[[scenario]]
name = "plus"
horizon = 2.0
initial_state = [0.0, 45.0, 0.0, 0.0]
BLOWUP
[scenario.reference]
kind = "set_point"
x = [1.0, 45.0, 0.0, 0.0]
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn om2_config(dir: &Path, blowup: Option<f64>) -> std::path::PathBuf {
    let line = blowup.map_or(String::new(), |b| format!("blowup = {b}"));
    write(dir, "om2.toml", &OM2.replace("BLOWUP", &line))
}

#[test]
fn model_check_passes_on_the_identified_parameters() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "mode = \"om1\"\n[checks]\nsamples = 200\n");
    let o = vccm(&["model-check", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().count() >= 6);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
    assert!(dir.path().join("model_check.json").exists());
}

#[test]
fn negated_disk_moment_fails_the_definiteness_check() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "bad.toml", &PARAMS.replace("DI", "-0.0030"));
    let cfg = write(dir.path(), "c.toml", "mode = \"om1\"\nparams_file = \"bad.toml\"\n[checks]\nsamples = 100\n");
    let o = vccm(&["model-check", "--config", p(&cfg)]);
    assert_error(&o, 5, "CHECK_FAILED");
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL inertia_positive_definite")), "{}", stdout(&o));
}

#[test]
fn params_file_with_the_table_values_is_accepted() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "ok.toml", &PARAMS.replace("DI", "0.0030"));
    let cfg = write(dir.path(), "c.toml", "mode = \"om1\"\nparams_file = \"ok.toml\"\n[checks]\nsamples = 50\n");
    assert_eq!(code(&vccm(&["model-check", "--config", p(&cfg)])), 0);
}

#[test]
fn missing_files_are_config_level_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = vccm(&["model-check", "--config", p(&missing)]);
    assert_error(&o, 2, "IO_ERROR");
    assert!(stderr(&o).contains("nope.toml"));

    let cfg = write(dir.path(), "c.toml", "mode = \"om1\"\nparams_file = \"absent.toml\"\n");
    let o = vccm(&["model-check", "--config", p(&cfg)]);
    assert_error(&o, 2, "IO_ERROR");
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn malformed_config_and_usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "mode = \"om3\"\n");
    assert_error(&vccm(&["synthesize", "--config", p(&cfg)]), 2, "CONFIG_ERROR");
    let cfg = write(dir.path(), "d.toml", "mode = \"om1\"\nunknown_key = 1\n");
    assert_error(&vccm(&["synthesize", "--config", p(&cfg)]), 2, "CONFIG_ERROR");
    assert_error(&vccm(&["frobnicate"]), 2, "USAGE");
    assert_error(&vccm(&["synthesize"]), 2, "USAGE");
    assert_eq!(code(&vccm(&["--help"])), 0);
}

#[test]
fn excessive_contraction_rate_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "mode = \"om2\"\n[synthesis]\nembeddings = [\"lpv\"]\n[synthesis.options]\nlambda = 50.0\n",
    );
    let o = vccm(&["synthesize", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_error(&o, 3, "INFEASIBLE");
    assert!(!dir.path().join("result_lpv.json").exists());
}

#[test]
fn design_simulate_compare_verify_round_trip() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = om2_config(dir.path(), None);

    let o = vccm(&["synthesize", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["result_lpv.json", "result_npv.json"] {
        assert!(out.join(f).exists());
    }

    let o = vccm(&["simulate", "--config", p(&cfg), "--out", p(&out), "--strict"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    for label in ["standard LPV", "LPV-VCCM", "NPV-VCCM"] {
        assert!(table.contains(label), "{table}");
    }
    for c in ["standard_lpv", "lpv_vccm", "npv_vccm"] {
        assert!(out.join("traces").join(format!("plus_{c}.csv")).exists());
    }

    let summary = out.join("summary.json");
    let o = vccm(&["compare", p(&summary), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("J_T"));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");

    let o = vccm(&["verify", "--result", p(&out.join("result_npv.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("CERTIFIED"));

    // Rerunning reproduces every output byte for byte.
    let again = dir.path().join("again");
    assert_eq!(code(&vccm(&["synthesize", "--config", p(&cfg), "--out", p(&again)])), 0);
    assert_eq!(code(&vccm(&["simulate", "--config", p(&cfg), "--out", p(&again)])), 0);
    for f in ["result_lpv.json", "result_npv.json", "summary.json", "traces/plus_npv_vccm.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    // Gains designed for OM-2 cannot drive an OM-1 run.
    let om1 = write(
        dir.path(),
        "om1.toml",
        "mode = \"om1\"\n[[scenario]]\nname = \"s\"\nhorizon = 1.0\n[scenario.reference]\nkind = \"set_point\"\nx = [0.0, 0.0, 45.0, 0.0, 0.0]\n",
    );
    let o = vccm(&["simulate", "--config", p(&om1), "--out", p(&out)]);
    assert_error(&o, 2, "RESULT_MISMATCH");
}

#[test]
fn tampered_result_is_not_certified() {
    let dir = TempDir::new().unwrap();
    let cfg = om2_config(dir.path(), None);
    assert_eq!(code(&vccm(&["synthesize", "--config", p(&cfg), "--out", p(dir.path())])), 0);
    let path = dir.path().join("result_lpv.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    // Flipping every gain factor turns the feedback positive.
    for m in json["y"].as_array_mut().unwrap() {
        for row in m.as_array_mut().unwrap() {
            for v in row.as_array_mut().unwrap() {
                *v = serde_json::json!(-v.as_f64().unwrap());
            }
        }
    }
    fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
    let o = vccm(&["verify", "--result", p(&path)]);
    assert_error(&o, 5, "NOT_CERTIFIED");
}

#[test]
fn strict_simulation_flags_divergence() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = om2_config(dir.path(), Some(10.0));
    assert_eq!(code(&vccm(&["synthesize", "--config", p(&cfg), "--out", p(&out)])), 0);

    let o = vccm(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("unstable"), "{}", stdout(&o));

    let o = vccm(&["simulate", "--config", p(&cfg), "--out", p(&out), "--strict"]);
    assert_error(&o, 4, "UNSTABLE_RUN");
    assert!(out.join("summary.json").exists());

    let o = vccm(&["compare", p(&out.join("summary.json"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("unstable"));
}

#[test]
fn compare_needs_two_summaries() {
    let dir = TempDir::new().unwrap();
    let o = vccm(&["compare"]);
    assert_error(&o, 2, "USAGE");
    let one = write(
        dir.path(),
        "one.json",
        r#"{"scenario":"s","mode":"om1","controller":"npv_vccm","embedding":"npv","alpha":null,"horizon":1.0,"dt":0.001,
            "cost":1.0,"unstable":false,"failure":null,"clamp_events":0,"saturation_events":0,"final_error":0.0,
            "max_abs_q2":0.0,"settling_time":null,"bound":null}"#,
    );
    let o = vccm(&["compare", p(&one)]);
    assert_error(&o, 2, "USAGE");
    let o = vccm(&["compare", p(&one), p(&one)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
