use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metabandit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        r#"name = "tiny"

[run]
mode = "mab_implicit"
d = 4
m = 60
tasks = 8
seed = 3
replicas = 2
baselines = ["independent_exp3"]

[meta]
recipe = "half"

[environment]
kind = "sparse_mab"
s = 2
delta = 0.3
noise = 0.2
"#,
    )
    .unwrap();
    path
}

#[test]
fn run_writes_all_outputs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = bin(&["run", cfg.to_str().unwrap(), "--out-dir", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("meta"));
    let o = bin(&["run", cfg.to_str().unwrap(), "--out-dir", b.to_str().unwrap(), "--serial"]);
    assert!(o.status.success());
    for f in ["records.csv", "summary.json", "bounds.csv", "config.toml", "baseline_independent_exp3.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["name"], "tiny");
    assert_eq!(summary["meta"]["replicas"].as_array().unwrap().len(), 2);
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let o = bin(&["run", cfg.to_str().unwrap(), "--seed", "9", "--replicas", "1", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["meta"]["replicas"].as_array().unwrap().len(), 1);
}

#[test]
fn baseline_runs_without_the_meta_learner() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bl");
    let o = bin(&["baseline", "--preset", "smoke", "--replicas", "1", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("records.csv").exists());
    assert!(out.join("baseline_independent_tsallis_half.csv").exists());
}

#[test]
fn entropy_reads_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("e");
    assert!(bin(&["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).status.success());
    let o = bin(&["entropy", out.join("records.csv").to_str().unwrap(), "--betas", "0.5,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "replica,beta,estimated,truth,v_hat");
    assert_eq!(lines.len(), 1 + 2 * 2);
    for l in &lines[1..] {
        let cols: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        // Shannon entropy of a 4-arm histogram is at most log 4
        if cols[1] == 1.0 {
            assert!(cols[2] <= 4f64.ln() + 1e-9 && cols[3] <= 2f64.ln() + 1e-9);
        }
    }
}

#[test]
fn bounds_evaluates_toml_json_and_arrays() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("b.toml");
    fs::write(&t, "which = \"misidentification\"\nd = 4\nm = 12000\neps = 0.1\ngap = 0.5\n").unwrap();
    let o = bin(&["bounds", t.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let total: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    // 4 exp(-3 * 0.1 * 0.25 * 12000 / 112)
    assert!((total - 4.0 * (-900.0f64 / 112.0).exp()).abs() < 1e-12);
    assert!(tmp.path().join("bounds.csv").exists());

    let j = tmp.path().join("b.json");
    fs::write(
        &j,
        r#"[{"which":"robust","d":8,"s":2,"tasks":256,"p":0.5,"beta":0.5},
            {"which":"main_term","d":4,"m":100,"optima":[1,1,0,0]}]"#,
    )
    .unwrap();
    let o = bin(&["bounds", j.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    let robust: f64 = text.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((robust - (2.0 + 8f64.sqrt() / 256f64.powf(0.25))).abs() < 1e-12);
}

#[test]
fn verify_passes() {
    let o = bin(&["verify", "--json"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let checks: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn bad_input_fails_cleanly() {
    let o = bin(&["run", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
    let o = bin(&["run"]);
    assert!(!o.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "which = \"main_term\"\nd = 4\n").unwrap();
    assert_eq!(bin(&["bounds", bad.to_str().unwrap()]).status.code(), Some(2));
}
