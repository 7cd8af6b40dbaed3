use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coalflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coalflow"))
        .args(args)
        .env("COALFLOW_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "skeleton": { "spacing": 0.125, "horizon": [0.0, 0.2], "dt": 0.01 },
  "counterexample_replicas": 20000,
  "motion": { "two_point": [], "meeting": [], "cluster_count": [], "marginal": [], "small_time": [], "stopped": [] }
}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn listed(out: &Path) -> Vec<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_string())
        .collect()
}

fn all_files(dir: &Path, root: &Path, out: &mut Vec<String>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            all_files(&p, root, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = coalflow(&["simulate", "--config", &cfg, "--seed", "42", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["skeleton.bin", "trajectories.csv", "plotdata.csv", "summary.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("c");
    coalflow(&["simulate", "--config", &cfg, "--seed", "43", "--out", other.to_str().unwrap()]);
    assert_ne!(
        fs::read(dir.path().join("a/trajectories.csv")).unwrap(),
        fs::read(other.join("trajectories.csv")).unwrap()
    );
}

#[test]
fn verify_counterexample_and_manifest_completeness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(coalflow(&["simulate", "--config", &cfg, "--out", out_s]).status.success());
    let o = coalflow(&["verify", "--config", &cfg, "--out", out_s, "--bundle", "counterexample", "--bundle", "axioms"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.contains("checks pass: true; controls fail as designed: true"), "{stdout}");
    let verdict = fs::read_to_string(out.join("reports/counterexample_verdict.txt")).unwrap();
    assert!(verdict.contains("verdict: same marginals, different joints"));

    let mut present = Vec::new();
    all_files(&out, &out, &mut present);
    present.retain(|p| p != "manifest.json");
    present.sort();
    let mut names = listed(&out);
    names.sort();
    assert_eq!(present, names);
    assert!(names.contains(&"skeleton.bin".to_string()));
    assert!(names.contains(&"reports/axioms.json".to_string()));
}

#[test]
fn failing_check_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.json");
    // A zero tolerance on a Monte Carlo estimate cannot be met.
    fs::write(
        &cfg,
        r#"{ "bundles": ["motion"], "motion": { "two_point": [{ "model": { "kind": "arratia" }, "replicas": 200, "dt": 0.01, "tol": 0.0 }],
            "meeting": [], "cluster_count": [], "marginal": [], "small_time": [], "stopped": [] } }"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = coalflow(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] two-point law"));
}

#[test]
fn bad_config_and_bundle_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "seeed": 3 }"#).unwrap();
    let o = coalflow(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = coalflow(&["verify", "--bundle", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown bundle"));
}

#[test]
fn export_statuses_and_empty_queries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(coalflow(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let snapshot = out.join("skeleton.bin");
    let queries = dir.path().join("q.csv");
    let eval = dir.path().join("eval.csv");
    let export = || {
        coalflow(&[
            "export",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--queries",
            queries.to_str().unwrap(),
            "--out",
            eval.to_str().unwrap(),
        ])
    };

    fs::write(&queries, "s,x,t\n").unwrap();
    assert!(export().status.success());
    assert_eq!(fs::read_to_string(&eval).unwrap(), "s,x,t,value,trajectory_id,status\n");

    fs::write(&queries, "s,x,t\n0.1,0.37,0.1\n0.0,3.0,0.1\n0.0,0.5,0.9\n").unwrap();
    assert!(export().status.success());
    let text = fs::read_to_string(&eval).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows[0].starts_with("0.1,0.37,0.1,0.37,"), "{text}");
    assert!(rows[1].ends_with(",,above_range"), "{text}");
    assert!(rows[2].ends_with(",,out_of_horizon"), "{text}");
}
