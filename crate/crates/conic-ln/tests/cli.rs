use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_conic-ln");

fn hemisphere() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/configs/hemisphere_n3.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn profile_reports_unit_boundary_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["profile", "--config", hemisphere(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&read(&out, "profile.json")).unwrap();
    let slope = v["summary"]["boundary_slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 1e-6, "{slope}");
    let csv = read(&out, "profile.csv");
    let hash = v["config_hash"].as_str().unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash={hash}"));
    assert_eq!(csv.lines().nth(1).unwrap(), "phi,rho,xi");
}

#[test]
fn solve_on_fresh_directory_then_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, cache) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("cache"));
    let args = |out: &Path| {
        vec![
            "solve".to_string(),
            "--config".into(),
            hemisphere().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--cache".into(),
            cache.to_str().unwrap().into(),
        ]
    };
    let first = Command::new(BIN).args(args(&a)).output().unwrap();
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    for name in [
        "profile.csv",
        "profile.json",
        "spectrum.json",
        "modes.csv",
        "chain.json",
        "expansion.json",
        "expansion_coefficients.csv",
        "manifest.json",
        "contraction.json",
        "solution.csv",
        "cone_samples.csv",
        "status.json",
    ] {
        assert!(a.join(name).exists(), "{name} missing");
    }
    let second = Command::new(BIN).args(args(&b)).output().unwrap();
    assert_eq!(second.status.code(), Some(0));
    let summary = String::from_utf8_lossy(&second.stdout);
    assert!(summary.contains("solve: cached"), "{summary}");
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }

    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["c"], serde_json::json!([0.1, 0.0]));
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["lambda"].as_f64().unwrap() <= 0.9);

    // A truncated entry is recomputed with a warning and gives the same bytes.
    let entry = fs::read_dir(&cache)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("solve-"))
        .unwrap();
    let text = fs::read(&entry).unwrap();
    fs::write(&entry, &text[..text.len() / 3]).unwrap();
    let c = dir.path().join("c");
    let third = Command::new(BIN).args(args(&c)).output().unwrap();
    assert_eq!(third.status.code(), Some(0));
    assert!(stderr(&third).contains("corrupt cache entry"), "{}", stderr(&third));
    assert_eq!(fs::read(a.join("solution.csv")).unwrap(), fs::read(c.join("solution.csv")).unwrap());
}

#[test]
fn changed_node_count_misses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = write_config(dir.path(), "a.json", r#"{"n": 3, "phi_max": 1.2, "mu": 6.5, "node_count": 120}"#);
    let other = write_config(dir.path(), "b.json", r#"{"n": 3, "phi_max": 1.2, "mu": 6.5, "node_count": 121}"#);
    let out = dir.path().join("out");
    for (c, cached) in [(&cfg, false), (&cfg, true), (&other, false)] {
        let o = run(&["spectrum", "--config", c, "--out", out.to_str().unwrap(), "--cache", cache.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let hit = String::from_utf8_lossy(&o.stdout).contains("spectrum: cached");
        assert_eq!(hit, cached, "{c}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let bad_n = write_config(dir.path(), "n.json", r#"{"n": 2, "phi_max": 1.5, "mu": 6.0}"#);
    let o = run(&["profile", "--config", &bad_n, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`n`"), "{}", stderr(&o));

    let unknown = write_config(dir.path(), "u.json", r#"{"n": 3, "phi_max": 1.5, "mu": 6.0, "colour": 2}"#);
    assert_eq!(run(&["profile", "--config", &unknown, "--out", out]).status.code(), Some(2));
    assert_eq!(run(&["profile", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(run(&["nonsense", "--config", hemisphere()]).status.code(), Some(2));

    let in_set = write_config(
        dir.path(),
        "m.json",
        r#"{"n": 3, "phi_max": 1.5707963267948966, "mu": 6.0, "c": [0.1], "epsilon_res": 1e-3}"#,
    );
    let o = run(&["solve", "--config", &in_set, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("index set"), "{}", stderr(&o));
    let status: serde_json::Value = serde_json::from_str(&read(Path::new(out), "status.json")).unwrap();
    assert_eq!(status["complete"], false);
    assert_eq!(status["failed_stage"], "expand");
    assert!(Path::new(out).join("chain.json").exists());

    let strict = write_config(
        dir.path(),
        "s.json",
        r#"{"n": 3, "phi_max": 1.5707963267948966, "mu": 6.5, "c": [0.1], "node_count": 150,
            "tolerances": {"oracle": 1e-14}}"#,
    );
    let o = run(&["verify", "--config", &strict, "--out", out]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&read(Path::new(out), "verify.json")).unwrap();
    assert_eq!(v["passed"], false);
}

#[test]
fn indexset_with_gamma_override_flags_resonance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.json",
        r#"{"n": 3, "phi_max": 1.5707963267948966, "mu": 3.5, "cutoff": 4.0, "gammas": [1.0, 2.0],
            "node_count": 100}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["indexset", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&read(&out, "chain.json")).unwrap();
    assert_eq!(v["resonant"], true);
    let entries = v["chain"]["entries"].as_array().unwrap();
    let values: Vec<f64> = entries.iter().map(|e| e["value"].as_f64().unwrap()).collect();
    assert_eq!(values, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(entries[1]["resonant"], true);
    assert_eq!(v["chain"]["k1"], 1);

    // The override cannot be combined with the expansion.
    let o = run(&["expand", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "q.json",
        r#"{"n": 3, "phi_max": 1.5707963267948966, "mu": 6.5, "c": [0.05], "node_count": 120}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["seed"], 42);
}
