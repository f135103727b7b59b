use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use urnmarket::harness::{read_manifest, sha256_hex, TRACE_HEADER, TRAJECTORY_HEADER};

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .output()
        .expect("spawn simulate")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_ok(config: &str, out: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec![config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = simulate(&args);
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).expect("summary is JSON")
}

#[test]
fn urn_trajectory_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "urn.json",
        r#"{"mode":"urn","master_seed":7,"n_runs":1,"urn":{"steps":1000}}"#,
    );
    let out = dir.path().join("out");
    let summary = run_ok(&cfg, &out, &[]);
    assert_eq!(summary["mode"], "urn");
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1000);
    assert!(rows[0].starts_with("0,1,"));
    assert!(rows[999].starts_with("0,1000,"));
}

#[test]
fn decimated_trajectory_row_count() {
    let dir = tempfile::tempdir().unwrap();
    for k in [3u64, 10, 64, 1000, 5000] {
        let cfg = write_config(
            dir.path(),
            "urn.json",
            &format!(
                r#"{{"mode":"urn","master_seed":7,"n_runs":2,"decimation":{k},"urn":{{"steps":1000}}}}"#
            ),
        );
        let out = dir.path().join(format!("out{k}"));
        run_ok(&cfg, &out, &[]);
        let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
        assert_eq!(
            csv.lines().count() as u64,
            1 + 2 * 1000u64.div_ceil(k),
            "k={k}"
        );
    }
}

#[test]
fn market_mode_writes_one_trace_per_world() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "market.json",
        r#"{"mode":"market","master_seed":3,"market":{"worlds":8}}"#,
    );
    let out = dir.path().join("out");
    let summary = run_ok(&cfg, &out, &[]);
    let mut traces: Vec<_> = fs::read_dir(out.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    traces.sort();
    assert_eq!(traces.len(), 24);
    assert_eq!(traces[0], "independent_world0000.csv");
    let first = fs::read_to_string(out.join("traces").join(&traces[0])).unwrap();
    assert_eq!(first.lines().next(), Some(TRACE_HEADER));
    assert_eq!(first.lines().count(), 1 + 1200);

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics, summary["metrics"]);
    let conditions = metrics["conditions"].as_array().unwrap();
    assert_eq!(conditions.len(), 3);
    for c in conditions {
        for key in [
            "gini_mean",
            "unpredictability_U",
            "ex_ante_spearman",
            "rigidity",
            "prediction_curve",
        ] {
            assert!(c.get(key).is_some(), "missing {key} in {c}");
        }
        let point = &c["prediction_curve"][0];
        assert!(point["f"].is_number() && point["accuracy"].is_number() && point["n"].is_number());
    }
}

#[test]
fn manifest_covers_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "market.json",
        r#"{"mode":"market","master_seed":3,"market":{"n_items":10,"n_agents":200,"worlds":3}}"#,
    );
    let out = dir.path().join("out");
    run_ok(&cfg, &out, &[]);
    let manifest = read_manifest(&out).unwrap();
    let mut on_disk = Vec::new();
    for entry in fs::read_dir(&out).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_dir() {
            for sub in fs::read_dir(entry.path()).unwrap() {
                on_disk.push(format!(
                    "{}/{}",
                    entry.file_name().to_str().unwrap(),
                    sub.unwrap().file_name().to_str().unwrap()
                ));
            }
        } else if entry.file_name() != "manifest.json" {
            on_disk.push(entry.file_name().into_string().unwrap());
        }
    }
    on_disk.sort();
    let listed: Vec<String> = manifest.iter().map(|e| e.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for e in &manifest {
        let bytes = fs::read(out.join(&e.path)).unwrap();
        assert_eq!(e.sha256, sha256_hex(&bytes), "{}", e.path);
        assert_eq!(e.bytes, bytes.len() as u64);
    }
}

#[test]
fn effective_config_reparses_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "inject.json",
        r#"{"mode":"inject","master_seed":11,"n_runs":4,
            "market":{"n_items":8,"n_agents":150,"conditions":["strong"]},
            "puppets":{"k":5}}"#,
    );
    let out = dir.path().join("out");
    run_ok(&cfg, &out, &["--seed", "99"]);
    let echoed = fs::read_to_string(out.join("config.json")).unwrap();
    let parsed = urnmarket::config::parse_config(&echoed).unwrap();
    assert_eq!(parsed.master_seed, 99);
    assert_eq!(parsed.to_json().trim_end(), echoed.trim_end());
    assert!(out.join("detections.json").exists());
    assert!(out
        .join("traces/inject_strong_treated_run0000.csv")
        .exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"mode":"urn","master_seed":1,"urn":{"gamma":-0.5}}"#,
        r#"{"mode":"urn","master_seed":1,"colour":3}"#,
        r#"{"mode":"urn""#,
        r#"{"mode":"market","master_seed":1,"market":{"worlds":1}}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), body);
        let out = dir.path().join(format!("out{i}"));
        let o = simulate(&[&cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists(), "case {i} wrote output");
    }
    let o = simulate(&[dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        "gamma.json",
        r#"{"mode":"urn","master_seed":1,"urn":{"gamma":-0.5}}"#,
    );
    let o = simulate(&[&cfg]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("urn.gamma"));
}

#[test]
fn runtime_errors_exit_with_code_3_and_clean_up() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "market.json",
        r#"{"mode":"market","master_seed":3,"market":{"n_items":5,"n_agents":50,"worlds":2}}"#,
    );
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("traces"), b"blocker").unwrap();
    let o = simulate(&[&cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("traces"));
    assert!(!out.join("config.json").exists());
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn thread_count_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "urn.json", r#"{"mode":"urn","master_seed":1}"#);
    let o = simulate(&[&cfg, "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
