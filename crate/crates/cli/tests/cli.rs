//! Drives the `flowprofiler` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flowprofiler"));
    c.arg("-q").env_remove("FLOWPROFILER_CACHE");
    c
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The run directory is the last line printed on stdout.
fn run_dir(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().expect("run dir printed").trim())
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn metric(r: &serde_json::Value, key: &str) -> f64 {
    r[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {r}"))
}

#[test]
fn bad_usage_exits_with_code_two() {
    let out = bin().args(["rq1", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.toml");
    let out = bin().args(["rq1", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["rq2", "--config"])
        .arg(fixtures().join("synth5-stream.toml"))
        .args(["--set", "birch.threshold=0", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("birch.threshold"));
}

#[test]
fn rq1_with_fixed_parameters_separates_devices() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["rq1", "--config"])
        .arg(fixtures().join("synth5.toml"))
        .args(["--set", "dbscan.tune=false", "--set", "dbscan.eps=1.92", "--set", "dbscan.min_pts=10", "--out"])
        .arg(tmp.path()));
    let dir = run_dir(&out);
    assert!(dir.file_name().unwrap().to_string_lossy().starts_with("rq1-"));
    let r = report(&dir);
    assert!(metric(&r, "nmi") >= 0.9, "{r}");
    for f in ["membership.csv", "projection.csv", "run.log"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert!(!dir.join("scores.csv").exists());
}

#[test]
fn birch_keeps_the_novel_device_apart_and_minibatch_does_not() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixtures().join("synth5-stream.toml");
    let birch = report(&run_dir(&run(bin().args(["rq2", "--config"]).arg(&config).arg("--out").arg(tmp.path()))));
    let mb = report(&run_dir(&run(bin()
        .args(["rq2", "--config"])
        .arg(&config)
        .args(["--clusterer", "minibatch", "--out"])
        .arg(tmp.path()))));
    assert_eq!(birch["provenance"]["clusterer"], "birch");
    assert_eq!(mb["provenance"]["clusterer"], "minibatch");
    assert!(metric(&birch, "novel_purity") >= 0.8);
    assert!(metric(&birch, "novel_share") >= 0.6);
    assert!(metric(&birch, "novel_purity") > metric(&mb, "novel_purity"));
    assert!(metric(&birch, "known_acc_post") > 0.6);
}

#[test]
fn synthetic_captures_feed_the_capture_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_dir = run_dir(&run(bin()
        .args(["synth", "--config"])
        .arg(fixtures().join("synth5-stream.toml"))
        .arg("--out")
        .arg(tmp.path())));
    for f in ["baseline.pcap", "stream.pcap", "labels.csv", "captures.toml", "membership.csv"] {
        assert!(synth_dir.join(f).is_file(), "{f} missing");
    }
    let cache = tmp.path().join("cache");
    let go = || {
        let out = run(bin()
            .args(["rq2", "--config"])
            .arg(synth_dir.join("captures.toml"))
            .args(["--clusterer", "birch", "--out"])
            .arg(tmp.path())
            .env("FLOWPROFILER_CACHE", &cache));
        report(&run_dir(&out))
    };
    let first = go();
    assert!(cache.join("baseline.pcap.features.csv").is_file());
    let second = go();
    assert!(metric(&first, "novel_purity") >= 0.8, "{first}");
    for key in ["nmi", "novel_purity", "novel_share", "known_acc_post"] {
        assert_eq!(first[key], second[key], "{key}");
    }
}

#[test]
fn extract_caches_and_handles_captures_without_devices() {
    let tmp = tempfile::tempdir().unwrap();
    let golden = fixtures().join("golden");
    let cache = tmp.path().join("features");
    let extract = |labels: &Path| {
        let out = run(bin()
            .arg("extract")
            .arg("--labels")
            .arg(labels)
            .arg("--out")
            .arg(&cache)
            .arg(golden.join("golden.pcap")));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    let first = extract(&golden.join("labels.csv"));
    assert!(first.starts_with("extracted\t8\t"), "{first}");
    assert!(extract(&golden.join("labels.csv")).starts_with("cache hit\t8\t"));
    let csv = fs::read_to_string(cache.join("golden.pcap.features.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(golden.join("expected_features.csv")).unwrap());

    // a device absent from the capture yields a header-only table
    let labels = tmp.path().join("other.csv");
    fs::write(&labels, "mac,device_name\n02:aa:bb:cc:dd:ee,absent\n").unwrap();
    assert!(extract(&labels).starts_with("extracted\t0\t"));
    let csv = fs::read_to_string(cache.join("golden.pcap.features.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("initial_ttl_mode,"));

    // a truncated capture is an input error
    let bad = tmp.path().join("bad.pcap");
    fs::write(&bad, &fs::read(golden.join("golden.pcap")).unwrap()[..30]).unwrap();
    let out = bin().arg("extract").arg("--labels").arg(golden.join("labels.csv")).arg("--out").arg(&cache).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn report_collects_runs_into_one_table() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixtures().join("synth5-stream.toml");
    let a = run_dir(&run(bin().args(["rq2", "--config"]).arg(&config).arg("--out").arg(tmp.path())));
    let b = run_dir(&run(bin()
        .args(["rq2", "--config"])
        .arg(&config)
        .args(["--set", "birch.threshold=1.0", "--out"])
        .arg(tmp.path())));
    let table = tmp.path().join("table.csv");
    run(bin().arg("report").arg(&a).arg(b.join("report.json")).arg("--out").arg(&table));
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("setting_model,clusters,noise_pct,nmi,silhouette,known_acc_post"));
    assert!(lines[1].contains("synth5-stream"));
    assert_ne!(a, b);
}
