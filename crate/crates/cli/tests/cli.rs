use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wva(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wva"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("WVA_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Data rows of a dataset (manifest line and header dropped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest "));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn fisher_scan_writes_fifty_ratio_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wva(dir.path(), &["fisher-scan", "--kind", "rwva", "--g", "0.01", "--pf", "0.01:1:50"]));
    let r = rows(&dir.path().join("fisher_scan.csv"));
    assert_eq!(r.len(), 50);
    assert!(r.iter().all(|row| row[3].parse::<f64>().unwrap() > 0.99));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fisher-scan.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "fisher-scan");
}

#[test]
fn missing_config_is_an_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = wva(dir.path(), &["--config", "/definitely/not/here.toml", "gamma-map"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn bad_config_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 4\n[detector]\netta = 0.5\n").unwrap();
    let o = wva(dir.path(), &["--config", cfg.to_str().unwrap(), "gamma-map"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:"));
}

#[test]
fn ideal_detector_gamma_is_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wva(dir.path(), &["--ideal-detector", "gamma-map", "--nbar-t", "1e6"]));
    let r = rows(&dir.path().join("gamma_map.csv"));
    let mut lit = 0;
    for row in &r {
        if !row[6].is_empty() {
            assert!((row[6].parse::<f64>().unwrap() - 1.0).abs() < 1e-6, "{row:?}");
            lit += 1;
        }
    }
    assert!(lit > 100);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "11", "simulate", "--frames", "40", "--nbar-t", "1e6", "--csv"];
    ok(&wva(a.path(), &args));
    ok(&wva(b.path(), &args));
    for f in ["frames.wvaf", "frames.csv", "simulate.manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    ok(&wva(c.path(), &["--seed", "12", "simulate", "--frames", "40", "--nbar-t", "1e6", "--csv"]));
    assert_ne!(fs::read(a.path().join("frames.wvaf")).unwrap(), fs::read(c.path().join("frames.wvaf")).unwrap());
}

#[test]
fn dark_simulation_gives_offset_only_frames() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wva(dir.path(), &["simulate", "--frames", "5", "--nbar-t", "0", "--no-classical-noise", "--csv"]));
    let text = fs::read_to_string(dir.path().join("frames.csv")).unwrap();
    let mut n = 0usize;
    let mut sum = 0.0;
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        for v in line.split(',').skip(1) {
            sum += v.parse::<f64>().unwrap();
            n += 1;
        }
    }
    let mean = sum / n as f64;
    assert!((mean - 100.0).abs() < 1.0, "dark mean {mean}");
    // no light, no information
    let est = wva(dir.path(), &["estimate", "--input", dir.path().join("frames.wvaf").to_str().unwrap(), "--nu", "2"]);
    assert_eq!(est.status.code(), Some(1));
}

#[test]
fn estimate_reports_each_estimator() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wva(dir.path(), &["simulate", "--frames", "200", "--nbar-t", "1e7"]));
    let input = dir.path().join("frames.wvaf");
    ok(&wva(dir.path(), &["estimate", "--input", input.to_str().unwrap(), "--nu", "20", "--resamples", "20"]));
    let r = rows(&dir.path().join("estimate.csv"));
    let names: Vec<&str> = r.iter().map(|row| row[1].as_str()).collect();
    assert_eq!(names, ["mle", "sd", "com"]);
    assert!(r.iter().all(|row| row[4].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn corrupt_container_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.wvaf");
    fs::write(&bad, b"not frames at all").unwrap();
    let o = wva(dir.path(), &["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn empty_intensity_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = wva(dir.path(), &["sweep", "--nbar-t", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = wva(dir.path(), &["--threads", "0", "gamma-map"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_pairs_schemes_at_each_intensity() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wva(
        dir.path(),
        &["sweep", "--schemes", "cm,rwva", "--nbar-t", "1e6", "--estimators", "sd", "--pool", "100", "--nu", "10", "--resamples", "10"],
    ));
    let r = rows(&dir.path().join("sweep.csv"));
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][0], "cm");
    assert_eq!(r[1][0], "rwva");
    assert_eq!(r[0][2], r[1][2]);
}
