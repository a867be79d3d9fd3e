use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn focf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focf")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("focf-cli-{name}-{}", std::process::id()));
    std::fs::remove_dir_all(&d).ok();
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const FLAT: &str = "kind = \"L2Flow\"\nresolution = 8\nt_end = 0.5\n[initial]\npreset = \"flat\"\n";

const SPHERES: &str = "kind = \"L2Flow\"\nt_end = 20.0\n[initial]\npreset = \"product-spheres\"\na2 = 1.0\nb2 = 4.0\n";

#[test]
fn flat_run_writes_artifacts() {
    let d = scratch("flat");
    let cfg = write(&d, "flat.toml", FLAT);
    let out = d.join("out");
    let o = focf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let f = header.iter().position(|h| *h == "F").unwrap();
    assert!(lines.all(|l| l.split(',').nth(f) == Some("0.0")));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "Completed");
    assert_eq!(manifest["verdicts"]["failures"].as_array().unwrap().len(), 0);
    assert_eq!(manifest["csv_columns"].as_array().unwrap().len(), header.len());
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn product_spheres_converge_to_critical() {
    let d = scratch("spheres");
    let cfg = write(&d, "s.toml", SPHERES);
    let out = d.join("out");
    let o = focf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["verdicts"]["classifier"]["class"], "ConvergesToCritical");
    // The manifest reproduces the run.
    let again = d.join("again");
    let m = out.join("manifest.json");
    assert_eq!(focf(&["run", "--config", m.to_str().unwrap(), "--out", again.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("timeseries.csv")).unwrap(), std::fs::read(again.join("timeseries.csv")).unwrap());
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn bad_configs_exit_with_code_two() {
    let d = scratch("bad");
    let non_spd = write(&d, "a.toml", "kind = \"L2Flow\"\nt_end = 1.0\n[initial]\npreset = \"random-smooth\"\nseed = 2\namplitude = 4.0\n");
    let o = focf(&["run", "--config", &non_spd]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("initial"));
    let typo = write(&d, "b.toml", &FLAT.replace("t_end", "t_ned"));
    assert_eq!(focf(&["run", "--config", &typo]).status.code(), Some(2));
    let no_seed = write(&d, "c.toml", FLAT);
    assert_eq!(focf(&["run", "--config", &no_seed, "--seed", "3"]).status.code(), Some(2));
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn singularity_flag_maps_to_code_three() {
    // A curvature cap below the initial curvature stops the run as a candidate.
    let d = scratch("sing");
    let cfg = write(
        &d,
        "s.toml",
        "kind = \"L2Flow\"\nresolution = 16\nt_end = 0.5\ntolerance = 1e-6\n[initial]\npreset = \"conformal-bump\"\namplitude = 0.3\nmode = 1\n[integrator]\ncurvature_cap = 0.5\n",
    );
    assert_eq!(focf(&["run", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(focf(&["run", "--config", &cfg, "--fail-on-singularity"]).status.code(), Some(3));
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn sweep_and_rescale() {
    let d = scratch("sweep");
    let cfg = write(
        &d,
        "r.toml",
        "kind = \"L2Flow\"\nresolution = 32\nt_end = 0.01\ntolerance = 1e-6\n[initial]\npreset = \"rough\"\nseed = 3\namplitude = 0.02\n[output]\nsnapshot_stride = 1\n[monitors]\nenergy_budget_tol = 1e-2\n",
    );
    let out = d.join("sw");
    let o = focf(&["--threads", "1", "sweep", "--config", &cfg, "--vary", "initial.amplitude=0.02,0.03", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("cell_001/manifest.json").exists());

    let o = focf(&["sweep", "--config", &cfg, "--vary", "resolution=", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let snaps = out.join("cell_000/snapshots");
    let r = d.join("resc");
    let o = focf(&["rescale", "--trajectory", snaps.to_str().unwrap(), "--lambda", "2", "--out", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.join("rescale_report.json")).unwrap()).unwrap();
    assert!((rep["sup_rm_ratio"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(rep["max_relative_difference"].as_f64().unwrap() < 1e-6);

    let ident = d.join("ident");
    focf(&["rescale", "--trajectory", snaps.to_str().unwrap(), "--lambda", "1", "--out", ident.to_str().unwrap()]);
    let a = std::fs::read(snaps.join("frame_000001.focf")).unwrap();
    let b = std::fs::read(ident.join("snapshots/frame_000001.focf")).unwrap();
    assert_eq!(a, b);

    let o = focf(&["rescale", "--trajectory", snaps.to_str().unwrap(), "--lambda", "2", "--t0", "9", "--out", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn check_rejects_unknown_criteria() {
    assert_eq!(focf(&["check", "--only", "12"]).status.code(), Some(2));
    let o = focf(&["check", "--only", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS]"));
}
