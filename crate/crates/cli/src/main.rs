//! `focf`: batch driver for curvature-flow experiments.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 bad config or usage,
//! 3 singularity candidate (`run --fail-on-singularity`), 4 monitor failure,
//! 5 empty time range.

mod config;
mod output;
mod runner;
mod sweep;

use clap::{Parser, Subcommand};
use focf::acceptance::{AcceptanceConfig, Suite, CRITERIA};
use focf::diagnostics::smoothing_monitor;
use focf::flow::{parabolic_rescale, RescaleParams};
use runner::{exit, CliError};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "focf", version, about = "Fourth-order curvature flow experiments")]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one flow from a config and write CSV, manifest and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with code 3 when the run stops as, or is classified as, a singularity candidate.
        #[arg(long)]
        fail_on_singularity: bool,
    },
    /// Run the acceptance suite and print one line per criterion.
    Check {
        /// Desk resolution; flow criteria use half of it.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        /// Flip the sign of the δdRc term (the gradient criterion must fail).
        #[arg(long)]
        mutate_delta: bool,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run every combination of parameter values and summarize the monitors.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=v1,v2,...`, values in TOML syntax; repeatable.
        #[arg(long = "vary", required = true)]
        vary: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parabolically rescale a stored trajectory: `λ g(t0 + t/λ²)`.
    Rescale {
        /// Snapshot directory or its `trajectory.toml`.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(exit::BAD_CONFIG);
        }
    }
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Run { config, out, tol, seed, fail_on_singularity } => {
            let mut cfg = config::load(&config)?;
            if let Some(t) = tol {
                cfg.tolerance = Some(t);
            }
            if let Some(s) = seed {
                cfg.set_seed(s)?;
            }
            cfg.validate()?;
            cmd_run(&cfg, out, fail_on_singularity)
        }
        Command::Check { resolution, tol, only, mutate_delta, json } => {
            let cfg = AcceptanceConfig { n: resolution, tol, delta_sign: if mutate_delta { -1.0 } else { 1.0 } };
            cmd_check(cfg, &only, json)
        }
        Command::Sweep { config, vary, out, tol, seed } => {
            let mut base = config::load(&config)?;
            if let Some(t) = tol {
                base.tolerance = Some(t);
            }
            if let Some(s) = seed {
                base.set_seed(s)?;
            }
            let grid = sweep::parse_grid(&vary)?;
            sweep::cmd_sweep(&base, &grid, &out)
        }
        Command::Rescale { trajectory, lambda, t0, out } => cmd_rescale(&trajectory, lambda, t0, &out),
        Command::Report { run } => cmd_report(&run),
    }
}

fn cmd_run(cfg: &config::RunConfig, out: Option<PathBuf>, fail_on_singularity: bool) -> Result<i32, CliError> {
    let r = runner::execute(cfg, out.as_deref())?;
    let t = &r.trajectory;
    println!("status      {:?}", t.status());
    println!("steps       {}", t.len() - 1);
    println!("t           {}", t.last().t);
    println!("F           {:.6e} -> {:.6e}", t.first().record.f, t.last().record.f);
    if let Some(s) = &r.verdicts.singularity {
        println!("singularity {}", serde_json::to_string(s).unwrap_or_default());
    }
    if let Some(c) = &r.verdicts.classifier {
        println!("class       {:?}", c.class);
    }
    for s in &r.verdicts.skipped {
        println!("skipped     {s}");
    }
    if fail_on_singularity && (r.verdicts.singular() || t.status() == focf::TerminationStatus::SingularityCandidate) {
        println!("singularity candidate");
        return Ok(exit::SINGULARITY);
    }
    if !r.verdicts.failures.is_empty() {
        println!("failed      {}", r.verdicts.failures.join(", "));
        return Ok(exit::MONITOR_FAILURE);
    }
    Ok(exit::OK)
}

fn cmd_check(cfg: AcceptanceConfig, only: &[u32], json: Option<PathBuf>) -> Result<i32, CliError> {
    let ids: Vec<u32> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only.to_vec() };
    if let Some(bad) = ids.iter().find(|i| !CRITERIA.iter().any(|c| c.0 == **i)) {
        return Err(CliError::Usage(format!("no criterion {bad}")));
    }
    let suite = Suite::new(cfg);
    let mut results = Vec::new();
    for id in ids {
        let r = suite.criterion(id);
        println!("{r}");
        results.push(r);
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria passed", results.len());
    if let Some(path) = json {
        output::write_json(&path, &results)?;
    }
    Ok(if passed == results.len() { exit::OK } else { exit::MONITOR_FAILURE })
}

#[derive(Serialize)]
struct SmoothingComparison {
    m: usize,
    original: f64,
    rescaled: f64,
    relative_difference: f64,
}

#[derive(Serialize)]
struct RescaleReport {
    lambda: f64,
    t0: f64,
    states: usize,
    /// `sup|Rm|` of the rescaled state at `t̃ = 0` over the original at `t0`; expected `1/λ`.
    sup_rm_ratio: f64,
    smoothing: Vec<SmoothingComparison>,
    max_relative_difference: Option<f64>,
    note: Option<String>,
}

fn cmd_rescale(path: &std::path::Path, lambda: f64, t0: f64, out: &std::path::Path) -> Result<i32, CliError> {
    let traj = focf::snapshot::load_trajectory(path)?;
    let scaled = parabolic_rescale(&traj, RescaleParams { lambda, t0 })?;
    std::fs::create_dir_all(out)?;
    focf::snapshot::save_trajectory(&out.join(output::SNAPSHOT_DIR), &scaled, 1)?;
    output::write_csv_file(&out.join(output::CSV_NAME), &scaled)?;

    let at = |tr: &focf::FlowTrajectory, t: f64| tr.points().iter().find(|p| p.t == t).map(|p| p.record.sup_rm);
    let sup_rm_ratio = match (at(&traj, t0), at(&scaled, 0.0)) {
        (Some(a), Some(b)) if a > 0.0 => b / a,
        _ => f64::NAN,
    };
    let mut smoothing = Vec::new();
    let mut note = None;
    if traj.first().t == 0.0 && t0 == 0.0 {
        for m in 0..=traj.spec.integrator.monitor_depth {
            let a = smoothing_monitor(&traj, m)?;
            let b = smoothing_monitor(&scaled, m)?;
            let rel = if a != 0.0 { (a - b).abs() / a.abs() } else { (a - b).abs() };
            smoothing.push(SmoothingComparison { m, original: a, rescaled: b, relative_difference: rel });
        }
    } else {
        note = Some("smoothing ratios compare only for runs rescaled about their start at t = 0".into());
    }
    let max_rel = smoothing.iter().map(|s| s.relative_difference).reduce(f64::max);
    let report = RescaleReport { lambda, t0, states: scaled.len(), sup_rm_ratio, smoothing, max_relative_difference: max_rel, note };
    output::write_json(&out.join("rescale_report.json"), &report)?;
    println!("states       {}", report.states);
    println!("sup|Rm| ratio {:.12} (1/λ = {:.12})", report.sup_rm_ratio, 1.0 / lambda);
    for s in &report.smoothing {
        println!("smoothing m={} {:.6e} -> {:.6e} (rel {:.1e})", s.m, s.original, s.rescaled, s.relative_difference);
    }
    if let Some(n) = &report.note {
        println!("note         {n}");
    }
    Ok(exit::OK)
}

fn cmd_report(dir: &std::path::Path) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(dir.join(output::MANIFEST_NAME))?;
    let m: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
    let mut rdr = csv::Reader::from_path(dir.join(output::CSV_NAME)).map_err(|e| CliError::Usage(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| CliError::Usage(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(|e| CliError::Usage(e.to_string()))?;
    let value = |row: &csv::StringRecord, name: &str| -> Option<f64> { col(name).and_then(|i| row.get(i)).and_then(|s| s.parse().ok()) };
    println!("kind        {}", m["config"]["kind"].as_str().unwrap_or("?"));
    println!("preset      {}", m["config"]["initial"]["preset"].as_str().unwrap_or("?"));
    println!("status      {}", m["status"].as_str().unwrap_or("?"));
    println!("steps       {}", m["steps"]);
    if let (Some(a), Some(b)) = (rows.first(), rows.last()) {
        for name in ["t", "F", "Vol", "sup_rm", "grad_f_l2"] {
            if let (Some(x), Some(y)) = (value(a, name), value(b, name)) {
                println!("{name:<11} {x:.6e} -> {y:.6e}");
            }
        }
    }
    let v = &m["verdicts"];
    if let Some(r) = v["smoothing_ratio"].as_array() {
        let s: Vec<String> = r.iter().map(|x| format!("{:.3e}", x.as_f64().unwrap_or(f64::NAN))).collect();
        println!("smoothing   {}", s.join(" "));
    }
    if !v["singularity"].is_null() {
        println!("singularity {}", v["singularity"]);
    }
    if let Some(c) = v["classifier"]["class"].as_str() {
        println!("class       {c}");
    }
    let failures: Vec<&str> = v["failures"].as_array().map(|a| a.iter().filter_map(|x| x.as_str()).collect()).unwrap_or_default();
    println!("failures    {}", if failures.is_empty() { "none".to_string() } else { failures.join(", ") });
    Ok(if failures.is_empty() { exit::OK } else { exit::MONITOR_FAILURE })
}
