use crate::config::{ConfigError, RunConfig};
use crate::output::{self, CSV_NAME, CSV_VERSION, MANIFEST_NAME, SNAPSHOT_DIR};
use focf::diagnostics::{
    ball_growth_check, dissipation_budget, local_sobolev_monitor, metric_equivalence_all, nonsingular_classifier,
    singularity_detector, smoothing_monitor, CheckOutcome, ClassifierReport, DissipationBudget, SingularityVerdict,
};
use focf::flow::{attach_residuals, run};
use focf::{FlowTrajectory, FocfError, TerminationStatus};
use serde::Serialize;
use std::path::Path;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// I/O or numerical failure.
    pub const RUNTIME: i32 = 1;
    pub const BAD_CONFIG: i32 = 2;
    pub const SINGULARITY: i32 = 3;
    pub const MONITOR_FAILURE: i32 = 4;
    /// A requested time range lies outside the trajectory.
    pub const RANGE_EMPTY: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] FocfError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::BAD_CONFIG,
            CliError::Core(FocfError::RangeEmpty(_)) => exit::RANGE_EMPTY,
            CliError::Core(_) | CliError::Io(_) => exit::RUNTIME,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum DetectorResult {
    Verdict(SingularityVerdict),
    Inconclusive { inconclusive_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallResult {
    pub t: f64,
    pub outcome: CheckOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetResult {
    pub budget: DissipationBudget,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Verdicts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing_ratio: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric_equivalence: Option<CheckOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_growth: Option<Vec<BallResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_sobolev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_budget: Option<BudgetResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub singularity: Option<DetectorResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierReport>,
    /// Monitors that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
    /// Names of failed pass/fail monitors.
    pub failures: Vec<String>,
}

impl Verdicts {
    pub fn singular(&self) -> bool {
        matches!(self.singularity, Some(DetectorResult::Verdict(SingularityVerdict::SingularityCandidate { .. })))
    }
}

fn skip(v: &mut Verdicts, name: &str, e: FocfError) {
    v.skipped.push(format!("{name}: {e}"));
}

pub fn evaluate_monitors(cfg: &RunConfig, traj: &mut FlowTrajectory) -> Verdicts {
    let m = &cfg.monitors;
    let mut v = Verdicts::default();
    let grid = traj.first().state.chart().is_some();
    if m.residual {
        match attach_residuals(traj) {
            Ok(r) => v.residual_max = Some(r.iter().cloned().fold(0.0, f64::max)),
            Err(e) => skip(&mut v, "residual", e),
        }
    }
    if m.smoothing {
        let depth = traj.spec.integrator.monitor_depth;
        match (0..=depth).map(|k| smoothing_monitor(traj, k)).collect::<focf::Result<Vec<f64>>>() {
            Ok(r) => v.smoothing_ratio = Some(r),
            Err(e) => skip(&mut v, "smoothing", e),
        }
    }
    if m.metric_equivalence {
        match metric_equivalence_all(traj) {
            Ok(c) => {
                if !c.pass {
                    v.failures.push("metric_equivalence".into());
                }
                v.metric_equivalence = Some(c);
            }
            Err(e) => skip(&mut v, "metric_equivalence", e),
        }
    }
    if let Some(b) = &m.ball_growth {
        if grid {
            let mut out = Vec::new();
            for &t in &b.times {
                match ball_growth_check(traj, (b.center[0], b.center[1]), b.rho, t) {
                    Ok(c) => {
                        if !c.pass {
                            v.failures.push(format!("ball_growth(t = {t})"));
                        }
                        out.push(BallResult { t, outcome: c });
                    }
                    Err(e) => skip(&mut v, &format!("ball_growth(t = {t})"), e),
                }
            }
            v.ball_growth = Some(out);
        } else {
            v.skipped.push("ball_growth: needs a grid geometry".into());
        }
    }
    if let Some(s) = &m.local_sobolev {
        match local_sobolev_monitor(traj, (s.center[0], s.center[1]), s.radius, s.m) {
            Ok(c) => v.local_sobolev = Some(c),
            Err(e) => skip(&mut v, "local_sobolev", e),
        }
    }
    if m.energy_budget {
        if let Some(b) = dissipation_budget(traj) {
            let pass = b.defect.abs() <= m.energy_budget_tol * b.initial_energy.abs();
            if !pass {
                v.failures.push("energy_budget".into());
            }
            v.energy_budget = Some(BudgetResult { budget: b, pass });
        }
    }
    if m.singularity {
        match singularity_detector(traj) {
            Ok(s) => v.singularity = Some(DetectorResult::Verdict(s)),
            Err(FocfError::Inconclusive(n)) => v.singularity = Some(DetectorResult::Inconclusive { inconclusive_steps: n }),
            Err(e) => skip(&mut v, "singularity", e),
        }
    }
    if m.classifier && traj.status() == TerminationStatus::Completed {
        match nonsingular_classifier(traj) {
            Ok(c) => v.classifier = Some(c),
            Err(e) => skip(&mut v, "classifier", e),
        }
    }
    v
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub program: &'static str,
    pub version: &'static str,
    pub csv_version: &'static str,
    pub csv_columns: Vec<String>,
    pub config: &'a RunConfig,
    pub spec: &'a focf::FlowSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub status: TerminationStatus,
    pub steps: usize,
    pub t_final: f64,
    pub verdicts: &'a Verdicts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<String>,
}

pub struct RunOutcome {
    pub trajectory: FlowTrajectory,
    pub verdicts: Verdicts,
}

/// Runs one config and writes its artifacts into `out` when given.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    let spec = cfg.spec()?;
    let init = cfg.initial_state()?;
    let mut traj = run(&init, &spec, cfg.t_end)?;
    let verdicts = evaluate_monitors(cfg, &mut traj);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        output::write_csv_file(&dir.join(CSV_NAME), &traj)?;
        let snapshots = if cfg.output.snapshot_stride > 0 {
            focf::snapshot::save_trajectory(&dir.join(SNAPSHOT_DIR), &traj, cfg.output.snapshot_stride)?;
            Some(SNAPSHOT_DIR.to_string())
        } else {
            None
        };
        let manifest = Manifest {
            program: "focf",
            version: env!("CARGO_PKG_VERSION"),
            csv_version: CSV_VERSION,
            csv_columns: output::columns(spec.integrator.monitor_depth),
            config: cfg,
            spec: &traj.spec,
            seed: cfg.seed(),
            status: traj.status(),
            steps: traj.len() - 1,
            t_final: traj.last().t,
            verdicts: &verdicts,
            snapshots,
        };
        output::write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    }
    Ok(RunOutcome { trajectory: traj, verdicts })
}
