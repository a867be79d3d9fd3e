//! Time-series CSV and JSON run manifests.
//!
//! CSV columns, in order (`d` = monitor depth):
//!
//! `t, dt, err_estimate, F, Ftilde, Vol, sup_rm, k_running,
//! sup_deriv_rm_0 .. sup_deriv_rm_d, fm_sup, grad_f_l2, grad_ftilde_l2,
//! step_dissipation, step_dissipation_tilde, speed_l2,
//! smoothing_ratio_0 .. smoothing_ratio_d, residual, systole_proxy,
//! dtg_sup, a_observed, dtg_grad_sup, b_observed, l_observed, calabi_l2`
//!
//! Absent optional values are empty cells. Floats use Rust's shortest
//! round-trip formatting.

use focf::diagnostics::DiagnosticsRecord;
use focf::FlowTrajectory;
use std::io::Write;
use std::path::Path;

pub const CSV_VERSION: &str = "focf-timeseries-1";
pub const CSV_NAME: &str = "timeseries.csv";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub fn columns(depth: usize) -> Vec<String> {
    let mut c: Vec<String> =
        ["t", "dt", "err_estimate", "F", "Ftilde", "Vol", "sup_rm", "k_running"].iter().map(|s| s.to_string()).collect();
    c.extend((0..=depth).map(|k| format!("sup_deriv_rm_{k}")));
    c.extend(
        ["fm_sup", "grad_f_l2", "grad_ftilde_l2", "step_dissipation", "step_dissipation_tilde", "speed_l2"]
            .iter()
            .map(|s| s.to_string()),
    );
    c.extend((0..=depth).map(|k| format!("smoothing_ratio_{k}")));
    c.extend(
        ["residual", "systole_proxy", "dtg_sup", "a_observed", "dtg_grad_sup", "b_observed", "l_observed", "calabi_l2"]
            .iter()
            .map(|s| s.to_string()),
    );
    c
}

fn cell(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

fn row(r: &DiagnosticsRecord, depth: usize) -> Vec<String> {
    let padded = |v: &[f64]| (0..=depth).map(|k| v.get(k).copied().map(cell).unwrap_or_default()).collect::<Vec<_>>();
    let mut out = vec![cell(r.t), cell(r.dt), cell(r.err_estimate), cell(r.f), cell(r.ftilde), cell(r.vol), cell(r.sup_rm), cell(r.k_running)];
    out.extend(padded(&r.sup_deriv_rm));
    out.extend([
        cell(r.fm_sup),
        cell(r.grad_f_l2),
        cell(r.grad_ftilde_l2),
        opt(r.step_dissipation),
        opt(r.step_dissipation_tilde),
        cell(r.speed_l2),
    ]);
    out.extend(padded(&r.smoothing_ratio));
    out.extend([
        cell(r.residual),
        cell(r.systole_proxy),
        cell(r.dtg_sup),
        cell(r.a_observed),
        opt(r.dtg_grad_sup),
        opt(r.b_observed),
        cell(r.l_observed),
        opt(r.calabi_l2),
    ]);
    out
}

pub fn write_csv<W: Write>(w: W, traj: &FlowTrajectory) -> csv::Result<()> {
    let depth = traj.spec.integrator.monitor_depth;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns(depth))?;
    for r in traj.records() {
        out.write_record(row(r, depth))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, traj: &FlowTrajectory) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), traj).map_err(std::io::Error::other)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use focf::flow::run;
    use focf::presets::Preset;
    use focf::{FlowKind, FlowSpec, GeometryKind};

    #[test]
    fn header_matches_rows() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::ProductSpheres).unwrap();
        let s = Preset::ProductSpheres { a2: 1.0, b2: 2.0 }.build(focf::Grid2Chart::square(1.0, 8).unwrap()).unwrap();
        let traj = run(&s, &spec, 0.1).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert!(widths.iter().all(|w| *w == columns(2).len()));
        assert!(text.starts_with("t,dt,err_estimate,F,Ftilde,Vol,sup_rm,k_running,sup_deriv_rm_0"));
        assert_eq!(widths.len(), traj.len() + 1);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(cell(v).parse::<f64>().unwrap(), v);
        }
    }
}
