//! Parameter sweeps: the Cartesian product of `--vary key=v1,v2` lists.

use crate::config::{self, RunConfig};
use crate::output;
use crate::runner::{self, exit, CliError, DetectorResult};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

fn parse_scalar(s: &str) -> Result<toml::Value, CliError> {
    let doc: toml::Table = toml::from_str(&format!("v = {s}")).map_err(|_| CliError::Usage(format!("bad value `{s}`")))?;
    Ok(doc["v"].clone())
}

pub fn parse_grid(specs: &[String]) -> Result<Vec<Axis>, CliError> {
    if specs.is_empty() {
        return Err(CliError::Usage("empty parameter grid".into()));
    }
    specs
        .iter()
        .map(|s| {
            let (key, vals) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=v1,v2 in `{s}`")))?;
            let values: Vec<toml::Value> =
                vals.split(',').map(str::trim).filter(|v| !v.is_empty()).map(parse_scalar).collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(CliError::Usage(format!("no values for `{key}`")));
            }
            Ok(Axis { key: key.trim().to_string(), values })
        })
        .collect()
}

fn set_path(root: &mut toml::Value, key: &str, v: toml::Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| CliError::Usage(format!("`{key}` does not name a table entry")))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), v);
            return Ok(());
        }
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

/// All cells of the grid, first axis slowest.
pub fn cells(grid: &[Axis]) -> Vec<Vec<toml::Value>> {
    let mut out: Vec<Vec<toml::Value>> = vec![vec![]];
    for axis in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub values: Vec<String>,
    pub status: Option<String>,
    pub steps: Option<usize>,
    pub smoothing_ratio: Option<Vec<f64>>,
    pub local_sobolev: Option<f64>,
    pub singularity: Option<String>,
    pub failures: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
}

fn spread(vals: &[f64]) -> Option<Spread> {
    if vals.is_empty() {
        return None;
    }
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some(Spread { min, max, ratio: max / min })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub axes: Vec<String>,
    pub cells: Vec<CellSummary>,
    /// Spread of the empirical smoothing constant per derivative order.
    pub smoothing_spread: Vec<Option<Spread>>,
    pub local_sobolev_spread: Option<Spread>,
    pub failed_cells: usize,
}

fn cell_config(base: &RunConfig, grid: &[Axis], values: &[toml::Value]) -> Result<RunConfig, CliError> {
    let mut root = toml::Value::try_from(base).map_err(|e| CliError::Usage(e.to_string()))?;
    for (axis, v) in grid.iter().zip(values) {
        set_path(&mut root, &axis.key, v.clone())?;
    }
    Ok(config::parse_value(root)?)
}

fn run_cell(base: &RunConfig, grid: &[Axis], i: usize, values: &[toml::Value], out: &Path) -> CellSummary {
    let mut s = CellSummary {
        cell: i,
        values: values.iter().map(|v| v.to_string()).collect(),
        status: None,
        steps: None,
        smoothing_ratio: None,
        local_sobolev: None,
        singularity: None,
        failures: vec![],
        error: None,
    };
    let result = cell_config(base, grid, values)
        .and_then(|cfg| runner::execute(&cfg, Some(&out.join(format!("cell_{i:03}")))));
    match result {
        Ok(r) => {
            s.status = Some(format!("{:?}", r.trajectory.status()));
            s.steps = Some(r.trajectory.len() - 1);
            s.smoothing_ratio = r.verdicts.smoothing_ratio.clone();
            s.local_sobolev = r.verdicts.local_sobolev;
            s.singularity = r.verdicts.singularity.as_ref().map(|d| match d {
                DetectorResult::Verdict(v) => serde_json::to_value(v)
                    .ok()
                    .and_then(|j| j.as_object().and_then(|o| o.keys().next().cloned()).or(j.as_str().map(String::from)))
                    .unwrap_or_default(),
                DetectorResult::Inconclusive { .. } => "Inconclusive".into(),
            });
            s.failures = r.verdicts.failures;
        }
        Err(e) => s.error = Some(e.to_string()),
    }
    s
}

pub fn summarize(grid: &[Axis], cells: Vec<CellSummary>) -> SweepSummary {
    let depth = cells.iter().filter_map(|c| c.smoothing_ratio.as_ref().map(|r| r.len())).max().unwrap_or(0);
    let smoothing_spread = (0..depth)
        .map(|m| spread(&cells.iter().filter_map(|c| c.smoothing_ratio.as_ref().and_then(|r| r.get(m).copied())).collect::<Vec<_>>()))
        .collect();
    let ls: Vec<f64> = cells.iter().filter_map(|c| c.local_sobolev).collect();
    let failed_cells = cells.iter().filter(|c| c.error.is_some() || !c.failures.is_empty()).count();
    SweepSummary {
        axes: grid.iter().map(|a| a.key.clone()).collect(),
        cells,
        smoothing_spread,
        local_sobolev_spread: spread(&ls),
        failed_cells,
    }
}

fn write_summary_csv(path: &Path, s: &SweepSummary) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    let depth = s.smoothing_spread.len();
    let mut header = vec!["cell".to_string()];
    header.extend(s.axes.iter().cloned());
    header.extend(["status".into(), "steps".into()]);
    header.extend((0..depth).map(|m| format!("smoothing_ratio_{m}")));
    header.extend(["local_sobolev".into(), "singularity".into(), "failures".into(), "error".into()]);
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for c in &s.cells {
        let mut row = vec![c.cell.to_string()];
        row.extend(c.values.iter().cloned());
        row.push(c.status.clone().unwrap_or_default());
        row.push(c.steps.map(|n| n.to_string()).unwrap_or_default());
        for m in 0..depth {
            row.push(c.smoothing_ratio.as_ref().and_then(|r| r.get(m)).map(|v| format!("{v:?}")).unwrap_or_default());
        }
        row.push(c.local_sobolev.map(|v| format!("{v:?}")).unwrap_or_default());
        row.push(c.singularity.clone().unwrap_or_default());
        row.push(c.failures.join(";"));
        row.push(c.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(base: &RunConfig, grid: &[Axis], out: &Path) -> Result<i32, CliError> {
    let all = cells(grid);
    std::fs::create_dir_all(out)?;
    let results: Vec<CellSummary> =
        all.par_iter().enumerate().map(|(i, values)| run_cell(base, grid, i, values, out)).collect();
    let summary = summarize(grid, results);
    write_summary_csv(&out.join("summary.csv"), &summary)?;
    output::write_json(&out.join("summary.json"), &summary)?;
    for c in &summary.cells {
        let line = match &c.error {
            Some(e) => format!("error: {e}"),
            None => format!(
                "{} steps {}, smoothing {:?}",
                c.status.as_deref().unwrap_or("?"),
                c.steps.unwrap_or(0),
                c.smoothing_ratio.as_deref().unwrap_or(&[])
            ),
        };
        println!("cell {:>3} [{}] {line}", c.cell, c.values.join(", "));
    }
    for (m, s) in summary.smoothing_spread.iter().enumerate() {
        if let Some(s) = s {
            println!("smoothing m={m}: [{:.3e}, {:.3e}] spread {:.2}", s.min, s.max, s.ratio);
        }
    }
    if let Some(s) = &summary.local_sobolev_spread {
        println!("local sobolev: [{:.3e}, {:.3e}] spread {:.2}", s.min, s.max, s.ratio);
    }
    Ok(if summary.failed_cells == 0 { exit::OK } else { exit::MONITOR_FAILURE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_product_and_parsing() {
        let g = parse_grid(&["initial.amplitude=0.1,0.2".into(), "resolution=16,32,64".into()]).unwrap();
        let c = cells(&g);
        assert_eq!(c.len(), 6);
        assert_eq!(c[1], vec![toml::Value::Float(0.1), toml::Value::Integer(32)]);
        assert!(parse_grid(&[]).is_err());
        assert!(parse_grid(&["resolution=".into()]).is_err());
        assert!(parse_grid(&["resolution".into()]).is_err());
    }

    #[test]
    fn cell_overrides_reach_nested_keys() {
        let base = config::parse("kind = \"L2Flow\"\nt_end = 1.0\n[initial]\npreset = \"rough\"\nseed = 1\namplitude = 0.01\n").unwrap();
        let g = parse_grid(&["initial.amplitude=0.03".into(), "monitors.residual=true".into()]).unwrap();
        let cfg = cell_config(&base, &g, &cells(&g)[0]).unwrap();
        assert_eq!(cfg.initial, focf::presets::Preset::Rough { seed: 1, amplitude: 0.03 });
        assert!(cfg.monitors.residual);
        let bad = parse_grid(&["initial.amplitud=0.03".into()]).unwrap();
        assert!(cell_config(&base, &bad, &cells(&bad)[0]).is_err());
    }
}
