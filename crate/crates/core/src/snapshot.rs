//! Binary metric snapshots and trajectory directories.
//!
//! Metric snapshot layout, all values little-endian:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 8 | `"FOCF1"` followed by three zero bytes |
//! | 8 | 8 | `u64` dimension, always 2 |
//! | 16 | 8 | `u64` N1 |
//! | 24 | 8 | `u64` N2 |
//! | 32 | 8 | `f64` L1 |
//! | 40 | 8 | `f64` L2 |
//! | 48 | 24·N1·N2 | `f64` planes g11, g12, g22, each row-major (`j` fastest) |
//!
//! A trajectory directory holds one snapshot per stored grid state and a
//! `trajectory.toml` manifest with the flow spec, the termination status and
//! one `[[frames]]` entry per state (`t` plus either `file` or
//! `homogeneous`). Calabi potentials are stored through their metric `h δ`
//! and recovered as `φ = 2Δ₀⁻¹(h − mean h)`, exact up to the constant in `φ`.

use crate::error::{FocfError, Result};
use crate::flow::{FlowState, FlowTrajectory, TerminationStatus};
use crate::functionals::{CalabiPotential, FlowSpec};
use crate::grid::Grid2Chart;
use crate::homogeneous::HomogeneousMetric;
use crate::spectral;
use crate::tensor::MetricField2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 8] = *b"FOCF1\0\0\0";
const HEADER: usize = 48;

pub fn encode_metric(g: &MetricField2) -> Vec<u8> {
    let c = g.chart;
    let mut out = Vec::with_capacity(HEADER + 24 * c.len());
    out.extend_from_slice(&MAGIC);
    for v in [2u64, c.n1 as u64, c.n2 as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [c.l1, c.l2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for plane in [&g.g11, &g.g12, &g.g22] {
        for v in plane.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn word(bytes: &[u8], k: usize) -> [u8; 8] {
    bytes[8 * k..8 * k + 8].try_into().expect("eight bytes")
}

pub fn decode_metric(bytes: &[u8]) -> Result<MetricField2> {
    if bytes.len() < HEADER || bytes[..8] != MAGIC {
        return Err(FocfError::Format("missing FOCF1 header".into()));
    }
    let dim = u64::from_le_bytes(word(bytes, 1));
    if dim != 2 {
        return Err(FocfError::Format(format!("dimension {dim}, expected 2")));
    }
    let n1 = u64::from_le_bytes(word(bytes, 2)) as usize;
    let n2 = u64::from_le_bytes(word(bytes, 3)) as usize;
    let chart = Grid2Chart::new(f64::from_le_bytes(word(bytes, 4)), f64::from_le_bytes(word(bytes, 5)), n1, n2)?;
    let n = chart.len();
    if bytes.len() != HEADER + 24 * n {
        return Err(FocfError::Format(format!("{} bytes for a {n1}x{n2} grid", bytes.len())));
    }
    let plane = |p: usize| -> Vec<f64> { (0..n).map(|k| f64::from_le_bytes(word(bytes, 6 + p * n + k))).collect() };
    MetricField2::new(chart, plane(0), plane(1), plane(2))
}

pub fn write_metric(path: &Path, g: &MetricField2) -> Result<()> {
    Ok(fs::write(path, encode_metric(g))?)
}

pub fn read_metric(path: &Path) -> Result<MetricField2> {
    decode_metric(&fs::read(path)?)
}

/// Inverts `g = (b + ½Δ₀φ) δ` for a conformal snapshot, with `mean φ = 0`.
pub fn potential_from_metric(g: &MetricField2) -> Result<CalabiPotential> {
    let conformal = g.g12.iter().all(|v| *v == 0.0) && g.g11.iter().zip(&g.g22).all(|(a, b)| a == b);
    if !conformal {
        return Err(FocfError::Format("Calabi frame is not a conformal metric".into()));
    }
    let b = g.g11.iter().sum::<f64>() / g.chart.len() as f64;
    let dev: Vec<f64> = g.g11.iter().map(|h| h - b).collect();
    let phi = spectral::apply_symbol(&g.chart, &dev, |a, c| {
        let q = a * a + c * c;
        if q == 0.0 {
            0.0
        } else {
            -2.0 / q
        }
    });
    CalabiPotential::with_background(g.chart, b, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneous: Option<HomogeneousMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryManifest {
    pub format: String,
    pub status: TerminationStatus,
    pub spec: FlowSpec,
    pub frames: Vec<FrameEntry>,
}

pub const TRAJECTORY_FORMAT: &str = "focf-trajectory-1";
pub const MANIFEST_NAME: &str = "trajectory.toml";

/// Writes every `stride`-th stored state (always the last) into `dir`.
pub fn save_trajectory(dir: &Path, traj: &FlowTrajectory, stride: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stride = stride.max(1);
    let last = traj.len() - 1;
    let mut frames = Vec::new();
    for (i, p) in traj.points().iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        let entry = match &p.state {
            FlowState::Homogeneous(h) => FrameEntry { t: p.t, file: None, homogeneous: Some(*h) },
            st => {
                let name = format!("frame_{i:06}.focf");
                write_metric(&dir.join(&name), &st.grid_metric()?.expect("grid state"))?;
                FrameEntry { t: p.t, file: Some(name), homogeneous: None }
            }
        };
        frames.push(entry);
    }
    let manifest =
        TrajectoryManifest { format: TRAJECTORY_FORMAT.into(), status: traj.status(), spec: traj.spec.clone(), frames };
    let text = toml::to_string(&manifest).map_err(|e| FocfError::Format(e.to_string()))?;
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, text)?;
    Ok(path)
}

/// Reads a trajectory directory (or its manifest path); records are
/// recomputed from the states.
pub fn load_trajectory(path: &Path) -> Result<FlowTrajectory> {
    let (dir, manifest_path) =
        if path.is_dir() { (path.to_path_buf(), path.join(MANIFEST_NAME)) } else { (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf()) };
    let text = fs::read_to_string(&manifest_path)?;
    let m: TrajectoryManifest = toml::from_str(&text).map_err(|e| FocfError::Format(e.to_string()))?;
    if m.format != TRAJECTORY_FORMAT {
        return Err(FocfError::Format(format!("unknown trajectory format {:?}", m.format)));
    }
    let potential = m.spec.kind == crate::functionals::FlowKind::SurfaceCalabi;
    let mut states = Vec::with_capacity(m.frames.len());
    for f in &m.frames {
        let st = match (&f.file, &f.homogeneous) {
            (Some(name), None) => {
                let g = read_metric(&dir.join(name))?;
                if potential {
                    FlowState::Potential(potential_from_metric(&g)?)
                } else {
                    FlowState::Metric(g)
                }
            }
            (None, Some(h)) => FlowState::Homogeneous(*h),
            _ => return Err(FocfError::Format(format!("frame at t = {} needs exactly one of file, homogeneous", f.t))),
        };
        states.push((f.t, st));
    }
    FlowTrajectory::from_states(m.spec, states, m.status)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{FlowKind, GeometryKind};

    fn bumpy() -> MetricField2 {
        let c = Grid2Chart::new(2.0, 3.0, 8, 12).unwrap();
        let n = c.len();
        let g11 = c.sample(|x, y| 1.5 + 0.2 * (3.0 * x).sin() * (2.0 * y).cos());
        MetricField2::new(c, g11, vec![0.1; n], vec![2.0; n]).unwrap()
    }

    #[test]
    fn metric_round_trip_is_exact() {
        let g = bumpy();
        let bytes = encode_metric(&g);
        assert_eq!(&bytes[..5], b"FOCF1");
        assert_eq!(bytes.len(), 48 + 24 * 96);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 8);
        assert_eq!(decode_metric(&bytes).unwrap(), g);
    }

    #[test]
    fn truncated_or_foreign_bytes_are_rejected() {
        let bytes = encode_metric(&bumpy());
        assert!(matches!(decode_metric(&bytes[..100]), Err(FocfError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_metric(&bad), Err(FocfError::Format(_))));
    }

    #[test]
    fn potential_is_recovered() {
        let c = Grid2Chart::square(std::f64::consts::TAU, 16).unwrap();
        let phi = c.sample(|x, y| 0.1 * (x.cos() + (x - 2.0 * y).sin()));
        let p = CalabiPotential::with_background(c, 1.3, phi).unwrap();
        let q = potential_from_metric(&p.metric().unwrap()).unwrap();
        assert!((q.background - 1.3).abs() < 1e-14);
        assert!(p.phi.iter().zip(&q.phi).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn homogeneous_trajectory_round_trip() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::ProductSpheres).unwrap();
        let s = crate::presets::Preset::ProductSpheres { a2: 1.0, b2: 4.0 }.build(Grid2Chart::square(1.0, 8).unwrap()).unwrap();
        let traj = crate::flow::run(&s, &spec, 0.5).unwrap();
        let dir = std::env::temp_dir().join(format!("focf-snap-{}", std::process::id()));
        save_trajectory(&dir, &traj, 1).unwrap();
        let back = load_trajectory(&dir).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back.times(), traj.times());
        assert_eq!(back.status(), traj.status());
        assert_eq!(back.last().state, traj.last().state);
    }
}
