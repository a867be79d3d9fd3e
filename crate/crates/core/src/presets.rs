//! Named initial data and synthetic (non-solution) trajectories.
//!
//! Random presets draw Fourier coefficients from a ChaCha stream seeded by
//! the user seed, so the same seed gives the same field at every resolution.

use crate::error::{FocfError, Result};
use crate::flow::{FlowState, FlowTrajectory, TerminationStatus};
use crate::functionals::{CalabiPotential, FlowSpec, GeometryKind};
use crate::grid::Grid2Chart;
use crate::homogeneous::{HomogeneousMetric, MilnorFrameMetric, ProductSphereMetric};
use crate::spectral;
use crate::tensor::MetricField2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Preset {
    Flat {},
    /// `g = e^{2u} δ`, `u = A cos(k x') cos(k y')` in angle coordinates.
    ConformalBump { amplitude: f64, mode: u32 },
    /// `g = δ + A h`, `h` a random symmetric field of modes `|k| ≤ 3` with
    /// spectral norm peaking at 1. Non-SPD once `A` reaches 1 where `h` dips to −1.
    RandomSmooth { seed: u64, amplitude: f64 },
    /// Conformal factor with modes `|k|_∞ ≤ 5` and a `|k|^{−1}` spectrum,
    /// scaled to root-mean-square `A` (from the coefficients, so the field
    /// does not depend on the grid).
    Rough { seed: u64, amplitude: f64 },
    ProductSpheres { a2: f64, b2: f64 },
    Milnor { l1: f64, l2: f64, l3: f64 },
    /// Potential with `min ½Δ₀φ = −A` (background `h = 1`, so `A ≥ 1` degenerates).
    CalabiRandom { seed: u64, amplitude: f64 },
}

/// Random real trigonometric sum `Σ c_k cos(k·x') + s_k sin(k·x')` over
/// `0 < |k|_∞ ≤ kmax`, coefficients uniform in `[−1, 1]` times `weight(|k|)`.
fn random_series(rng: &mut ChaCha8Rng, kmax: i32, weight: impl Fn(f64) -> f64) -> Vec<(i32, i32, f64, f64)> {
    let mut out = Vec::new();
    for k1 in 0..=kmax {
        for k2 in -kmax..=kmax {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            let w = weight(((k1 * k1 + k2 * k2) as f64).sqrt());
            let c = rng.gen_range(-1.0..=1.0) * w;
            let s = rng.gen_range(-1.0..=1.0) * w;
            out.push((k1, k2, c, s));
        }
    }
    out
}

fn sample_series(chart: &Grid2Chart, terms: &[(i32, i32, f64, f64)]) -> Vec<f64> {
    let (l1, l2) = (chart.l1, chart.l2);
    chart.sample(|x, y| {
        terms
            .iter()
            .map(|&(k1, k2, c, s)| {
                let a = TAU * (k1 as f64 * x / l1 + k2 as f64 * y / l2);
                c * a.cos() + s * a.sin()
            })
            .sum()
    })
}

/// `count` independent random planes with modes `|k|_∞ ≤ kmax` and weights `1/(1 + |k|²)`.
pub fn random_planes(chart: &Grid2Chart, seed: u64, kmax: i32, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_series(chart, &random_series(&mut rng, kmax, |k| 1.0 / (1.0 + k * k)))).collect()
}

fn scaled_to_rms(mut terms: Vec<(i32, i32, f64, f64)>, target: f64) -> Vec<(i32, i32, f64, f64)> {
    let rms = (0.5 * terms.iter().map(|t| t.2 * t.2 + t.3 * t.3).sum::<f64>()).sqrt();
    if rms > 0.0 {
        for t in &mut terms {
            t.2 *= target / rms;
            t.3 *= target / rms;
        }
    }
    terms
}

fn check_amplitude(a: f64) -> Result<()> {
    if a.is_finite() && a >= 0.0 {
        Ok(())
    } else {
        Err(FocfError::Invalid(format!("amplitude {a} must be finite and nonnegative")))
    }
}

impl Preset {
    pub fn geometry(&self) -> GeometryKind {
        match self {
            Preset::ProductSpheres { .. } => GeometryKind::ProductSpheres,
            Preset::Milnor { .. } => GeometryKind::MilnorFrame,
            _ => GeometryKind::TorusGrid,
        }
    }

    pub fn is_potential(&self) -> bool {
        matches!(self, Preset::CalabiRandom { .. })
    }

    /// Builds the initial state; grid presets use `chart`, homogeneous ones ignore it.
    pub fn build(&self, chart: Grid2Chart) -> Result<FlowState> {
        Ok(match *self {
            Preset::Flat {} => FlowState::Metric(MetricField2::flat(chart)),
            Preset::ConformalBump { amplitude, mode } => {
                check_amplitude(amplitude)?;
                let k = mode as f64;
                let (l1, l2) = (chart.l1, chart.l2);
                let u = chart.sample(|x, y| amplitude * (k * TAU * x / l1).cos() * (k * TAU * y / l2).cos());
                FlowState::Metric(MetricField2::conformal(chart, &u)?)
            }
            Preset::RandomSmooth { seed, amplitude } => {
                check_amplitude(amplitude)?;
                let planes = random_planes(&chart, seed, 3, 3);
                let peak = (0..chart.len())
                    .map(|k| {
                        let (a, b, c) = (planes[0][k], planes[1][k], planes[2][k]);
                        let mean = 0.5 * (a + c);
                        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                        (mean - rad).abs().max((mean + rad).abs())
                    })
                    .fold(0.0f64, f64::max);
                let s = if peak > 0.0 { amplitude / peak } else { 0.0 };
                let g11 = planes[0].iter().map(|v| 1.0 + s * v).collect();
                let g12 = planes[1].iter().map(|v| s * v).collect();
                let g22 = planes[2].iter().map(|v| 1.0 + s * v).collect();
                FlowState::Metric(MetricField2::new(chart, g11, g12, g22)?)
            }
            Preset::Rough { seed, amplitude } => {
                check_amplitude(amplitude)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u = sample_series(&chart, &scaled_to_rms(random_series(&mut rng, 5, |k| 1.0 / k), amplitude));
                FlowState::Metric(MetricField2::conformal(chart, &u)?)
            }
            Preset::ProductSpheres { a2, b2 } => {
                FlowState::Homogeneous(HomogeneousMetric::ProductSpheres(ProductSphereMetric::new(a2, b2)?))
            }
            Preset::Milnor { l1, l2, l3 } => {
                FlowState::Homogeneous(HomogeneousMetric::Milnor(MilnorFrameMetric::new(l1, l2, l3)?))
            }
            Preset::CalabiRandom { seed, amplitude } => {
                check_amplitude(amplitude)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phi = sample_series(&chart, &random_series(&mut rng, 3, |k| 1.0 / (k * k * k)));
                let half_lap: Vec<f64> = spectral::flat_laplacian(&chart, &phi).iter().map(|v| 0.5 * v).collect();
                let m = -half_lap.iter().fold(0.0f64, |m, x| m.min(*x));
                let s = if m > 0.0 { amplitude / m } else { 0.0 };
                let p = CalabiPotential::new(chart, phi.iter().map(|v| v * s).collect())?;
                p.conformal_factor()?;
                FlowState::Potential(p)
            }
        })
    }
}

/// Times `T(1 − 10^{−k/per_decade})`, `k = 0..count`.
pub fn geometric_approach(big_t: f64, per_decade: usize, count: usize) -> Vec<f64> {
    (0..count).map(|k| big_t * (1.0 - 10f64.powf(-(k as f64) / per_decade as f64))).collect()
}

/// The curve `t ↦ c(t) g₀` at the given times, records recomputed from the
/// states. `|Rm|` scales like `1/c`.
pub fn scaled_family(
    g0: &MetricField2,
    times: &[f64],
    c: impl Fn(f64) -> f64,
    spec: FlowSpec,
    status: TerminationStatus,
) -> Result<FlowTrajectory> {
    let states = times.iter().map(|&t| (t, FlowState::Metric(g0.scaled(c(t))))).collect();
    FlowTrajectory::from_states(spec, states, status)
}

/// `g(t) = (T − t) g₀`, stopped short of `T` as a singularity candidate.
pub fn synthetic_blowup(g0: &MetricField2, big_t: f64, spec: FlowSpec) -> Result<FlowTrajectory> {
    let times = geometric_approach(big_t, 8, 41);
    scaled_family(g0, &times, |t| big_t - t, spec, TerminationStatus::SingularityCandidate)
}

/// `g(t) = diag(e^{−t}, 1)` on `[0, t_end]`: flat at every time, the
/// first axis collapses.
pub fn synthetic_collapse(chart: Grid2Chart, t_end: f64, samples: usize, spec: FlowSpec) -> Result<FlowTrajectory> {
    let n = chart.len();
    let states = (0..samples)
        .map(|k| {
            let t = t_end * k as f64 / (samples - 1) as f64;
            MetricField2::new(chart, vec![(-t).exp(); n], vec![0.0; n], vec![1.0; n]).map(|g| (t, FlowState::Metric(g)))
        })
        .collect::<Result<Vec<_>>>()?;
    FlowTrajectory::from_states(spec, states, TerminationStatus::Completed)
}

/// `g(t) = e^{κt} g₀` with records carrying the exact velocity norms of the
/// curve, `|∂_t g|_g = |κ|√2` and `∇∂_t g = 0`, in place of the flow's.
pub fn synthetic_homothety(g0: &MetricField2, kappa: f64, t_end: f64, samples: usize, spec: FlowSpec) -> Result<FlowTrajectory> {
    let times: Vec<f64> = (0..samples).map(|k| t_end * k as f64 / (samples - 1) as f64).collect();
    let mut traj = scaled_family(g0, &times, |t| (kappa * t).exp(), spec, TerminationStatus::Completed)?;
    let a = kappa.abs() * 2f64.sqrt();
    for p in traj.points_mut() {
        p.record.dtg_sup = a;
        p.record.a_observed = a;
        p.record.dtg_grad_sup = Some(0.0);
        p.record.b_observed = Some(0.0);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::FlowKind;

    fn chart(n: usize) -> Grid2Chart {
        Grid2Chart::square(TAU, n).unwrap()
    }

    #[test]
    fn same_seed_same_field_across_resolutions() {
        let p = Preset::Rough { seed: 7, amplitude: 0.2 };
        let a = p.build(chart(32)).unwrap().grid_metric().unwrap().unwrap();
        let b = p.build(chart(64)).unwrap().grid_metric().unwrap().unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let ka = a.chart.idx(i as isize, j as isize);
                let kb = b.chart.idx(2 * i as isize, 2 * j as isize);
                assert!((a.g11[ka] - b.g11[kb]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_smooth_amplitude_limits() {
        assert!(Preset::RandomSmooth { seed: 3, amplitude: 0.5 }.build(chart(32)).is_ok());
        let mut bad = 0;
        for seed in 0..4 {
            bad += Preset::RandomSmooth { seed, amplitude: 1.5 }.build(chart(32)).is_err() as usize;
        }
        assert!(bad > 0);
    }

    #[test]
    fn calabi_amplitude_one_degenerates() {
        assert!(Preset::CalabiRandom { seed: 1, amplitude: 0.3 }.build(chart(32)).is_ok());
        assert!(Preset::CalabiRandom { seed: 1, amplitude: 1.2 }.build(chart(32)).is_err());
    }

    #[test]
    fn synthetic_blowup_curvature_scales() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap();
        let g0 = Preset::ConformalBump { amplitude: 0.1, mode: 1 }.build(chart(16)).unwrap().grid_metric().unwrap().unwrap();
        let tr = synthetic_blowup(&g0, 2.0, spec).unwrap();
        let r: Vec<f64> = tr.records().map(|r| r.sup_rm * (2.0 - r.t)).collect();
        assert!(r.iter().all(|v| (v / r[0] - 1.0).abs() < 1e-9));
    }
}
