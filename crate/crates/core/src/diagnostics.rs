//! Per-step diagnostics records and the trajectory monitors built on them.

use crate::curvature::{bilaplacian, f_m_from_norms, riemann, rm_derivative_norms_sq};
use crate::cutoff::CutoffFunction;
use crate::distance::{distances_from, max_axis_spacing};
use crate::error::{FocfError, Result};
use crate::flow::{evaluate_state, FlowState, FlowTrajectory, TerminationStatus};
use crate::functionals::{calabi_metric_velocity, calabi_velocity, FlowKind};
use crate::tensor::{norm_sq_with, sup, MetricField2, TensorField};
use serde::{Deserialize, Serialize};

/// One row of the time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Accepted step that produced this state (0 for the initial state).
    pub dt: f64,
    pub err_estimate: f64,
    pub f: f64,
    pub ftilde: f64,
    pub vol: f64,
    pub sup_rm: f64,
    /// Running sup of `sup_rm`.
    pub k_running: f64,
    /// `sup|∇^k Rm|` for `k = 0..=depth`.
    pub sup_deriv_rm: Vec<f64>,
    pub fm_sup: f64,
    pub grad_f_l2: f64,
    pub grad_ftilde_l2: f64,
    /// `∫‖grad F‖² dt` and `∫ Vol^{−(4−n)/n} ‖grad F̃‖² dt` over the step
    /// that produced this state, by the integrator's own quadrature.
    pub step_dissipation: Option<f64>,
    pub step_dissipation_tilde: Option<f64>,
    /// `‖∂_t g‖_{L²}`.
    pub speed_l2: f64,
    /// `sup|∇^m Rm| / (K + t^{-1/2})^{1+m/2}` for `m = 0..=depth`; 0 at `t ≤ 0`.
    pub smoothing_ratio: Vec<f64>,
    pub residual: f64,
    pub systole_proxy: f64,
    /// `sup|∂_t g|_g` at this state and its running sup.
    pub dtg_sup: f64,
    pub a_observed: f64,
    /// `sup|∇ ∂_t g|_g` and its running sup; not tracked on Milnor frames.
    pub dtg_grad_sup: Option<f64>,
    pub b_observed: Option<f64>,
    pub l_observed: f64,
    /// `‖s‖_{L²}` for Calabi runs.
    pub calabi_l2: Option<f64>,
}

impl DiagnosticsRecord {
    pub fn blank(depth: usize) -> Self {
        Self {
            t: 0.0,
            dt: 0.0,
            err_estimate: 0.0,
            f: 0.0,
            ftilde: 0.0,
            vol: 0.0,
            sup_rm: 0.0,
            k_running: 0.0,
            sup_deriv_rm: vec![0.0; depth + 1],
            fm_sup: 0.0,
            grad_f_l2: 0.0,
            grad_ftilde_l2: 0.0,
            step_dissipation: None,
            step_dissipation_tilde: None,
            speed_l2: 0.0,
            smoothing_ratio: vec![0.0; depth + 1],
            residual: 0.0,
            systole_proxy: 0.0,
            dtg_sup: 0.0,
            a_observed: 0.0,
            dtg_grad_sup: None,
            b_observed: None,
            l_observed: 0.0,
            calabi_l2: None,
        }
    }

    pub(crate) fn finish_instant(&mut self) {
        self.k_running = self.sup_rm;
        self.a_observed = self.dtg_sup;
        self.b_observed = self.dtg_grad_sup;
        self.update_ratios();
    }

    /// Folds the running sups of `prev` into this record.
    pub(crate) fn accumulate(&mut self, prev: Option<&DiagnosticsRecord>) {
        self.k_running = self.sup_rm;
        self.a_observed = self.dtg_sup;
        self.b_observed = self.dtg_grad_sup;
        if let Some(p) = prev {
            self.k_running = self.k_running.max(p.k_running);
            self.a_observed = self.a_observed.max(p.a_observed);
            self.b_observed = match (self.b_observed, p.b_observed) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
            self.l_observed = self.l_observed.max(p.l_observed);
        }
        self.update_ratios();
    }

    fn update_ratios(&mut self) {
        let t = self.t;
        let k = self.k_running;
        self.smoothing_ratio = self
            .sup_deriv_rm
            .iter()
            .enumerate()
            .map(|(m, s)| if t > 0.0 { s / (k + t.powf(-0.5)).powf(1.0 + 0.5 * m as f64) } else { 0.0 })
            .collect();
    }

    /// Every numeric entry that must be finite on an accepted step.
    pub fn is_finite(&self) -> bool {
        let core = [
            self.t,
            self.f,
            self.ftilde,
            self.vol,
            self.sup_rm,
            self.k_running,
            self.fm_sup,
            self.grad_f_l2,
            self.grad_ftilde_l2,
            self.speed_l2,
            self.residual,
            self.dtg_sup,
            self.a_observed,
            self.l_observed,
        ];
        core.iter().all(|v| v.is_finite())
            && self.sup_deriv_rm.iter().chain(&self.smoothing_ratio).all(|v| v.is_finite())
            && self.sup_rm >= 0.0
            && self.grad_f_l2 >= 0.0
    }
}

/// Pass/fail with the smallest slack found (negative when failing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub margin: f64,
}

/// Worst-case smoothing ratio `sup_t sup|∇^m Rm| / (K + t^{-1/2})^{1+m/2}`,
/// `K` the running sup of `sup|Rm|`.
pub fn smoothing_monitor(traj: &FlowTrajectory, m: usize) -> Result<f64> {
    if traj.first().t != 0.0 {
        return Err(FocfError::Invalid("smoothing monitor needs a trajectory starting at t = 0".into()));
    }
    let depth = traj.first().record.sup_deriv_rm.len();
    if m >= depth {
        return Err(FocfError::ValenceOverflow(4 + m, 4 + depth.saturating_sub(1)));
    }
    Ok(traj.records().map(|r| r.smoothing_ratio[m]).fold(0.0, f64::max))
}

/// `A_observed` over the stored states with time in `[a, b]`, plus the
/// endpoints when they fall between stored states.
fn observed_a(traj: &FlowTrajectory, a: f64, b: f64) -> Result<f64> {
    let mut m = 0.0f64;
    for p in traj.points() {
        if p.t >= a && p.t <= b {
            m = m.max(p.record.dtg_sup);
        }
    }
    let times = traj.times();
    for t in [a, b] {
        if times.binary_search_by(|x| x.total_cmp(&t)).is_ok() {
            continue;
        }
        let st = traj.state_at(t)?;
        let ev = evaluate_state(&st, &traj.spec, true)?;
        m = m.max(ev.record.map(|r| r.dtg_sup).unwrap_or(0.0));
    }
    Ok(m)
}

/// Generalized eigenvalue range of `(g(s), g(t))` over all nodes.
fn eig_range(gs: &MetricField2, gt: &MetricField2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for k in 0..gs.chart.len() {
        let [[a, b], [_, c]] = gs.at(k);
        let [[p, q], [_, r]] = gt.at(k);
        // det(gt − μ gs) = 0
        let qa = a * c - b * b;
        let qb = -(a * r + c * p - 2.0 * b * q);
        let qc = p * r - q * q;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        let m1 = (-qb - disc) / (2.0 * qa);
        let m2 = (-qb + disc) / (2.0 * qa);
        lo = lo.min(m1);
        hi = hi.max(m2);
    }
    (lo, hi)
}

fn state_metric_pair(traj: &FlowTrajectory, s: f64, t: f64) -> Result<Option<(MetricField2, MetricField2)>> {
    let a = traj.state_at(s)?.grid_metric()?;
    let b = traj.state_at(t)?.grid_metric()?;
    Ok(a.zip(b))
}

/// `e^{−A|t−s|} g(s) ≤ g(t) ≤ e^{A|t−s|} g(s)` with `A` measured over the
/// interval. The margin is `A|t − s| − max |log μ|` over the generalized
/// eigenvalues `μ`; a relative slack of `1e−6` absorbs rounding.
pub fn metric_equivalence_check(traj: &FlowTrajectory, s: f64, t: f64) -> Result<CheckOutcome> {
    let a = observed_a(traj, s.min(t), s.max(t))?;
    metric_equivalence_check_with(traj, s, t, a)
}

/// As [`metric_equivalence_check`] with a prescribed `A`.
pub fn metric_equivalence_check_with(traj: &FlowTrajectory, s: f64, t: f64, a: f64) -> Result<CheckOutcome> {
    let bound = a * (t - s).abs();
    let worst = match state_metric_pair(traj, s, t)? {
        Some((gs, gt)) => {
            let (lo, hi) = eig_range(&gs, &gt);
            lo.ln().abs().max(hi.ln().abs())
        }
        None => {
            let (cs, ct) = match (traj.state_at(s)?, traj.state_at(t)?) {
                (FlowState::Homogeneous(x), FlowState::Homogeneous(y)) => (x.coeffs(), y.coeffs()),
                _ => return Err(FocfError::Invalid("mixed state kinds".into())),
            };
            cs.iter().zip(&ct).map(|(x, y)| (y / x).ln().abs()).fold(0.0, f64::max)
        }
    };
    let margin = bound - worst;
    Ok(CheckOutcome { pass: margin >= -1e-6 * bound.max(1e-10), margin })
}

/// Metric equivalence between every pair of consecutive stored states and
/// between the first and last one.
pub fn metric_equivalence_all(traj: &FlowTrajectory) -> Result<CheckOutcome> {
    let times = traj.times();
    let mut pairs: Vec<(f64, f64)> = times.windows(2).map(|w| (w[0], w[1])).collect();
    pairs.push((times[0], *times.last().expect("nonempty")));
    let mut out = CheckOutcome { pass: true, margin: f64::INFINITY };
    for (s, t) in pairs {
        let c = metric_equivalence_check(traj, s, t)?;
        out.pass &= c.pass;
        out.margin = out.margin.min(c.margin);
    }
    Ok(out)
}

/// `r_A(t) = 1 / (1 + (e^{At} − 1)^{1/2})`.
pub fn ball_radius_factor(a: f64, t: f64) -> f64 {
    1.0 / (1.0 + (a * t).exp_m1().max(0.0).sqrt())
}

/// `B_{g(t)}(x, r_A ρ) ⊆ B_{g(0)}(x, ρ)` and `B_{g(0)}(x, r_A ρ) ⊆ B_{g(t)}(x, ρ)`,
/// each radius comparison relaxed by `2h`.
pub fn ball_growth_check(traj: &FlowTrajectory, center: (usize, usize), rho: f64, t: f64) -> Result<CheckOutcome> {
    let a = observed_a(traj, traj.first().t, t)?;
    ball_growth_check_with(traj, center, rho, t, a)
}

pub fn ball_growth_check_with(
    traj: &FlowTrajectory,
    center: (usize, usize),
    rho: f64,
    t: f64,
    a: f64,
) -> Result<CheckOutcome> {
    let t0 = traj.first().t;
    let (g0, gt) = state_metric_pair(traj, t0, t)?
        .ok_or_else(|| FocfError::Invalid("ball growth needs the torus geometry".into()))?;
    let r = ball_radius_factor(a, t - t0) * rho;
    let slack = 2.0 * max_axis_spacing(&g0).max(max_axis_spacing(&gt));
    let d0 = distances_from(&g0, center);
    let dt = distances_from(&gt, center);
    let mut margin = f64::INFINITY;
    for (x, y) in [(&dt, &d0), (&d0, &dt)] {
        for (inner, outer) in x.iter().zip(y.iter()) {
            if *inner <= r {
                margin = margin.min(rho + slack - outer);
            }
        }
    }
    Ok(CheckOutcome { pass: margin >= 0.0, margin })
}

fn ball_mask(g: &MetricField2, center: (usize, usize), r: f64) -> Vec<bool> {
    distances_from(g, center).iter().map(|d| *d <= r).collect()
}

/// Up to `max` indices spread evenly over `0..n`.
fn sample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..max).map(|k| k * (n - 1) / (max - 1)).collect();
    v.dedup();
    v
}

/// `sup_t t^m ‖∇^m Rm‖²_{L²(B_r)} / sup_{[0,T]} ‖Rm‖²_{L²(B_{2r})}`, balls in
/// `g(T)`, sampled on at most 24 stored times.
pub fn local_sobolev_monitor(traj: &FlowTrajectory, center: (usize, usize), r: f64, m: usize) -> Result<f64> {
    let gt = traj.last().state.grid_metric()?.ok_or_else(|| FocfError::Invalid("torus geometry required".into()))?;
    let inner = ball_mask(&gt, center, r);
    let outer = ball_mask(&gt, center, 2.0 * r);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in sample_indices(traj.len(), 24) {
        let p = &traj.points()[i];
        let g = p.state.grid_metric()?.expect("grid state");
        let b = riemann(&g)?;
        let norms = rm_derivative_norms_sq(&b, &g, m)?;
        let w = g.volume_weights();
        let integral = |q: &[f64], mask: &[bool]| -> f64 {
            q.iter().zip(&w).zip(mask).filter(|(_, m)| **m).map(|((q, w), _)| q * w).sum()
        };
        den = den.max(integral(&norms[0], &outer));
        if p.t > 0.0 {
            num = num.max(p.t.powi(m as i32) * integral(&norms[m], &inner));
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Multipliers applied to the measured constants of the cutoff bounds; all
/// ones is the honest check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffScales {
    pub a: f64,
    pub b: f64,
}

impl Default for CutoffScales {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffOutcome {
    pub check: CheckOutcome,
    /// `sup (|dγ| + |∇∇γ|)` over the run.
    pub l_observed: f64,
}

/// Pointwise Gronwall bounds, with `A = sup|∂_t g|`, `B = sup|∇∂_t g|` and
/// `D₀ = |dγ|_{g(0)}`:
/// `|dγ|_t ≤ e^{At/2} D₀` and `|∇∇γ|_t ≤ e^{At}(|∇∇γ|_0 + 3 B D₀ (1 − e^{−At/2})/A)`.
pub fn cutoff_evolution_check(traj: &FlowTrajectory, gamma: &CutoffFunction) -> Result<CutoffOutcome> {
    cutoff_evolution_check_with(traj, gamma, CutoffScales::default())
}

pub fn cutoff_evolution_check_with(
    traj: &FlowTrajectory,
    gamma: &CutoffFunction,
    scales: CutoffScales,
) -> Result<CutoffOutcome> {
    let t0 = traj.first().t;
    let g0 = traj.first().state.grid_metric()?.ok_or_else(|| FocfError::Invalid("torus geometry required".into()))?;
    let (d0, h0) = gamma.norms(&g0)?;
    let mut margin = f64::INFINITY;
    let mut l_obs = 0.0f64;
    for p in traj.points() {
        let g = p.state.grid_metric()?.expect("grid state");
        let (d, h) = gamma.norms(&g)?;
        let a = scales.a * p.record.a_observed;
        let b = scales.b
            * p.record.b_observed.ok_or_else(|| FocfError::Invalid("trajectory lacks |∇∂_t g| records".into()))?;
        let t = p.t - t0;
        let grow = (0.5 * a * t).exp();
        let integral = if a * t > 1e-12 { 3.0 * b * (-(-0.5 * a * t).exp_m1()) / a } else { 1.5 * b * t };
        for k in 0..d.len() {
            let bd = grow * d0[k];
            let bh = grow * grow * (h0[k] + integral * d0[k]);
            let tol_d = 1e-9 * (1.0 + bd);
            let tol_h = 1e-9 * (1.0 + bh);
            margin = margin.min(bd + tol_d - d[k]).min(bh + tol_h - h[k]);
            l_obs = l_obs.max(d[k] + h[k]);
        }
    }
    Ok(CutoffOutcome { check: CheckOutcome { pass: margin >= 0.0, margin }, l_observed: l_obs })
}

/// Metric velocity of a grid state under the trajectory's flow.
fn metric_velocity(state: &FlowState, kind: FlowKind) -> Result<(MetricField2, TensorField)> {
    match state {
        FlowState::Metric(g) => Ok((g.clone(), crate::functionals::evaluate_metric(g, kind, true)?.velocity)),
        FlowState::Potential(p) => {
            let v = calabi_velocity(p)?;
            Ok((p.metric()?, calabi_metric_velocity(&p.chart, &v)))
        }
        FlowState::Homogeneous(_) => Err(FocfError::Invalid("grid trajectory required".into())),
    }
}

/// Fits `sup_t ‖∂_t Rm + Δ²Rm‖ / E` with
/// `E = sup|∇²Rm| sup|Rm| + sup|∇Rm|² + sup|Rm|³`; `∂_t Rm` is a central
/// difference along the flow velocity. Sampled on at most 12 stored states.
pub fn curvature_evolution_residual(traj: &FlowTrajectory) -> Result<f64> {
    let mut best = 0.0f64;
    for i in sample_indices(traj.len(), 12) {
        let (g, v) = metric_velocity(&traj.points()[i].state, traj.spec.kind)?;
        let vmax = v.max_abs();
        let b = riemann(&g)?;
        let sups: Vec<f64> = rm_derivative_norms_sq(&b, &g, 2)?.iter().map(|q| sup(q).sqrt()).collect();
        let env = sups[2] * sups[0] + sups[1] * sups[1] + sups[0].powi(3);
        if env < 1e-14 || vmax == 0.0 {
            continue;
        }
        let eps = 1e-4 / vmax;
        let shifted = |s: f64| -> Result<TensorField> {
            let gt = g.as_tensor().add_scaled(&v, s)?;
            let gm = MetricField2::new(g.chart, gt.data[0].clone(), gt.data[1].clone(), gt.data[3].clone())?;
            Ok(riemann(&gm)?.rm)
        };
        let drm = shifted(eps)?.add_scaled(&shifted(-eps)?, -1.0)?.scale(0.5 / eps);
        let r = drm.add_scaled(&bilaplacian(&b.rm, &g)?, 1.0)?;
        best = best.max(sup(&norm_sq_with(&r, &b.inv)).sqrt() / env);
    }
    Ok(best)
}

/// Detector verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SingularityVerdict {
    NoSingularity {
        worst_ratio_to_median: f64,
    },
    /// Curvature grew past twice its running median on a run that did not stop.
    CurvatureExcursion {
        worst_ratio_to_median: f64,
    },
    SingularityCandidate {
        blowup_time: f64,
        /// Growth of `sup|Rm|` over the last decade of `T − t`.
        decade_growth: f64,
        /// Node and time maximizing `f_m / (K + t^{-1/2})` in the last decade.
        point: Option<(usize, usize)>,
        point_time: f64,
    },
    /// The run stopped early but curvature did not grow by 10× per decade.
    UnconfirmedTermination {
        blowup_time: f64,
        decade_growth: f64,
    },
}

pub const MIN_DETECTOR_STEPS: usize = 20;
pub const DECADE_GROWTH: f64 = 10.0;

/// Residual of the least-squares line `log sup|Rm| ≈ a − p log(T − t)`.
fn power_fit_residual(ts: &[f64], logs: &[f64], big_t: f64) -> f64 {
    let xs: Vec<f64> = ts.iter().map(|t| (big_t - t).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = logs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(logs).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    xs.iter().zip(logs).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum()
}

/// Blowup time estimate by golden-section search on `log(T − t_last)`.
fn fit_blowup_time(ts: &[f64], sups: &[f64]) -> f64 {
    let t_last = *ts.last().expect("nonempty");
    let span = (t_last - ts[0]).max(1e-300);
    let logs: Vec<f64> = sups.iter().map(|s| s.max(1e-300).ln()).collect();
    let f = |u: f64| power_fit_residual(ts, &logs, t_last + u.exp());
    let (mut a, mut b) = ((1e-12 * span).ln(), (10.0 * span).ln());
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    t_last + (0.5 * (a + b)).exp()
}

/// `sup|Rm|` at `T − t = τ`, interpolated linearly in `log` against `log(T − t)`.
fn sup_at_distance(ts: &[f64], sups: &[f64], big_t: f64, tau: f64) -> f64 {
    let xs: Vec<f64> = ts.iter().map(|t| (big_t - t).ln()).collect();
    let x = tau.ln();
    if x >= xs[0] {
        return sups[0];
    }
    for i in 0..xs.len() - 1 {
        if x <= xs[i] && x >= xs[i + 1] {
            let w = (xs[i] - x) / (xs[i] - xs[i + 1]);
            return (sups[i].max(1e-300).ln() * (1.0 - w) + sups[i + 1].max(1e-300).ln() * w).exp();
        }
    }
    *sups.last().expect("nonempty")
}

pub fn singularity_detector(traj: &FlowTrajectory) -> Result<SingularityVerdict> {
    let steps = traj.len() - 1;
    if steps < MIN_DETECTOR_STEPS {
        return Err(FocfError::Inconclusive(steps));
    }
    let ts = traj.times();
    let sups: Vec<f64> = traj.records().map(|r| r.sup_rm).collect();
    if traj.status() != TerminationStatus::SingularityCandidate {
        let mut worst = 0.0f64;
        let mut seen: Vec<f64> = Vec::with_capacity(sups.len());
        let mut excursion = false;
        for s in &sups {
            seen.push(*s);
            let mut sorted = seen.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            if median > 0.0 {
                worst = worst.max(s / median);
            }
            if *s > 2.0 * median {
                excursion = true;
            }
        }
        return Ok(if excursion {
            SingularityVerdict::CurvatureExcursion { worst_ratio_to_median: worst }
        } else {
            SingularityVerdict::NoSingularity { worst_ratio_to_median: worst }
        });
    }
    let start = ts.len() / 2;
    let big_t = fit_blowup_time(&ts[start..], &sups[start..]);
    let tau = big_t - ts[ts.len() - 1];
    let growth = sups[sups.len() - 1] / sup_at_distance(&ts, &sups, big_t, 10.0 * tau).max(1e-300);
    if growth < DECADE_GROWTH * (1.0 - 1e-6) {
        return Ok(SingularityVerdict::UnconfirmedTermination { blowup_time: big_t, decade_growth: growth });
    }
    let mut best = (f64::NEG_INFINITY, None, big_t);
    let depth = traj.spec.integrator.monitor_depth.max(1);
    for p in traj.points().iter().filter(|p| big_t - p.t <= 10.0 * tau) {
        if let Some(g) = p.state.grid_metric()? {
            let b = riemann(&g)?;
            let (fm, _) = f_m_from_norms(&rm_derivative_norms_sq(&b, &g, depth)?);
            let denom = p.record.k_running + if p.t > 0.0 { p.t.powf(-0.5) } else { 0.0 };
            for (k, v) in fm.iter().enumerate() {
                let score = v / denom.max(1e-300);
                if score > best.0 {
                    best = (score, Some(g.chart.node(k)), p.t);
                }
            }
        }
    }
    Ok(SingularityVerdict::SingularityCandidate {
        blowup_time: big_t,
        decade_growth: growth,
        point: best.1,
        point_time: best.2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonsingularClass {
    Collapsing,
    ConvergesToCritical,
    /// Cannot occur on the compact model geometries.
    NoncompactLimit,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierThresholds {
    pub collapse_fraction: f64,
    pub critical_factor: f64,
    pub critical_floor: f64,
    pub budget_rel_tol: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self { collapse_fraction: 0.05, critical_factor: 1e-6, critical_floor: 1e-10, budget_rel_tol: 1e-6 }
    }
}

/// `Σ rate Δt` against the energy drop, Simpson in time where midpoints exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationBudget {
    pub dissipated: f64,
    pub drop: f64,
    /// `drop − dissipated`.
    pub defect: f64,
    pub initial_energy: f64,
}

/// Discrete energy identity: `F` against `Σ∫‖grad F‖²` for the unnormalized
/// flow, `F̃` against `Σ∫ Vol^{−(4−n)/n} ‖grad F̃‖²` for the normalized one.
/// Steps without a stored integral fall back to the trapezoid rule.
/// Calabi runs have no budget here.
pub fn dissipation_budget(traj: &FlowTrajectory) -> Option<DissipationBudget> {
    let normalized = match traj.spec.kind {
        FlowKind::L2Flow => false,
        FlowKind::VolumeNormalizedL2 => true,
        FlowKind::SurfaceCalabi => return None,
    };
    let n = traj.spec.dimension as f64;
    let alpha = (4.0 - n) / n;
    let rate = |r: &DiagnosticsRecord| {
        if normalized {
            r.grad_ftilde_l2 * r.grad_ftilde_l2 * r.vol.powf(-alpha)
        } else {
            r.grad_f_l2 * r.grad_f_l2
        }
    };
    let energy = |r: &DiagnosticsRecord| if normalized { r.ftilde } else { r.f };
    let recs: Vec<&DiagnosticsRecord> = traj.records().collect();
    let mut dissipated = 0.0;
    for w in recs.windows(2) {
        let stored = if normalized { w[1].step_dissipation_tilde } else { w[1].step_dissipation };
        dissipated += stored.unwrap_or_else(|| 0.5 * (w[1].t - w[0].t) * (rate(w[0]) + rate(w[1])));
    }
    let e0 = energy(recs[0]);
    let drop = e0 - energy(recs[recs.len() - 1]);
    Some(DissipationBudget { dissipated, drop, defect: drop - dissipated, initial_energy: e0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub class: NonsingularClass,
    pub final_grad: f64,
    pub critical_threshold: f64,
    pub systole_ratio: f64,
    pub budget: Option<DissipationBudget>,
    pub budget_holds: bool,
}

pub fn nonsingular_classifier(traj: &FlowTrajectory) -> Result<ClassifierReport> {
    nonsingular_classifier_with(traj, ClassifierThresholds::default())
}

pub fn nonsingular_classifier_with(traj: &FlowTrajectory, th: ClassifierThresholds) -> Result<ClassifierReport> {
    let cap = traj.spec.integrator.curvature_cap;
    let max_rm = traj.records().map(|r| r.sup_rm).fold(0.0, f64::max);
    if max_rm > cap {
        return Err(FocfError::RequiresBoundedCurvature(max_rm, cap));
    }
    let recs: Vec<&DiagnosticsRecord> = traj.records().collect();
    let first = recs[0];
    let last = recs[recs.len() - 1];
    let sys0 = first.systole_proxy;
    let sys_ratio = if sys0 > 0.0 { last.systole_proxy / sys0 } else { f64::NAN };
    let earlier_min = recs[..recs.len() - 1].iter().map(|r| r.systole_proxy).fold(f64::INFINITY, f64::min);
    let collapsing = sys_ratio < th.collapse_fraction && last.systole_proxy <= earlier_min;
    let threshold = (th.critical_factor * first.ftilde / first.vol.sqrt()).max(th.critical_floor);
    let class = if collapsing {
        NonsingularClass::Collapsing
    } else if last.grad_ftilde_l2 <= threshold && sys_ratio >= th.collapse_fraction {
        NonsingularClass::ConvergesToCritical
    } else {
        NonsingularClass::Undetermined
    };
    let budget = dissipation_budget(traj);
    let budget_holds = budget
        .map(|b| b.dissipated <= b.drop + th.budget_rel_tol * b.initial_energy.abs() + 1e-14)
        .unwrap_or(true);
    Ok(ClassifierReport {
        class,
        final_grad: last.grad_ftilde_l2,
        critical_threshold: threshold,
        systole_ratio: sys_ratio,
        budget,
        budget_holds,
    })
}

/// Intervals whose residual exceeds `factor` times the median residual.
pub fn residual_spikes(residuals: &[f64], factor: f64) -> Vec<usize> {
    if residuals.is_empty() {
        return Vec::new();
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    residuals.iter().enumerate().filter(|(_, r)| **r > factor * median.max(1e-300)).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_factor_limits() {
        assert_eq!(ball_radius_factor(3.0, 0.0), 1.0);
        assert!(ball_radius_factor(1.0, 1.0) < 1.0);
        let r = ball_radius_factor(2.0, 0.5);
        assert!((r - 1.0 / (1.0 + (1f64.exp() - 1.0).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn blowup_fit_recovers_time() {
        let ts: Vec<f64> = (0..30).map(|k| 1.0 - 10f64.powf(-(k as f64) / 8.0)).collect();
        let sups: Vec<f64> = ts.iter().map(|t| 3.0 / (1.0 - t)).collect();
        let t = fit_blowup_time(&ts, &sups);
        assert!((t - 1.0).abs() < 1e-8, "{t}");
        let g = sups[29] / sup_at_distance(&ts, &sups, 1.0, 10.0 * (1.0 - ts[29]));
        assert!((g - 10.0).abs() < 1e-8);
    }

    #[test]
    fn spikes_are_flagged() {
        let r = [1.0, 1.1, 0.9, 50.0, 1.0];
        assert_eq!(residual_spikes(&r, 10.0), vec![3]);
    }

    #[test]
    fn record_ratios() {
        let mut r = DiagnosticsRecord::blank(1);
        r.t = 0.25;
        r.sup_rm = 2.0;
        r.sup_deriv_rm = vec![2.0, 8.0];
        r.accumulate(None);
        assert!((r.smoothing_ratio[0] - 0.5).abs() < 1e-15);
        assert!((r.smoothing_ratio[1] - 1.0).abs() < 1e-15);
    }
}
