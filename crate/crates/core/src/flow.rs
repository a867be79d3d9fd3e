//! Time stepping for every flow kind, trajectories, parabolic rescaling and
//! the normalized/unnormalized correspondence.
//!
//! Grid flows take linearly implicit Euler substeps (the flat bilaplacian
//! `−cΔ₀²` implicit through its spectral multiplier, the nonlinear remainder
//! explicit) and extrapolate them to third order; the gap to the
//! second-order tableau entry, filtered through `(1 + hcΔ₀²)^{-1}`, drives
//! step control. Homogeneous families go
//! through DOPRI5.

use crate::curvature::{covariant_derivative, f_m_from_norms, rm_derivative_norms_sq};
use crate::diagnostics::DiagnosticsRecord;
use crate::distance::systole_proxy_sampled;
use crate::error::{FocfError, Result};
use crate::functionals::{
    calabi_metric_velocity, calabi_velocity, evaluate_metric, normalization_coefficient, CalabiPotential, FlowKind,
    FlowSpec, GeometryKind,
};
use crate::grid::Grid2Chart;
use crate::homogeneous::{homogeneous_grad, homogeneous_norm, homogeneous_velocity, HomogeneousMetric};
use crate::ode::{dopri5, Dopri5Options};
use crate::spectral;
use crate::tensor::{integrate, sup, norm_sq_with, MetricField2, TensorField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorParams {
    /// Local error target (sup norm of the embedded error estimate).
    pub tol: f64,
    pub dt0: f64,
    pub dt_min: f64,
    /// Largest step; `0` means `T_end / 50`.
    pub dt_max: f64,
    pub max_steps: usize,
    pub dealias: bool,
    /// Highest derivative order of `Rm` recorded per step.
    pub monitor_depth: usize,
    pub record_systole: bool,
    /// Base points per axis for the systole search.
    pub systole_samples: usize,
    /// Runs stop as singularity candidates once `sup|Rm|` exceeds this.
    pub curvature_cap: f64,
}

impl Default for IntegratorParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            dt0: 1e-4,
            dt_min: 1e-12,
            dt_max: 0.0,
            max_steps: 200_000,
            dealias: true,
            monitor_depth: 2,
            record_systole: true,
            systole_samples: 4,
            curvature_cap: 1e8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationStatus {
    Completed,
    SingularityCandidate,
    PotentialDegenerate,
    StepCollapse,
}

/// What a flow evolves.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowState {
    Metric(MetricField2),
    Potential(CalabiPotential),
    Homogeneous(HomogeneousMetric),
}

impl FlowState {
    pub fn chart(&self) -> Option<Grid2Chart> {
        match self {
            FlowState::Metric(g) => Some(g.chart),
            FlowState::Potential(p) => Some(p.chart),
            FlowState::Homogeneous(_) => None,
        }
    }

    /// The grid metric carried or induced by the state.
    pub fn grid_metric(&self) -> Result<Option<MetricField2>> {
        match self {
            FlowState::Metric(g) => Ok(Some(g.clone())),
            FlowState::Potential(p) => Ok(Some(p.metric()?)),
            FlowState::Homogeneous(_) => Ok(None),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            FlowState::Metric(g) => g.to_flat(),
            FlowState::Potential(p) => p.phi.clone(),
            FlowState::Homogeneous(h) => h.coeffs(),
        }
    }

    /// Same kind of state with new degrees of freedom, validated.
    pub fn with_flat(&self, v: &[f64]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FocfError::NonFinite("state"));
        }
        Ok(match self {
            FlowState::Metric(g) => FlowState::Metric(MetricField2::from_flat(g.chart, v)?),
            FlowState::Potential(p) => {
                FlowState::Potential(CalabiPotential::with_background(p.chart, p.background, v.to_vec())?)
            }
            FlowState::Homogeneous(h) => FlowState::Homogeneous(h.with_coeffs(v)?),
        })
    }

    /// `λ·g`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Ok(match self {
            FlowState::Metric(g) => FlowState::Metric(g.scaled(lambda)),
            FlowState::Potential(p) => FlowState::Potential(p.scaled(lambda)),
            FlowState::Homogeneous(h) => {
                FlowState::Homogeneous(h.with_coeffs(&h.coeffs().iter().map(|c| c * lambda).collect::<Vec<_>>())?)
            }
        })
    }

    fn matches(&self, spec: &FlowSpec) -> Result<()> {
        let ok = match (self, spec.kind, spec.geometry) {
            (FlowState::Potential(_), FlowKind::SurfaceCalabi, GeometryKind::TorusGrid) => true,
            (FlowState::Metric(_), FlowKind::L2Flow | FlowKind::VolumeNormalizedL2, GeometryKind::TorusGrid) => true,
            (FlowState::Homogeneous(HomogeneousMetric::ProductSpheres(_)), k, GeometryKind::ProductSpheres) => {
                k != FlowKind::SurfaceCalabi
            }
            (FlowState::Homogeneous(HomogeneousMetric::Milnor(_)), k, GeometryKind::MilnorFrame) => {
                k != FlowKind::SurfaceCalabi
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(FocfError::Invalid("state does not match the flow kind and geometry".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: FlowState,
    pub record: DiagnosticsRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub spec: FlowSpec,
    points: Vec<TrajectoryPoint>,
    status: TerminationStatus,
}

impl FlowTrajectory {
    /// Validates that times strictly increase.
    pub fn new(spec: FlowSpec, points: Vec<TrajectoryPoint>, status: TerminationStatus) -> Result<Self> {
        if points.is_empty() {
            return Err(FocfError::RangeEmpty("trajectory has no states".into()));
        }
        if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(FocfError::Invalid("trajectory times must increase strictly".into()));
        }
        Ok(Self { spec, points, status })
    }

    /// Builds a trajectory from bare states, computing every record with the
    /// velocity of `spec`. Used for synthetic inputs and rescaled copies.
    pub fn from_states(spec: FlowSpec, states: Vec<(f64, FlowState)>, status: TerminationStatus) -> Result<Self> {
        let mut points: Vec<TrajectoryPoint> = Vec::with_capacity(states.len());
        for (t, state) in states {
            state.matches(&spec)?;
            let ev = evaluate_state(&state, &spec, true)?;
            let mut rec = ev.record.expect("record requested");
            rec.t = t;
            rec.accumulate(points.last().map(|p| &p.record));
            points.push(TrajectoryPoint { t, state, record: rec });
        }
        Self::new(spec, points, status)
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn records(&self) -> impl Iterator<Item = &DiagnosticsRecord> {
        self.points.iter().map(|p| &p.record)
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn status(&self) -> TerminationStatus {
        self.status
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("nonempty")
    }

    /// Mutable access for fault-injection studies; records are not refreshed.
    pub fn points_mut(&mut self) -> &mut [TrajectoryPoint] {
        &mut self.points
    }

    /// State at time `t`, by cubic Lagrange interpolation on the stored states.
    pub fn state_at(&self, t: f64) -> Result<FlowState> {
        let (t0, t1) = (self.first().t, self.last().t);
        if !(t >= t0 && t <= t1) {
            return Err(FocfError::RangeEmpty(format!("t = {t} outside [{t0}, {t1}]")));
        }
        if let Some(p) = self.points.iter().find(|p| p.t == t) {
            return Ok(p.state.clone());
        }
        let times = self.times();
        let idx = stencil(&times, t);
        let flats: Vec<Vec<f64>> = idx.iter().map(|&i| self.points[i].state.to_flat()).collect();
        let w = lagrange_weights(&idx.iter().map(|&i| times[i]).collect::<Vec<_>>(), t);
        let mut out = vec![0.0; flats[0].len()];
        for (f, wi) in flats.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(f) {
                *o += wi * v;
            }
        }
        self.points[idx[0]].state.with_flat(&out)
    }
}

/// Indices of the (up to) four stored times bracketing `t`.
fn stencil(times: &[f64], t: f64) -> Vec<usize> {
    let n = times.len();
    if n <= 4 {
        return (0..n).collect();
    }
    let i = times.partition_point(|&s| s <= t).saturating_sub(1).min(n - 2);
    let start = i.saturating_sub(1).min(n - 4);
    (start..start + 4).collect()
}

fn lagrange_weights(nodes: &[f64], t: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &tj)| (t - tj) / (nodes[i] - tj))
                .product()
        })
        .collect()
}

/// Velocity of a state and, on request, its diagnostics record (with `t = 0`
/// and running fields equal to the instantaneous ones).
#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub velocity: Vec<f64>,
    pub grad_f_l2: f64,
    pub grad_ftilde_l2: f64,
    pub record: Option<DiagnosticsRecord>,
}

pub(crate) fn evaluate_state(state: &FlowState, spec: &FlowSpec, with_record: bool) -> Result<Evaluated> {
    let p = &spec.integrator;
    match state {
        FlowState::Metric(g) => {
            let ev = evaluate_metric(g, spec.kind, p.dealias)?;
            if !ev.velocity.is_finite() {
                return Err(FocfError::NonFinite("velocity"));
            }
            let velocity = TensorFlat::from_tensor(&ev.velocity);
            let (gf, gft) = grad_norms(g, &ev.grad, ev.energy, ev.volume)?;
            let record = if with_record {
                Some(metric_record(g, ev.bundle, ev.energy, gf, gft, &ev.velocity, p)?)
            } else {
                None
            };
            Ok(Evaluated { velocity, grad_f_l2: gf, grad_ftilde_l2: gft, record })
        }
        FlowState::Potential(phi) => {
            let mut v = calabi_velocity(phi)?;
            if p.dealias {
                v = spectral::dealias(&phi.chart, &v);
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FocfError::NonFinite("velocity"));
            }
            if !with_record {
                return Ok(Evaluated { velocity: v, grad_f_l2: f64::NAN, grad_ftilde_l2: f64::NAN, record: None });
            }
            let g = phi.metric()?;
            let ev = evaluate_metric(&g, FlowKind::L2Flow, false)?;
            let (gf, gft) = grad_norms(&g, &ev.grad, ev.energy, ev.volume)?;
            let mv = calabi_metric_velocity(&phi.chart, &v);
            let mut rec = metric_record(&g, ev.bundle, ev.energy, gf, gft, &mv, p)?;
            let wts = g.volume_weights();
            rec.calabi_l2 = Some(
                {
                    let h = phi.conformal_factor()?;
                    let s = crate::functionals::conformal_scalar_curvature(&phi.chart, &h);
                    s.iter().zip(&wts).map(|(a, w)| a * a * w).sum::<f64>()
                }
                .sqrt(),
            );
            Ok(Evaluated { velocity: v, grad_f_l2: gf, grad_ftilde_l2: gft, record: Some(rec) })
        }
        FlowState::Homogeneous(h) => {
            let v = homogeneous_velocity(h, spec.kind == FlowKind::VolumeNormalizedL2);
            let (gf, gft) = homogeneous_grad_norms(h);
            let record = if with_record { Some(homogeneous_record(h, gf, gft, &v)) } else { None };
            Ok(Evaluated { velocity: v, grad_f_l2: gf, grad_ftilde_l2: gft, record })
        }
    }
}

/// Flattening of a symmetric velocity tensor into `[v11 | v12 | v22]`.
struct TensorFlat;

impl TensorFlat {
    fn from_tensor(t: &TensorField) -> Vec<f64> {
        let n = t.chart.len();
        let mut v = Vec::with_capacity(3 * n);
        v.extend_from_slice(&t.data[0]);
        v.extend((0..n).map(|k| 0.5 * (t.data[1][k] + t.data[2][k])));
        v.extend_from_slice(&t.data[3]);
        v
    }

    fn to_tensor(chart: Grid2Chart, v: &[f64]) -> TensorField {
        let n = chart.len();
        TensorField {
            chart,
            valence: 2,
            data: vec![v[..n].to_vec(), v[n..2 * n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec()],
        }
    }
}

/// `‖grad F‖` and `‖grad F̃‖` with `grad F̃ = V^α (grad F + ((4−n)/(2n)) (F/V) g)`, `n = 2`.
fn grad_norms(g: &MetricField2, grad: &TensorField, f: f64, vol: f64) -> Result<(f64, f64)> {
    let inv = g.inverse()?;
    let gf = integrate(&norm_sq_with(grad, &inv), g)?.max(0.0).sqrt();
    let n = 2;
    let alpha = (4.0 - n as f64) / n as f64;
    let gt = grad.add_scaled(&g.as_tensor(), -normalization_coefficient(n) * f / vol)?;
    let gft = vol.powf(alpha) * integrate(&norm_sq_with(&gt, &inv), g)?.max(0.0).sqrt();
    Ok((gf, gft))
}

fn homogeneous_grad_norms(h: &HomogeneousMetric) -> (f64, f64) {
    let v = homogeneous_grad(h);
    let n = h.dimension();
    let (f, vol) = (h.energy(), h.volume());
    let c = h.coeffs();
    let coef = -normalization_coefficient(n) * f / vol;
    let vt: Vec<f64> = v.iter().zip(&c).map(|(a, ci)| a + coef * ci).collect();
    let alpha = (4.0 - n as f64) / n as f64;
    (homogeneous_norm(h, &v), vol.powf(alpha) * homogeneous_norm(h, &vt))
}

fn metric_record(
    g: &MetricField2,
    bundle: crate::curvature::CurvatureBundle,
    f: f64,
    gf: f64,
    gft: f64,
    velocity: &TensorField,
    p: &IntegratorParams,
) -> Result<DiagnosticsRecord> {
    let vol = g.volume();
    let inv = &bundle.inv;
    let norms = rm_derivative_norms_sq(&bundle, g, p.monitor_depth)?;
    let deriv: Vec<f64> = norms.iter().map(|q| sup(q).sqrt()).collect();
    let fm = if norms.len() > 1 { f_m_from_norms(&norms).1 } else { 0.0 };
    let speed = norm_sq_with(velocity, inv);
    let dv = covariant_derivative(velocity, g, &bundle.gamma)?;
    let dtg_grad = sup(&norm_sq_with(&dv, inv)).sqrt();
    let systole = if p.record_systole { systole_proxy_sampled(g, p.systole_samples) } else { f64::NAN };
    let mut rec = DiagnosticsRecord::blank(p.monitor_depth);
    rec.f = f;
    rec.vol = vol;
    rec.ftilde = crate::functionals::ftilde_from(f, vol, 2)?;
    rec.sup_rm = deriv[0];
    rec.sup_deriv_rm = deriv;
    rec.fm_sup = fm;
    rec.grad_f_l2 = gf;
    rec.grad_ftilde_l2 = gft;
    rec.speed_l2 = integrate(&speed, g)?.max(0.0).sqrt();
    rec.dtg_sup = sup(&speed).sqrt();
    rec.dtg_grad_sup = Some(dtg_grad);
    rec.systole_proxy = systole;
    rec.finish_instant();
    Ok(rec)
}

fn homogeneous_record(h: &HomogeneousMetric, gf: f64, gft: f64, v: &[f64]) -> DiagnosticsRecord {
    let (f, vol) = (h.energy(), h.volume());
    let c = h.coeffs();
    let mut rec = DiagnosticsRecord::blank(0);
    rec.f = f;
    rec.vol = vol;
    rec.ftilde = vol.powf((4.0 - h.dimension() as f64) / h.dimension() as f64) * f;
    rec.sup_rm = h.norm_rm_sq().max(0.0).sqrt();
    rec.sup_deriv_rm = vec![rec.sup_rm];
    rec.grad_f_l2 = gf;
    rec.grad_ftilde_l2 = gft;
    rec.speed_l2 = homogeneous_norm(h, v);
    rec.dtg_sup = h.block_dims().iter().zip(c.iter().zip(v)).map(|(d, (ci, vi))| d * (vi / ci).powi(2)).sum::<f64>().sqrt();
    rec.dtg_grad_sup = match h {
        HomogeneousMetric::ProductSpheres(_) => Some(0.0),
        HomogeneousMetric::Milnor(_) => None,
    };
    rec.systole_proxy = h.systole_proxy();
    rec.finish_instant();
    rec
}

/// Principal-symbol coefficient for the implicit part.
fn stiffness(state: &FlowState) -> Result<f64> {
    Ok(match state {
        FlowState::Metric(g) => {
            let l = g.inverse()?.max_eigenvalue();
            2.0 * l * l
        }
        FlowState::Potential(p) => p.conformal_factor()?.iter().fold(0.0f64, |m, h| m.max(1.0 / (h * h))),
        FlowState::Homogeneous(_) => 0.0,
    })
}

/// Substep counts of the extrapolation sequence.
const SEQUENCE: [usize; 3] = [1, 2, 3];

/// `(1 + s c Δ₀²)^{-1}` applied plane by plane.
fn implicit_solve(chart: &Grid2Chart, y: &[f64], s: f64, c: f64) -> Vec<f64> {
    let n = chart.len();
    let mut out = Vec::with_capacity(y.len());
    for p in y.chunks(n) {
        out.extend(spectral::apply_symbol(chart, p, |a, b| {
            let q = a * a + b * b;
            1.0 / (1.0 + s * c * q * q)
        }));
    }
    out
}

/// Outcome of one attempted step.
struct Attempt {
    state: FlowState,
    /// Velocity and record inputs of the new state.
    eval: Evaluated,
    err: f64,
    /// `∫‖grad F‖² dt` and `∫ Vol^{−α}‖grad F̃‖² dt`, extrapolated alongside the state.
    dissipation: (f64, f64),
}

fn rates(e: &Evaluated, state: &FlowState, alpha: f64) -> (f64, f64) {
    let vol = match state {
        FlowState::Metric(g) => g.volume(),
        _ => 1.0,
    };
    (e.grad_f_l2 * e.grad_f_l2, e.grad_ftilde_l2 * e.grad_ftilde_l2 / vol.powf(alpha))
}

/// Linearly implicit Euler substeps `y ← y + s (1 + s c Δ₀²)^{-1} V(y)`,
/// extrapolated over the substep counts 1, 2, 3 to third order. The
/// dissipation integrals ride along as extra explicit components.
fn attempt(state: &FlowState, first: &Evaluated, h: f64, c: f64, spec: &FlowSpec, record: bool) -> Result<Attempt> {
    let chart = state.chart().expect("grid state");
    let alpha = (4.0 - spec.dimension as f64) / spec.dimension as f64;
    let y0 = state.to_flat();
    let r0 = rates(first, state, alpha);
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(3);
    for &n in &SEQUENCE {
        let s = h / n as f64;
        let mut y = y0.clone();
        let (mut q0, mut q1) = (s * r0.0, s * r0.1);
        let mut v = implicit_solve(&chart, &first.velocity, s, c);
        for k in 0..n {
            for (yi, vi) in y.iter_mut().zip(&v) {
                *yi += s * vi;
            }
            if k + 1 < n {
                let st = state.with_flat(&y)?;
                let e = evaluate_state(&st, spec, false)?;
                let r = rates(&e, &st, alpha);
                q0 += s * r.0;
                q1 += s * r.1;
                v = implicit_solve(&chart, &e.velocity, s, c);
            }
        }
        y.push(q0);
        y.push(q1);
        table.push(y);
    }
    let lerp = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + w * (x - y)).collect() };
    let t22 = lerp(&table[1], &table[0], 1.0);
    let t32 = lerp(&table[2], &table[1], 2.0);
    let t33 = lerp(&t32, &t22, 0.5);
    let m = y0.len();
    let gap: Vec<f64> = t33[..m].iter().zip(&t32[..m]).map(|(a, b)| a - b).collect();
    let err = implicit_solve(&chart, &gap, h, c).iter().fold(0.0f64, |e, d| e.max(d.abs()));
    let dissipation = (t33[m], t33[m + 1]);
    let state = state.with_flat(&t33[..m])?;
    let eval = evaluate_state(&state, spec, record)?;
    Ok(Attempt { state, eval, err, dissipation })
}

/// One step of size `dt` (grid kinds: a single extrapolated step without
/// error control; homogeneous kinds: adaptive DOPRI5 across `[0, dt]`).
pub fn step(state: &FlowState, dt: f64, spec: &FlowSpec) -> Result<FlowState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FocfError::StepRejected(format!("dt = {dt}")));
    }
    state.matches(spec)?;
    match state {
        FlowState::Homogeneous(h) => {
            let y = homogeneous_solve(h, spec, dt, |_| true)?;
            state.with_flat(&y.last().map(|s| s.y.clone()).unwrap_or_else(|| h.coeffs()))
        }
        _ => {
            let first = evaluate_state(state, spec, false)?;
            let c = stiffness(state)?;
            attempt(state, &first, dt, c, spec, false)
                .map(|a| a.state)
                .map_err(|e| FocfError::StepRejected(e.to_string()))
        }
    }
}

fn homogeneous_solve(
    h: &HomogeneousMetric,
    spec: &FlowSpec,
    t_end: f64,
    accept: impl FnMut(&crate::ode::OdeStep) -> bool,
) -> Result<Vec<crate::ode::OdeStep>> {
    let p = &spec.integrator;
    let normalized = spec.kind == FlowKind::VolumeNormalizedL2;
    let proto = *h;
    let f = move |y: &[f64]| -> Result<Vec<f64>> {
        let m = proto.with_coeffs(y)?;
        let v = homogeneous_velocity(&m, normalized);
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(FocfError::NonFinite("velocity"))
        }
    };
    let opts = Dopri5Options {
        rtol: 0.01 * p.tol,
        atol: 0.01 * p.tol,
        h0: p.dt0,
        h_min: p.dt_min,
        h_max: if p.dt_max > 0.0 { p.dt_max } else { t_end / 50.0 },
        max_steps: p.max_steps,
    };
    dopri5(f, 0.0, &h.coeffs(), t_end, &opts, accept)
}

/// Integrates from `t = 0` to `t_end`, recording diagnostics at every
/// accepted step. Step failures end the run with a termination status.
pub fn run(initial: &FlowState, spec: &FlowSpec, t_end: f64) -> Result<FlowTrajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(FocfError::RangeEmpty(format!("[0, {t_end}]")));
    }
    initial.matches(spec)?;
    match initial {
        FlowState::Homogeneous(h) => run_homogeneous(h, spec, t_end),
        _ => run_grid(initial, spec, t_end),
    }
}

fn run_grid(initial: &FlowState, spec: &FlowSpec, t_end: f64) -> Result<FlowTrajectory> {
    let p = &spec.integrator;
    let dt_max = if p.dt_max > 0.0 { p.dt_max } else { t_end / 50.0 };
    let mut current = evaluate_state(initial, spec, true)?;
    let mut rec0 = current.record.take().expect("record");
    rec0.accumulate(None);
    let mut points = vec![TrajectoryPoint { t: 0.0, state: initial.clone(), record: rec0 }];
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut dt = p.dt0.min(dt_max);
    let mut c = stiffness(&state)?;
    let mut steps = 0usize;
    let status = loop {
        if t >= t_end * (1.0 - 1e-14) {
            break TerminationStatus::Completed;
        }
        if steps >= p.max_steps {
            break TerminationStatus::StepCollapse;
        }
        steps += 1;
        let h = dt.min(t_end - t).min(dt_max);
        match attempt(&state, &current, h, c, spec, true) {
            Ok(a) if a.err <= p.tol => {
                t = if t_end - (t + h) < 1e-14 * t_end { t_end } else { t + h };
                let mut ev = a.eval;
                let mut rec = ev.record.take().expect("record");
                rec.t = t;
                rec.dt = h;
                rec.err_estimate = a.err;
                if a.dissipation.0.is_finite() {
                    rec.step_dissipation = Some(a.dissipation.0);
                    rec.step_dissipation_tilde = Some(a.dissipation.1);
                }
                rec.accumulate(points.last().map(|q| &q.record));
                let capped = rec.sup_rm > p.curvature_cap;
                points.push(TrajectoryPoint { t, state: a.state.clone(), record: rec });
                state = a.state;
                current = ev;
                let fac = if a.err == 0.0 { 5.0 } else { (0.9 * (p.tol / a.err).powf(1.0 / 3.0)).clamp(0.2, 5.0) };
                dt = (h * fac).min(dt_max);
                let c_new = stiffness(&state)?;
                if c_new > 2.0 * c || c_new < 0.5 * c {
                    c = c_new;
                }
                if capped {
                    break TerminationStatus::SingularityCandidate;
                }
            }
            Ok(a) => {
                dt = h * (0.9 * (p.tol / a.err).powf(1.0 / 3.0)).clamp(0.2, 1.0);
                if dt < p.dt_min {
                    break TerminationStatus::SingularityCandidate;
                }
            }
            Err(e) => {
                log::debug!("step of {h:e} at t = {t} failed: {e}");
                dt = 0.25 * h;
                if dt < p.dt_min {
                    break match e {
                        FocfError::PotentialDegenerate(..) => TerminationStatus::PotentialDegenerate,
                        _ => TerminationStatus::SingularityCandidate,
                    };
                }
            }
        }
    };
    FlowTrajectory::new(spec.clone(), points, status)
}

fn run_homogeneous(h: &HomogeneousMetric, spec: &FlowSpec, t_end: f64) -> Result<FlowTrajectory> {
    let first = evaluate_state(&FlowState::Homogeneous(*h), spec, true)?;
    let mut rec0 = first.record.expect("record");
    rec0.accumulate(None);
    let mut points = vec![TrajectoryPoint { t: 0.0, state: FlowState::Homogeneous(*h), record: rec0 }];
    let cap = spec.integrator.curvature_cap;
    let mut failure: Option<FocfError> = None;
    let mut capped = false;
    let res = homogeneous_solve(h, spec, t_end, |s| {
        let built = h.with_coeffs(&s.y).and_then(|m| {
            let st = FlowState::Homogeneous(m);
            evaluate_state(&st, spec, true).map(|ev| (st, ev))
        });
        match built {
            Ok((st, ev)) => {
                let mut rec = ev.record.expect("record");
                rec.t = s.t;
                rec.dt = s.t - points.last().map(|q| q.t).unwrap_or(0.0);
                rec.err_estimate = s.err;
                rec.accumulate(points.last().map(|q| &q.record));
                capped = rec.sup_rm > cap;
                points.push(TrajectoryPoint { t: s.t, state: st, record: rec });
                !capped
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    });
    let status = match (res, failure, capped) {
        (Ok(_), None, false) => TerminationStatus::Completed,
        (Err(FocfError::StepRejected(msg)), None, false) if msg.contains("budget") => TerminationStatus::StepCollapse,
        _ => TerminationStatus::SingularityCandidate,
    };
    let mut traj = FlowTrajectory::new(spec.clone(), points, status)?;
    fill_homogeneous_midpoints(&mut traj)?;
    Ok(traj)
}

/// Per-step dissipation integrals by Simpson's rule, with the midpoint
/// state from cubic interpolation of the coefficients.
fn fill_homogeneous_midpoints(traj: &mut FlowTrajectory) -> Result<()> {
    let times = traj.times();
    let n = traj.spec.dimension as f64;
    let alpha = (4.0 - n) / n;
    let rate = |m: &HomogeneousMetric| {
        let (a, b) = homogeneous_grad_norms(m);
        (a * a, b * b / m.volume().powf(alpha))
    };
    let at = |st: &FlowState| match st {
        FlowState::Homogeneous(m) => Some(rate(m)),
        _ => None,
    };
    let mut out = Vec::with_capacity(times.len());
    for (i, w) in times.windows(2).enumerate() {
        let mid = traj.state_at(0.5 * (w[0] + w[1])).ok();
        let (a, m, b) = (at(&traj.points[i].state), mid.as_ref().and_then(at), at(&traj.points[i + 1].state));
        out.push(match (a, m, b) {
            (Some(a), Some(m), Some(b)) => {
                let h = w[1] - w[0];
                Some((h / 6.0 * (a.0 + 4.0 * m.0 + b.0), h / 6.0 * (a.1 + 4.0 * m.1 + b.1)))
            }
            _ => None,
        });
    }
    for (p, d) in traj.points.iter_mut().skip(1).zip(out) {
        p.record.step_dissipation = d.map(|x| x.0);
        p.record.step_dissipation_tilde = d.map(|x| x.1);
    }
    Ok(())
}

/// Norm in which residuals are measured: `L²(g)` for metric velocities,
/// `L²(dV)` for potential velocities, the family inner product otherwise.
fn velocity_norm(state: &FlowState, v: &[f64]) -> Result<f64> {
    Ok(match state {
        FlowState::Metric(g) => {
            let t = TensorFlat::to_tensor(g.chart, v);
            integrate(&norm_sq_with(&t, &g.inverse()?), g)?.max(0.0).sqrt()
        }
        FlowState::Potential(p) => {
            let g = p.metric()?;
            let w = g.volume_weights();
            v.iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>().sqrt()
        }
        FlowState::Homogeneous(h) => homogeneous_norm(h, v),
    })
}

/// Relative residual per interval:
/// `‖(y(t+dt) − y(t))/dt − V(y(t + dt/2))‖ / ‖V(y(t + dt/2))‖`, with the
/// midpoint state from cubic interpolation. Both norms below `1e−10` give 0.
pub fn flow_residual(traj: &FlowTrajectory) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Err(FocfError::RangeEmpty("flow_residual needs two states".into()));
    }
    let pts = traj.points();
    let mut out = Vec::with_capacity(pts.len() - 1);
    for w in pts.windows(2) {
        let dt = w[1].t - w[0].t;
        let mid = traj.state_at(w[0].t + 0.5 * dt)?;
        let v = evaluate_state(&mid, &traj.spec, false)?.velocity;
        let (a, b) = (w[0].state.to_flat(), w[1].state.to_flat());
        let diff: Vec<f64> = a.iter().zip(&b).zip(&v).map(|((x, y), vm)| (y - x) / dt - vm).collect();
        let r = velocity_norm(&mid, &diff)?;
        let s = velocity_norm(&mid, &v)?;
        out.push(if r < 1e-10 && s < 1e-10 { 0.0 } else { r / s.max(1e-300) });
    }
    Ok(out)
}

/// Writes [`flow_residual`] into the records (`residual` of the interval's end state).
pub fn attach_residuals(traj: &mut FlowTrajectory) -> Result<Vec<f64>> {
    let r = flow_residual(traj)?;
    traj.points[0].record.residual = 0.0;
    for (p, v) in traj.points.iter_mut().skip(1).zip(&r) {
        p.record.residual = *v;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub lambda: f64,
    pub t0: f64,
}

/// `g̃(t) = λ g(t0 + t/λ²)` on `[−t0 λ², (T − t0) λ²]`; every stored state
/// maps to one rescaled state and `t0` is inserted by interpolation if needed.
pub fn parabolic_rescale(traj: &FlowTrajectory, p: RescaleParams) -> Result<FlowTrajectory> {
    if !(p.lambda > 0.0) || !p.lambda.is_finite() {
        return Err(FocfError::Invalid(format!("lambda = {}", p.lambda)));
    }
    let (ta, tb) = (traj.first().t, traj.last().t);
    if !(p.t0 >= ta && p.t0 <= tb) || traj.len() < 2 {
        return Err(FocfError::RangeEmpty(format!("t0 = {} outside [{ta}, {tb}]", p.t0)));
    }
    let l2 = p.lambda * p.lambda;
    let mut states = Vec::with_capacity(traj.len() + 1);
    let mut inserted = traj.points().iter().any(|q| q.t == p.t0);
    for q in traj.points() {
        if !inserted && q.t > p.t0 {
            states.push((0.0, traj.state_at(p.t0)?.scaled(p.lambda)?));
            inserted = true;
        }
        states.push((l2 * (q.t - p.t0), q.state.scaled(p.lambda)?));
    }
    FlowTrajectory::from_states(traj.spec.clone(), states, traj.status)
}

/// Maps an unnormalized trajectory to the volume-normalized flow by
/// `g̃ = c g`, `dt̃ = c² dt`, `c = (Vol(g₀)/Vol(g(t)))^{2/n}`.
pub fn normalization_correspondence(traj: &FlowTrajectory) -> Result<FlowTrajectory> {
    if traj.spec.kind != FlowKind::L2Flow {
        return Err(FocfError::Invalid("correspondence starts from an unnormalized trajectory".into()));
    }
    let mut spec = traj.spec.clone();
    spec.kind = FlowKind::VolumeNormalizedL2;
    let n = spec.dimension;
    if n == 4 {
        let mut out = traj.clone();
        out.spec = spec;
        return Ok(out);
    }
    let times = traj.times();
    let vols: Vec<f64> = traj.records().map(|r| r.vol).collect();
    if vols.iter().any(|v| !(*v > 0.0)) {
        return Err(FocfError::VolumeNonPositive);
    }
    let c: Vec<f64> = vols.iter().map(|v| (vols[0] / v).powf(2.0 / n as f64)).collect();
    let c2: Vec<f64> = c.iter().map(|x| x * x).collect();
    // Two-point Gauss–Legendre on the cubic interpolant of c² is exact per interval.
    let gl = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut tt = vec![0.0];
    for i in 0..times.len() - 1 {
        let (a, b) = (times[i], times[i + 1]);
        let mut acc = 0.0;
        for x in gl {
            let s = a + x * (b - a);
            let idx = stencil(&times, s);
            let w = lagrange_weights(&idx.iter().map(|&k| times[k]).collect::<Vec<_>>(), s);
            acc += 0.5 * (b - a) * idx.iter().zip(&w).map(|(&k, wk)| wk * c2[k]).sum::<f64>();
        }
        tt.push(tt[i] + acc);
    }
    let states = traj
        .points()
        .iter()
        .zip(tt.iter().zip(&c))
        .map(|(q, (t, ci))| Ok((*t, q.state.scaled(*ci)?)))
        .collect::<Result<Vec<_>>>()?;
    FlowTrajectory::from_states(spec, states, traj.status)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneous::ProductSphereMetric;

    fn torus(n: usize) -> Grid2Chart {
        Grid2Chart::square(2.0 * std::f64::consts::PI, n).unwrap()
    }

    fn bumpy(n: usize, amp: f64) -> MetricField2 {
        let c = torus(n);
        let u = c.sample(|x, y| amp * (x.cos() + 0.5 * (2.0 * y).sin() * x.sin()));
        MetricField2::conformal(c, &u).unwrap()
    }

    /// Explicit RK4 with substeps of at most `1e-4`.
    fn rk4(s: &FlowState, spec: &FlowSpec, t: f64) -> Vec<f64> {
        let n = (t / 1e-4).ceil() as usize;
        let h = t / n as f64;
        let f = |y: &[f64]| evaluate_state(&s.with_flat(y).unwrap(), spec, false).unwrap().velocity;
        let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(u, v)| u + a * v).collect() };
        let mut y = s.to_flat();
        for _ in 0..n {
            let k1 = f(&y);
            let k2 = f(&axpy(&y, &k1, 0.5 * h));
            let k3 = f(&axpy(&y, &k2, 0.5 * h));
            let k4 = f(&axpy(&y, &k3, h));
            for i in 0..y.len() {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn one_step_defect_shrinks_with_dt() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap();
        let s = FlowState::Metric(bumpy(12, 0.05));
        let chart = torus(12);
        let c = stiffness(&s).unwrap();
        let local = |h: f64| {
            let one = step(&s, h, &spec).unwrap().to_flat();
            let gap: Vec<f64> = one.iter().zip(rk4(&s, &spec, h)).map(|(a, b)| a - b).collect();
            implicit_solve(&chart, &gap, 8e-3, c).iter().fold(0.0f64, |m, d| m.max(d.abs()))
        };
        let e: Vec<f64> = [8e-3, 4e-3, 2e-3, 1e-3].iter().map(|h| local(*h)).collect();
        for w in e.windows(2) {
            assert!(w[0] / w[1] > 3.5, "{e:?}");
        }
    }

    #[test]
    fn flat_state_is_stationary() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap();
        let s = FlowState::Metric(MetricField2::flat(torus(16)));
        let out = step(&s, 0.37, &spec).unwrap();
        let d = s.to_flat().iter().zip(out.to_flat()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-12, "{d}");
    }

    #[test]
    fn interpolation_reproduces_cubics() {
        let w = lagrange_weights(&[0.0, 0.3, 0.7, 1.0], 0.5);
        let val: f64 = [0.0f64, 0.3, 0.7, 1.0].iter().zip(&w).map(|(t, wi)| wi * t.powi(3)).sum();
        assert!((val - 0.125).abs() < 1e-14);
        assert_eq!(stencil(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2.5), vec![1, 2, 3, 4]);
        assert_eq!(stencil(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 4.9), vec![2, 3, 4, 5]);
        assert_eq!(stencil(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 0.1), vec![0, 1, 2, 3]);
    }

    #[test]
    fn rescaled_curvature_divides_by_lambda() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::TorusGrid).unwrap();
        let g = bumpy(16, 0.05);
        let traj = FlowTrajectory::from_states(
            spec,
            vec![(0.0, FlowState::Metric(g.clone())), (0.1, FlowState::Metric(g))],
            TerminationStatus::Completed,
        )
        .unwrap();
        let r = parabolic_rescale(&traj, RescaleParams { lambda: 2.0, t0: 0.0 }).unwrap();
        let a = traj.first().record.sup_rm;
        let b = r.first().record.sup_rm;
        assert!((b - a / 2.0).abs() < 1e-12 * a);
        assert!((r.last().t - 0.4).abs() < 1e-15);
    }

    #[test]
    fn product_spheres_volume_is_conserved() {
        let spec = FlowSpec::new(FlowKind::L2Flow, GeometryKind::ProductSpheres).unwrap();
        let s = FlowState::Homogeneous(HomogeneousMetric::ProductSpheres(ProductSphereMetric::new(1.0, 4.0).unwrap()));
        let traj = run(&s, &spec, 1.0).unwrap();
        assert_eq!(traj.status(), TerminationStatus::Completed);
        let v0 = traj.first().record.vol;
        assert!(traj.records().all(|r| (r.vol - v0).abs() <= 1e-8 * v0));
    }

    #[test]
    fn state_mismatch_is_rejected() {
        let spec = FlowSpec::new(FlowKind::SurfaceCalabi, GeometryKind::TorusGrid).unwrap();
        let s = FlowState::Metric(MetricField2::flat(torus(8)));
        assert!(matches!(run(&s, &spec, 1.0), Err(FocfError::Invalid(_))));
    }
}
