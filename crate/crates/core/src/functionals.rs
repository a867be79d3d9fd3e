//! Curvature energy, its L² gradient, flow velocities and the surface
//! Calabi flow in potential form.

use crate::curvature::{covariant_derivative, rcheck, riemann, CurvatureBundle};
use crate::error::{FocfError, Result};
use crate::flow::IntegratorParams;
use crate::grid::Grid2Chart;
use crate::spectral;
use crate::tensor::{integrate, MetricField2, TensorField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    L2Flow,
    VolumeNormalizedL2,
    SurfaceCalabi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryKind {
    TorusGrid,
    ProductSpheres,
    MilnorFrame,
}

impl GeometryKind {
    pub fn dimension(self) -> usize {
        match self {
            GeometryKind::TorusGrid => 2,
            GeometryKind::ProductSpheres => 4,
            GeometryKind::MilnorFrame => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub kind: FlowKind,
    pub geometry: GeometryKind,
    pub dimension: usize,
    pub integrator: IntegratorParams,
}

impl FlowSpec {
    pub fn new(kind: FlowKind, geometry: GeometryKind) -> Result<Self> {
        Self::with_params(kind, geometry, IntegratorParams::default())
    }

    pub fn with_params(kind: FlowKind, geometry: GeometryKind, integrator: IntegratorParams) -> Result<Self> {
        if kind == FlowKind::SurfaceCalabi && geometry != GeometryKind::TorusGrid {
            return Err(FocfError::Invalid("SurfaceCalabi requires the torus grid".into()));
        }
        Ok(Self { kind, geometry, dimension: geometry.dimension(), integrator })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.integrator.tol = tol;
        self
    }
}

/// Volume-normalization coefficient `(n − 4) / (2n)`.
pub fn normalization_coefficient(n: usize) -> f64 {
    (n as f64 - 4.0) / (2.0 * n as f64)
}

/// `F̃ = Vol^{(4−n)/n} F`.
pub fn ftilde_from(f: f64, vol: f64, n: usize) -> Result<f64> {
    if !(vol > 0.0) {
        return Err(FocfError::VolumeNonPositive);
    }
    Ok(vol.powf((4.0 - n as f64) / n as f64) * f)
}

/// `F(g) = ½ ∫ |Rm|^2 dV`.
pub fn energy_f(g: &MetricField2) -> Result<f64> {
    let b = riemann(g)?;
    Ok(0.5 * integrate(&b.norm_rm_sq, g)?)
}

pub fn energy_ftilde(g: &MetricField2, n: usize) -> Result<f64> {
    ftilde_from(energy_f(g)?, g.volume(), n)
}

/// The three terms of `grad F = δdRc − Ř + ¼|Rm|² g`, kept apart so that
/// conventions can be probed individually.
#[derive(Debug, Clone)]
pub struct GradFParts {
    pub delta_d_rc: TensorField,
    pub rcheck: TensorField,
    pub quarter_norm_g: TensorField,
}

impl GradFParts {
    /// `sign * δdRc − Ř + ¼|Rm|² g`, symmetrized; `sign = 1` is the gradient.
    pub fn assemble(&self, delta_sign: f64) -> TensorField {
        self.delta_d_rc
            .scale(delta_sign)
            .add_scaled(&self.rcheck, -1.0)
            .and_then(|t| t.add_scaled(&self.quarter_norm_g, 1.0))
            .expect("same chart")
            .symmetrize(0, 1)
    }
}

/// `δ` adjoint to `d` in the full-sum tensor norm: `(δω)_{ij} = −2 g^{kl} ∇_k ω_{lij}`.
pub const DELTA_FACTOR: f64 = 2.0;

pub fn grad_f_parts(g: &MetricField2, b: &CurvatureBundle) -> Result<GradFParts> {
    let c = g.chart;
    let n = c.len();
    let nrc = covariant_derivative(&b.rc, g, &b.gamma)?;
    let d_rc = nrc.add_scaled(&nrc.transpose(0, 1), -1.0)?;
    let nd = covariant_derivative(&d_rc, g, &b.gamma)?;
    let mut delta = TensorField::zeros(c, 2);
    for (ij, out) in delta.data.iter_mut().enumerate() {
        for a in 0..2 {
            for k in 0..2 {
                let src = &nd.data[(((a << 1) | k) << 2) | ij];
                for p in 0..n {
                    out[p] -= DELTA_FACTOR * b.inv.get(a, k, p) * src[p];
                }
            }
        }
    }
    let rch = match &b.rcheck {
        Some(r) => r.clone(),
        None => rcheck(b, g)?,
    };
    let gt = g.as_tensor();
    let mut qg = gt.clone();
    for plane in qg.data.iter_mut() {
        for (v, q) in plane.iter_mut().zip(&b.norm_rm_sq) {
            *v *= 0.25 * q;
        }
    }
    Ok(GradFParts { delta_d_rc: delta, rcheck: rch, quarter_norm_g: qg })
}

/// `grad F` of a grid metric.
pub fn grad_f(g: &MetricField2) -> Result<TensorField> {
    let b = riemann(g)?;
    Ok(grad_f_parts(g, &b)?.assemble(1.0))
}

/// Everything a flow step or a diagnostics row needs from one metric.
#[derive(Debug, Clone)]
pub struct MetricEvaluation {
    pub bundle: CurvatureBundle,
    pub grad: TensorField,
    pub energy: f64,
    pub volume: f64,
    pub velocity: TensorField,
}

pub fn evaluate_metric(g: &MetricField2, kind: FlowKind, dealias: bool) -> Result<MetricEvaluation> {
    let bundle = riemann(g)?;
    let grad = grad_f_parts(g, &bundle)?.assemble(1.0);
    let energy = 0.5 * integrate(&bundle.norm_rm_sq, g)?;
    let volume = g.volume();
    let mut velocity = match kind {
        FlowKind::L2Flow => grad.scale(-1.0),
        FlowKind::VolumeNormalizedL2 => {
            let coef = normalization_coefficient(2) * energy / volume;
            grad.scale(-1.0).add_scaled(&g.as_tensor(), coef)?
        }
        FlowKind::SurfaceCalabi => {
            return Err(FocfError::Invalid("Calabi flow evolves a potential, not a metric".into()))
        }
    };
    if dealias {
        velocity = velocity.dealiased();
    }
    Ok(MetricEvaluation { bundle, grad, energy, volume, velocity })
}

/// `∂g/∂t` for the grid flow kinds.
pub fn flow_velocity(g: &MetricField2, spec: &FlowSpec) -> Result<TensorField> {
    Ok(evaluate_metric(g, spec.kind, false)?.velocity)
}

/// Kähler potential on a flat torus with background `b δ`; the metric is
/// `h δ` with `h = b + ½Δ₀φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalabiPotential {
    pub chart: Grid2Chart,
    pub background: f64,
    pub phi: Vec<f64>,
}

impl CalabiPotential {
    pub fn new(chart: Grid2Chart, phi: Vec<f64>) -> Result<Self> {
        Self::with_background(chart, 1.0, phi)
    }

    pub fn with_background(chart: Grid2Chart, background: f64, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != chart.len() {
            return Err(FocfError::ChartMismatch);
        }
        if phi.iter().any(|v| !v.is_finite()) || !(background > 0.0) {
            return Err(FocfError::NonFinite("potential"));
        }
        let p = Self { chart, background, phi };
        p.conformal_factor()?;
        Ok(p)
    }

    pub fn zero(chart: Grid2Chart) -> Self {
        Self { chart, background: 1.0, phi: vec![0.0; chart.len()] }
    }

    /// `h = b + ½Δ₀φ`, rejecting non-positive values.
    pub fn conformal_factor(&self) -> Result<Vec<f64>> {
        let lap = spectral::flat_laplacian(&self.chart, &self.phi);
        let h: Vec<f64> = lap.iter().map(|l| self.background + 0.5 * l).collect();
        if let Some(k) = h.iter().position(|v| !(*v > 0.0)) {
            let (i, j) = self.chart.node(k);
            return Err(FocfError::PotentialDegenerate(i, j));
        }
        Ok(h)
    }

    pub fn metric(&self) -> Result<MetricField2> {
        let h = self.conformal_factor()?;
        MetricField2::new(self.chart, h.clone(), vec![0.0; self.chart.len()], h)
    }

    /// Potential of `λ g_φ`: background and potential both scale by `λ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self { chart: self.chart, background: self.background * lambda, phi: self.phi.iter().map(|v| v * lambda).collect() }
    }
}

/// Scalar curvature of `h δ`: `s = −(1/h) Δ₀ log h`.
pub fn conformal_scalar_curvature(chart: &Grid2Chart, h: &[f64]) -> Vec<f64> {
    let logh: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let lap = spectral::flat_laplacian(chart, &logh);
    lap.iter().zip(h).map(|(l, hv)| -l / hv).collect()
}

/// `∂φ/∂t = s − ∫s dV / ∫dV`.
pub fn calabi_velocity(phi: &CalabiPotential) -> Result<Vec<f64>> {
    let h = phi.conformal_factor()?;
    let s = conformal_scalar_curvature(&phi.chart, &h);
    let cell = phi.chart.h1() * phi.chart.h2();
    let vol: f64 = h.iter().sum::<f64>() * cell;
    let total: f64 = s.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() * cell;
    let mean = total / vol;
    Ok(s.iter().map(|v| v - mean).collect())
}

/// Metric velocity induced by a potential velocity: `½Δ₀(∂φ/∂t) δ`.
pub fn calabi_metric_velocity(chart: &Grid2Chart, phi_dot: &[f64]) -> TensorField {
    let lap = spectral::flat_laplacian(chart, phi_dot);
    let half: Vec<f64> = lap.iter().map(|v| 0.5 * v).collect();
    TensorField { chart: *chart, valence: 2, data: vec![half.clone(), vec![0.0; chart.len()], vec![0.0; chart.len()], half] }
}

/// Total mean-zero check: `∫ s dV`, which vanishes on the torus.
pub fn total_scalar_curvature(g: &MetricField2) -> Result<f64> {
    let b = riemann(g)?;
    integrate(&b.s, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{l2_inner, sup};
    use std::f64::consts::TAU;

    fn chart(n: usize) -> Grid2Chart {
        Grid2Chart::square(TAU, n).unwrap()
    }

    fn bumpy(c: Grid2Chart) -> MetricField2 {
        let g11 = c.sample(|x, y| 1.0 + 0.2 * (x + y).cos());
        let g12 = c.sample(|x, y| 0.1 * (2.0 * x - y).sin());
        let g22 = c.sample(|x, y| 1.1 + 0.15 * y.sin() * x.cos());
        MetricField2::new(c, g11, g12, g22).unwrap()
    }

    fn direction(c: Grid2Chart) -> TensorField {
        let a = c.sample(|x, y| (x - y).sin());
        let b = c.sample(|x, y| 0.5 * (2.0 * y).cos() * x.sin());
        let d = c.sample(|x, y| (x + 2.0 * y).cos());
        TensorField::from_planes(c, 2, vec![a, b.clone(), b, d]).unwrap()
    }

    fn finite_difference(g: &MetricField2, h: &TensorField, eps: f64) -> f64 {
        let at = |s: f64| {
            let t = g.as_tensor().add_scaled(h, s).unwrap();
            energy_f(&MetricField2::new(g.chart, t.data[0].clone(), t.data[1].clone(), t.data[3].clone()).unwrap()).unwrap()
        };
        (at(eps) - at(-eps)) / (2.0 * eps)
    }

    #[test]
    fn energy_of_conformal_metric() {
        let c = chart(32);
        let u = c.sample(|x, _| 0.3 * x.cos());
        let g = MetricField2::conformal(c, &u).unwrap();
        // Δu = −u, so K = u e^{−2u} and ½|Rm|² dV = 2u² e^{−2u} dx.
        let dens: Vec<f64> = u.iter().map(|u| 2.0 * u * u * (-2.0 * u).exp()).collect();
        let want: f64 = dens.iter().sum::<f64>() * c.h1() * c.h2();
        assert!((energy_f(&g).unwrap() - want).abs() < 1e-10 * want);
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let c = chart(32);
        let g = bumpy(c);
        let h = direction(c);
        let fd = finite_difference(&g, &h, 1e-4);
        let grad = grad_f(&g).unwrap();
        let an = l2_inner(&grad, &h, &g).unwrap();
        assert!((an - fd).abs() < 1e-6 * fd.abs(), "{an} vs {fd}");
        let parts = grad_f_parts(&g, &riemann(&g).unwrap()).unwrap();
        let wrong = l2_inner(&parts.assemble(-1.0), &h, &g).unwrap();
        assert!((wrong - fd).abs() > 1e-3 * fd.abs());
    }

    #[test]
    fn flat_metric_is_critical() {
        assert!(grad_f(&MetricField2::flat(chart(16))).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn normalized_energy_is_scale_invariant_on_surfaces() {
        let g = bumpy(chart(16));
        let a = energy_ftilde(&g, 2).unwrap();
        let b = energy_ftilde(&g.scaled(3.7), 2).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        assert!((energy_f(&g.scaled(2.0)).unwrap() - 0.5 * energy_f(&g).unwrap()).abs() < 1e-12);
        assert_eq!(normalization_coefficient(4), 0.0);
        assert!(ftilde_from(1.0, 0.0, 2).is_err());
    }

    #[test]
    fn calabi_requires_torus() {
        assert!(FlowSpec::new(FlowKind::SurfaceCalabi, GeometryKind::ProductSpheres).is_err());
        assert_eq!(FlowSpec::new(FlowKind::L2Flow, GeometryKind::MilnorFrame).unwrap().dimension, 3);
    }

    #[test]
    fn calabi_scalar_curvature_agrees_with_riemann() {
        let c = chart(32);
        let p = CalabiPotential::new(c, c.sample(|x, y| 0.04 * x.cos() * (2.0 * y).sin())).unwrap();
        let g = p.metric().unwrap();
        let s = conformal_scalar_curvature(&c, &p.conformal_factor().unwrap());
        let b = riemann(&g).unwrap();
        let e = s.iter().zip(&b.s).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(e < 1e-7 * sup(&b.s), "{e:e}");
        // The velocity has zero mean against dV.
        let v = calabi_velocity(&p).unwrap();
        assert!(integrate(&v, &g).unwrap().abs() < 1e-12);
        assert!(total_scalar_curvature(&g).unwrap().abs() < 1e-11);
    }
}
