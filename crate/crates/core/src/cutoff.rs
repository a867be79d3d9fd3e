//! Radial cutoff functions on the torus chart.
//!
//! `γ = 1 − S((ρ − r_in)/(r_out − r_in))` with the quintic smoothstep
//! `S(s) = 10s³ − 15s⁴ + 6s⁵`, where `ρ` is the flat periodic distance to the
//! center. `γ` is C², and its first and second partials are exact.

use crate::curvature::christoffel;
use crate::error::{FocfError, Result};
use crate::grid::Grid2Chart;
use crate::tensor::{norm_sq_with, MetricField2, TensorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFunction {
    pub chart: Grid2Chart,
    pub center: (f64, f64),
    pub inner: f64,
    pub outer: f64,
}

/// Value, gradient and Hessian (flat partials) at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffJet {
    pub value: f64,
    pub d: [f64; 2],
    pub dd: [[f64; 2]; 2],
}

fn smoothstep(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    (s2 * s * (10.0 - 15.0 * s + 6.0 * s2), 30.0 * s2 * (1.0 - s) * (1.0 - s), 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s))
}

fn wrap(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

impl CutoffFunction {
    pub fn new(chart: Grid2Chart, center: (f64, f64), inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer < 0.5 * chart.l1.min(chart.l2)) {
            return Err(FocfError::Invalid(format!("cutoff radii {inner}, {outer} do not fit the chart")));
        }
        Ok(Self { chart, center, inner, outer })
    }

    pub fn jet_at(&self, x: f64, y: f64) -> CutoffJet {
        let d = [wrap(x - self.center.0, self.chart.l1), wrap(y - self.center.1, self.chart.l2)];
        let rho = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let w = self.outer - self.inner;
        if rho <= self.inner {
            return CutoffJet { value: 1.0, d: [0.0; 2], dd: [[0.0; 2]; 2] };
        }
        if rho >= self.outer {
            return CutoffJet { value: 0.0, d: [0.0; 2], dd: [[0.0; 2]; 2] };
        }
        let (s, s1, s2) = smoothstep((rho - self.inner) / w);
        let (g1, g2) = (-s1 / w, -s2 / (w * w));
        let mut dd = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                dd[i][j] = g2 * d[i] * d[j] / (rho * rho) + g1 * (delta / rho - d[i] * d[j] / (rho * rho * rho));
            }
        }
        CutoffJet { value: 1.0 - s, d: [g1 * d[0] / rho, g1 * d[1] / rho], dd }
    }

    /// `dγ` and the flat Hessian as tensor fields on the chart.
    pub fn fields(&self) -> (TensorField, TensorField) {
        let c = self.chart;
        let n = c.len();
        let mut d = TensorField::zeros(c, 1);
        let mut h = TensorField::zeros(c, 2);
        for k in 0..n {
            let (x, y) = c.coords(k);
            let j = self.jet_at(x, y);
            for a in 0..2 {
                d.data[a][k] = j.d[a];
                for b in 0..2 {
                    h.data[(a << 1) | b][k] = j.dd[a][b];
                }
            }
        }
        (d, h)
    }

    /// Pointwise `|dγ|_g` and `|∇∇γ|_g`, with `∇∇γ = ∂²γ − Γ·dγ`.
    pub fn norms(&self, g: &MetricField2) -> Result<(Vec<f64>, Vec<f64>)> {
        self.chart.same_as(&g.chart)?;
        let inv = g.inverse()?;
        let gamma = christoffel(g)?;
        let (d, mut h) = self.fields();
        let n = self.chart.len();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let gk = &gamma.data[(k << 2) | (i << 1) | j];
                    for p in 0..n {
                        h.data[(i << 1) | j][p] -= gk[p] * d.data[k][p];
                    }
                }
            }
        }
        let dn = norm_sq_with(&d, &inv).iter().map(|v| v.max(0.0).sqrt()).collect();
        let hn = norm_sq_with(&h, &inv).iter().map(|v| v.max(0.0).sqrt()).collect();
        Ok((dn, hn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_matches_finite_differences() {
        let c = Grid2Chart::square(1.0, 16).unwrap();
        let gam = CutoffFunction::new(c, (0.9, 0.1), 0.1, 0.35).unwrap();
        let e = 1e-5;
        for &(x, y) in &[(0.05, 0.2), (0.8, 0.3), (1.1, 0.0), (0.7, 0.95)] {
            let j = gam.jet_at(x, y);
            let fx = (gam.jet_at(x + e, y).value - gam.jet_at(x - e, y).value) / (2.0 * e);
            let fy = (gam.jet_at(x, y + e).value - gam.jet_at(x, y - e).value) / (2.0 * e);
            assert!((fx - j.d[0]).abs() < 1e-7 && (fy - j.d[1]).abs() < 1e-7);
            let fxy = (gam.jet_at(x + e, y).d[1] - gam.jet_at(x - e, y).d[1]) / (2.0 * e);
            let fxx = (gam.jet_at(x + e, y).d[0] - gam.jet_at(x - e, y).d[0]) / (2.0 * e);
            assert!((fxy - j.dd[0][1]).abs() < 1e-5 && (fxx - j.dd[0][0]).abs() < 1e-5);
        }
    }

    #[test]
    fn plateau_and_support() {
        let c = Grid2Chart::square(1.0, 16).unwrap();
        let gam = CutoffFunction::new(c, (0.5, 0.5), 0.1, 0.3).unwrap();
        assert_eq!(gam.jet_at(0.55, 0.5).value, 1.0);
        assert_eq!(gam.jet_at(0.0, 0.0).value, 0.0);
        assert!(CutoffFunction::new(c, (0.5, 0.5), 0.1, 0.6).is_err());
    }
}
