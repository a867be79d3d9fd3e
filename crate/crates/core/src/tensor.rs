//! Tensor fields on the periodic chart and the metric algebra built on them.

use crate::error::{FocfError, Result};
use crate::grid::Grid2Chart;
use crate::spectral;

/// Largest valence a [`TensorField`] may carry (Rm plus eight derivatives).
pub const MAX_VALENCE: usize = 12;

/// A covariant tensor field: `2^valence` component planes.
///
/// Component `(i_0, .., i_{v-1})`, each index in `{0, 1}`, is stored at
/// plane `sum_s i_s << (v - 1 - s)`, so the first index is most significant.
/// Christoffel symbols reuse the layout with slot 0 read as the upper index.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub chart: Grid2Chart,
    pub valence: usize,
    pub data: Vec<Vec<f64>>,
}

pub fn comp(indices: &[usize]) -> usize {
    indices.iter().fold(0, |acc, &i| (acc << 1) | i)
}

pub fn indices(c: usize, valence: usize) -> Vec<usize> {
    (0..valence).map(|s| (c >> (valence - 1 - s)) & 1).collect()
}

/// Replaces the index in `slot` of component `c`.
pub fn with_index(c: usize, valence: usize, slot: usize, value: usize) -> usize {
    let bit = valence - 1 - slot;
    (c & !(1 << bit)) | (value << bit)
}

pub fn index_at(c: usize, valence: usize, slot: usize) -> usize {
    (c >> (valence - 1 - slot)) & 1
}

impl TensorField {
    pub fn zeros(chart: Grid2Chart, valence: usize) -> Self {
        Self { chart, valence, data: vec![vec![0.0; chart.len()]; 1 << valence] }
    }

    pub fn scalar(chart: Grid2Chart, plane: Vec<f64>) -> Self {
        Self { chart, valence: 0, data: vec![plane] }
    }

    pub fn from_planes(chart: Grid2Chart, valence: usize, data: Vec<Vec<f64>>) -> Result<Self> {
        if valence > MAX_VALENCE {
            return Err(FocfError::ValenceOverflow(valence, MAX_VALENCE));
        }
        if data.len() != 1 << valence || data.iter().any(|p| p.len() != chart.len()) {
            return Err(FocfError::Invalid("component planes do not match valence/chart".into()));
        }
        Ok(Self { chart, valence, data })
    }

    pub fn component(&self, idx: &[usize]) -> &[f64] {
        &self.data[comp(idx)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&self, c: f64) -> Self {
        let data = self.data.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
        Self { chart: self.chart, valence: self.valence, data }
    }

    pub fn add_scaled(&self, other: &TensorField, c: f64) -> Result<Self> {
        self.chart.same_as(&other.chart)?;
        if self.valence != other.valence {
            return Err(FocfError::Invalid("valence mismatch".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
            .collect();
        Ok(Self { chart: self.chart, valence: self.valence, data })
    }

    /// Largest absolute component value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().flat_map(|p| p.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Swaps index slots `a` and `b`.
    pub fn transpose(&self, a: usize, b: usize) -> Self {
        let v = self.valence;
        let mut data = self.data.clone();
        for (c, plane) in data.iter_mut().enumerate() {
            let ia = index_at(c, v, a);
            let ib = index_at(c, v, b);
            let src = with_index(with_index(c, v, a, ib), v, b, ia);
            plane.clone_from(&self.data[src]);
        }
        Self { chart: self.chart, valence: v, data }
    }

    /// Symmetric part in slots `a`, `b`.
    pub fn symmetrize(&self, a: usize, b: usize) -> Self {
        let t = self.transpose(a, b);
        self.add_scaled(&t, 1.0).expect("same shape").scale(0.5)
    }

    /// Componentwise spectral partial derivative.
    pub fn spectral_partial(&self, axis: usize, order: u32) -> Result<Self> {
        if !(axis == 1 || axis == 2) {
            return Err(FocfError::Invalid(format!("axis must be 1 or 2, got {axis}")));
        }
        if order > 4 {
            return Err(FocfError::Invalid(format!("derivative order {order} exceeds 4")));
        }
        if !self.is_finite() {
            return Err(FocfError::NonFinite("tensor field"));
        }
        let data = self.data.iter().map(|p| spectral::partial(&self.chart, p, axis, order)).collect();
        Ok(Self { chart: self.chart, valence: self.valence, data })
    }

    /// Componentwise 2/3-rule truncation.
    pub fn dealiased(&self) -> Self {
        let data = self.data.iter().map(|p| spectral::dealias(&self.chart, p)).collect();
        Self { chart: self.chart, valence: self.valence, data }
    }
}

/// Free function form of [`TensorField::spectral_partial`].
pub fn spectral_partial(f: &TensorField, axis: usize, order: u32) -> Result<TensorField> {
    f.spectral_partial(axis, order)
}

/// Symmetric positive-definite metric on the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField2 {
    pub chart: Grid2Chart,
    pub g11: Vec<f64>,
    pub g12: Vec<f64>,
    pub g22: Vec<f64>,
}

impl MetricField2 {
    /// Builds a metric, rejecting non-finite or non-SPD data.
    pub fn new(chart: Grid2Chart, g11: Vec<f64>, g12: Vec<f64>, g22: Vec<f64>) -> Result<Self> {
        let n = chart.len();
        if g11.len() != n || g12.len() != n || g22.len() != n {
            return Err(FocfError::Invalid("metric planes do not match the chart".into()));
        }
        let g = Self { chart, g11, g12, g22 };
        g.check_spd()?;
        Ok(g)
    }

    pub fn flat(chart: Grid2Chart) -> Self {
        let n = chart.len();
        Self { chart, g11: vec![1.0; n], g12: vec![0.0; n], g22: vec![1.0; n] }
    }

    /// `e^{2u} * delta`.
    pub fn conformal(chart: Grid2Chart, u: &[f64]) -> Result<Self> {
        let f: Vec<f64> = u.iter().map(|v| (2.0 * v).exp()).collect();
        Self::new(chart, f.clone(), vec![0.0; chart.len()], f)
    }

    pub fn check_spd(&self) -> Result<()> {
        for k in 0..self.chart.len() {
            let (a, b, c) = (self.g11[k], self.g12[k], self.g22[k]);
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                return Err(FocfError::NonFinite("metric"));
            }
            if !(a > 0.0 && a * c - b * b > 0.0) {
                let (i, j) = self.chart.node(k);
                return Err(FocfError::NonSpdMetric(i, j));
            }
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> [[f64; 2]; 2] {
        [[self.g11[k], self.g12[k]], [self.g12[k], self.g22[k]]]
    }

    pub fn det(&self) -> Vec<f64> {
        (0..self.chart.len()).map(|k| self.g11[k] * self.g22[k] - self.g12[k] * self.g12[k]).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |p: &Vec<f64>| p.iter().map(|v| v * c).collect();
        Self { chart: self.chart, g11: s(&self.g11), g12: s(&self.g12), g22: s(&self.g22) }
    }

    /// Shifts the field by whole nodes.
    pub fn translated(&self, di: isize, dj: isize) -> Self {
        let c = self.chart;
        let shift = |p: &Vec<f64>| {
            (0..c.len())
                .map(|k| {
                    let (i, j) = c.node(k);
                    p[c.idx(i as isize - di, j as isize - dj)]
                })
                .collect()
        };
        Self { chart: c, g11: shift(&self.g11), g12: shift(&self.g12), g22: shift(&self.g22) }
    }

    pub fn as_tensor(&self) -> TensorField {
        TensorField {
            chart: self.chart,
            valence: 2,
            data: vec![self.g11.clone(), self.g12.clone(), self.g12.clone(), self.g22.clone()],
        }
    }

    /// Reads the symmetric part of a valence-2 field as a metric (no SPD check).
    pub fn from_tensor_unchecked(t: &TensorField) -> Self {
        let n = t.chart.len();
        let g12 = (0..n).map(|k| 0.5 * (t.data[1][k] + t.data[2][k])).collect();
        Self { chart: t.chart, g11: t.data[0].clone(), g12, g22: t.data[3].clone() }
    }

    /// Flattened `[g11 | g12 | g22]` planes.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.chart.len());
        v.extend_from_slice(&self.g11);
        v.extend_from_slice(&self.g12);
        v.extend_from_slice(&self.g22);
        v
    }

    pub fn from_flat(chart: Grid2Chart, v: &[f64]) -> Result<Self> {
        let n = chart.len();
        if v.len() != 3 * n {
            return Err(FocfError::Invalid("flat metric buffer has the wrong length".into()));
        }
        Self::new(chart, v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec())
    }

    /// Inverse metric components, validated.
    pub fn inverse(&self) -> Result<InverseMetric> {
        self.check_spd()?;
        let det = self.det();
        let n = self.chart.len();
        let mut inv = InverseMetric { chart: self.chart, h11: vec![0.0; n], h12: vec![0.0; n], h22: vec![0.0; n] };
        for k in 0..n {
            inv.h11[k] = self.g22[k] / det[k];
            inv.h12[k] = -self.g12[k] / det[k];
            inv.h22[k] = self.g11[k] / det[k];
        }
        Ok(inv)
    }

    /// Volume form density `sqrt(det g) h1 h2` per node.
    pub fn volume_weights(&self) -> Vec<f64> {
        let cell = self.chart.h1() * self.chart.h2();
        self.det().iter().map(|d| d.sqrt() * cell).collect()
    }

    pub fn volume(&self) -> f64 {
        self.volume_weights().iter().sum()
    }
}

/// `g^{ij}` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseMetric {
    pub chart: Grid2Chart,
    pub h11: Vec<f64>,
    pub h12: Vec<f64>,
    pub h22: Vec<f64>,
}

impl InverseMetric {
    #[inline]
    pub fn get(&self, a: usize, b: usize, k: usize) -> f64 {
        match (a, b) {
            (0, 0) => self.h11[k],
            (1, 1) => self.h22[k],
            _ => self.h12[k],
        }
    }

    pub fn as_tensor(&self) -> TensorField {
        TensorField {
            chart: self.chart,
            valence: 2,
            data: vec![self.h11.clone(), self.h12.clone(), self.h12.clone(), self.h22.clone()],
        }
    }

    /// Largest eigenvalue of `g^{-1}` over all nodes.
    pub fn max_eigenvalue(&self) -> f64 {
        (0..self.chart.len())
            .map(|k| {
                let (a, b, c) = (self.h11[k], self.h12[k], self.h22[k]);
                let m = 0.5 * (a + c);
                let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                m + r
            })
            .fold(0.0, f64::max)
    }
}

/// Per-node inverse metric as a valence-2 field (both slots contravariant).
pub fn metric_inverse(g: &MetricField2) -> Result<TensorField> {
    Ok(g.inverse()?.as_tensor())
}

/// Raises index `slot` of `t` with `g^{-1}`.
pub fn raise_slot(t: &TensorField, inv: &InverseMetric, slot: usize) -> TensorField {
    let v = t.valence;
    let n = t.chart.len();
    let mut data = vec![vec![0.0; n]; 1 << v];
    for (c, out) in data.iter_mut().enumerate() {
        let a = index_at(c, v, slot);
        let c0 = with_index(c, v, slot, 0);
        let c1 = with_index(c, v, slot, 1);
        let (p0, p1) = (&t.data[c0], &t.data[c1]);
        for k in 0..n {
            out[k] = inv.get(a, 0, k) * p0[k] + inv.get(a, 1, k) * p1[k];
        }
    }
    TensorField { chart: t.chart, valence: v, data }
}

/// Pointwise `<a, b>_g` with one inverse-metric factor per slot.
pub fn contract_inner(a: &TensorField, b: &TensorField, g: &MetricField2) -> Result<Vec<f64>> {
    a.chart.same_as(&g.chart)?;
    b.chart.same_as(&g.chart)?;
    if a.valence != b.valence {
        return Err(FocfError::Invalid("valence mismatch".into()));
    }
    let inv = g.inverse()?;
    Ok(contract_inner_with(a, b, &inv))
}

pub(crate) fn contract_inner_with(a: &TensorField, b: &TensorField, inv: &InverseMetric) -> Vec<f64> {
    let mut raised = a.clone();
    for s in 0..a.valence {
        raised = raise_slot(&raised, inv, s);
    }
    let n = a.chart.len();
    let mut out = vec![0.0; n];
    for (ra, pb) in raised.data.iter().zip(&b.data) {
        for k in 0..n {
            out[k] += ra[k] * pb[k];
        }
    }
    out
}

/// Pointwise `|T|_g^2`.
pub fn contract_norm_sq(t: &TensorField, g: &MetricField2) -> Result<Vec<f64>> {
    let v = contract_inner(t, t, g)?;
    Ok(v.into_iter().map(|x| x.max(0.0)).collect())
}

pub(crate) fn norm_sq_with(t: &TensorField, inv: &InverseMetric) -> Vec<f64> {
    contract_inner_with(t, t, inv).into_iter().map(|x| x.max(0.0)).collect()
}

/// `sum f sqrt(det g) h1 h2`.
pub fn integrate(f: &[f64], g: &MetricField2) -> Result<f64> {
    if f.len() != g.chart.len() {
        return Err(FocfError::ChartMismatch);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(FocfError::NonFinite("integrand"));
    }
    g.check_spd()?;
    Ok(f.iter().zip(g.volume_weights()).map(|(a, w)| a * w).sum())
}

/// `L^2(g)` inner product of two tensors of equal valence.
pub fn l2_inner(a: &TensorField, b: &TensorField, g: &MetricField2) -> Result<f64> {
    let p = contract_inner(a, b, g)?;
    integrate(&p, g)
}

pub fn sup(plane: &[f64]) -> f64 {
    plane.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn chart() -> Grid2Chart {
        Grid2Chart::new(1.0, 1.5, 16, 12).unwrap()
    }

    #[test]
    fn index_layout() {
        assert_eq!(comp(&[1, 0, 1]), 5);
        assert_eq!(indices(5, 3), vec![1, 0, 1]);
        assert_eq!(with_index(5, 3, 1, 1), 7);
        assert_eq!(index_at(6, 3, 2), 0);
    }

    #[test]
    fn inverse_of_diagonal() {
        let c = chart();
        let n = c.len();
        let g = MetricField2::new(c, vec![4.0; n], vec![0.0; n], vec![1.0; n]).unwrap();
        let inv = g.inverse().unwrap();
        assert!(inv.h11.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(inv.h22.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(inv.h12.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_spd_names_first_node() {
        let c = chart();
        let n = c.len();
        let mut g22 = vec![1.0; n];
        g22[c.idx(3, 5)] = -0.5;
        g22[c.idx(7, 1)] = -0.5;
        let err = MetricField2::new(c, vec![1.0; n], vec![0.0; n], g22).unwrap_err();
        assert_eq!(err, FocfError::NonSpdMetric(3, 5));
    }

    #[test]
    fn volume_of_scaled_flat() {
        let c = chart();
        let g = MetricField2::flat(c);
        assert!((integrate(&vec![1.0; c.len()], &g).unwrap() - 1.5).abs() < 1e-14);
        let g3 = g.scaled(3.0);
        assert!((g3.volume() - 3.0 * 1.5).abs() < 1e-13);
    }

    #[test]
    fn norm_scales_with_valence() {
        let c = chart();
        let g = MetricField2::conformal(c, &c.sample(|x, y| 0.2 * (2.0 * PI * x).sin() * (PI * y).cos())).unwrap();
        let t = TensorField {
            chart: c,
            valence: 3,
            data: (0..8).map(|s| c.sample(|x, y| (s as f64 + x * y).sin())).collect(),
        };
        let base = contract_norm_sq(&t, &g).unwrap();
        let scaled = contract_norm_sq(&t, &g.scaled(2.0)).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b - a / 8.0).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_finite_derivative_input() {
        let c = chart();
        let mut t = TensorField::zeros(c, 1);
        t.data[0][3] = f64::NAN;
        assert!(t.spectral_partial(1, 1).is_err());
    }
}
