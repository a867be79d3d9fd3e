//! Levi-Civita connection, Riemann tensor and its covariant derivatives on
//! the grid.
//!
//! Conventions: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`,
//! `R_{ijkl} = g(R(∂_i,∂_j)∂_k, ∂_l)`, `Rc_{jk} = g^{il} R_{ijkl}`, so the
//! round sphere has `R_{1221} > 0` and `|Rm|^2 = 4K^2` on a surface. The
//! new index of `∇T` is placed first.

use crate::error::{FocfError, Result};
use crate::spectral;
use crate::tensor::{
    comp, contract_inner_with, index_at, norm_sq_with, raise_slot, sup, with_index, InverseMetric, MetricField2,
    TensorField, MAX_VALENCE,
};

/// Default number of covariant derivatives of Rm tracked.
pub const M_MAX: usize = 4;

/// Relative symmetry defect above which Rm is reported as under-resolved.
pub const SYMMETRY_WARN: f64 = 1e-6;

/// `Γ^k_{ij}` with the upper index in slot 0.
pub fn christoffel(g: &MetricField2) -> Result<TensorField> {
    let inv = g.inverse()?;
    Ok(christoffel_with(g, &inv))
}

fn christoffel_with(g: &MetricField2, inv: &InverseMetric) -> TensorField {
    let c = g.chart;
    let n = c.len();
    // dg[l][a][b] = ∂_l g_ab
    let [d11_1, d11_2] = spectral::gradient(&c, &g.g11);
    let [d12_1, d12_2] = spectral::gradient(&c, &g.g12);
    let [d22_1, d22_2] = spectral::gradient(&c, &g.g22);
    let dg = [[[d11_1, d12_1.clone()], [d12_1, d22_1]], [[d11_2, d12_2.clone()], [d12_2, d22_2]]];
    let mut gamma = TensorField::zeros(c, 3);
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let out = &mut gamma.data[comp(&[k, i, j])];
                for l in 0..2 {
                    for p in 0..n {
                        let lower = dg[i][j][l][p] + dg[j][i][l][p] - dg[l][i][j][p];
                        out[p] += 0.5 * inv.get(k, l, p) * lower;
                    }
                }
            }
        }
    }
    gamma
}

/// `(∇T)_{a i_1..i_v} = ∂_a T_I − Σ_s Γ^m_{a i_s} T_{..m..}`.
pub fn covariant_derivative(t: &TensorField, g: &MetricField2, gamma: &TensorField) -> Result<TensorField> {
    t.chart.same_as(&g.chart)?;
    t.chart.same_as(&gamma.chart)?;
    if t.valence + 1 > MAX_VALENCE {
        return Err(FocfError::ValenceOverflow(t.valence + 1, MAX_VALENCE));
    }
    if !t.is_finite() {
        return Err(FocfError::NonFinite("tensor field"));
    }
    Ok(nabla(t, gamma))
}

fn nabla(t: &TensorField, gamma: &TensorField) -> TensorField {
    let v = t.valence;
    let c = t.chart;
    let n = c.len();
    let grads: Vec<[Vec<f64>; 2]> = t.data.iter().map(|p| spectral::gradient(&c, p)).collect();
    let mut out = TensorField::zeros(c, v + 1);
    for a in 0..2 {
        for (ci, grad) in grads.iter().enumerate() {
            let oc = (a << v) | ci;
            let plane = &mut out.data[oc];
            plane.copy_from_slice(&grad[a]);
            for s in 0..v {
                let is = index_at(ci, v, s);
                for m in 0..2 {
                    let gam = &gamma.data[comp(&[m, a, is])];
                    let src = &t.data[with_index(ci, v, s, m)];
                    for p in 0..n {
                        plane[p] -= gam[p] * src[p];
                    }
                }
            }
        }
    }
    out
}

/// Curvature of a grid metric together with derived contractions.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub gamma: TensorField,
    pub rm: TensorField,
    pub rc: TensorField,
    pub s: Vec<f64>,
    pub rcheck: Option<TensorField>,
    pub norm_rm_sq: Vec<f64>,
    /// `sup |∇^k Rm|` for `k = 0..derivs.len()`, filled by [`CurvatureBundle::with_derivatives`].
    pub deriv_sup: Vec<f64>,
    /// `max |R − sym(R)| / max |sym(R)|` before symmetrization.
    pub symmetry_defect: f64,
    pub inv: InverseMetric,
}

impl CurvatureBundle {
    /// Gauss curvature `s / 2`.
    pub fn gauss(&self) -> Vec<f64> {
        self.s.iter().map(|v| 0.5 * v).collect()
    }

    pub fn sup_rm(&self) -> f64 {
        self.norm_rm_sq.iter().fold(0.0, |m, v| m.max(v.sqrt()))
    }

    /// Populates `deriv_sup` up to order `m` and returns the derivative tensors.
    pub fn with_derivatives(&mut self, g: &MetricField2, m: usize) -> Result<Vec<TensorField>> {
        let list = nabla_chain(&self.rm, g, &self.gamma, m)?;
        self.deriv_sup = list.iter().map(|t| sup(&norm_sq_with(t, &self.inv)).sqrt()).collect();
        Ok(list)
    }
}

/// Projects a valence-4 field onto the algebraic curvature symmetries
/// (antisymmetric in each pair, symmetric under pair exchange).
fn curvature_symmetrize(r: &TensorField) -> TensorField {
    let anti = |t: &TensorField, a: usize, b: usize| t.add_scaled(&t.transpose(a, b), -1.0).expect("shape").scale(0.5);
    let r1 = anti(r, 0, 1);
    let r2 = anti(&r1, 2, 3);
    let swapped = r2.transpose(0, 2).transpose(1, 3);
    r2.add_scaled(&swapped, 1.0).expect("shape").scale(0.5)
}

/// Riemann tensor, Ricci tensor, scalar curvature and `|Rm|^2`.
pub fn riemann(g: &MetricField2) -> Result<CurvatureBundle> {
    let inv = g.inverse()?;
    let c = g.chart;
    let n = c.len();
    let gamma = christoffel_with(g, &inv);
    let dgamma: Vec<[Vec<f64>; 2]> = gamma.data.iter().map(|p| spectral::gradient(&c, p)).collect();
    let gam = |l: usize, i: usize, j: usize| &gamma.data[comp(&[l, i, j])];
    // R^l_{ijk}, stored as (i, j, k, l).
    let mut up = TensorField::zeros(c, 4);
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let out = &mut up.data[comp(&[i, j, k, l])];
                    let a = &dgamma[comp(&[l, j, k])][i];
                    let b = &dgamma[comp(&[l, i, k])][j];
                    for p in 0..n {
                        out[p] = a[p] - b[p];
                    }
                    for q in 0..2 {
                        let (g1, g2, g3, g4) = (gam(l, i, q), gam(q, j, k), gam(l, j, q), gam(q, i, k));
                        for p in 0..n {
                            out[p] += g1[p] * g2[p] - g3[p] * g4[p];
                        }
                    }
                }
            }
        }
    }
    // Lower the last index.
    let gt = g.as_tensor();
    let mut rm = TensorField::zeros(c, 4);
    for ci in 0..16 {
        let l = ci & 1;
        for m in 0..2 {
            let src = &up.data[with_index(ci, 4, 3, m)];
            let gl = &gt.data[comp(&[l, m])];
            let out = &mut rm.data[ci];
            for p in 0..n {
                out[p] += gl[p] * src[p];
            }
        }
    }
    let sym = curvature_symmetrize(&rm);
    let scale = sym.max_abs();
    let diff = rm.add_scaled(&sym, -1.0)?.max_abs();
    let symmetry_defect = if scale > 0.0 { diff / scale } else { 0.0 };
    if symmetry_defect > SYMMETRY_WARN && diff > 1e-10 {
        log::warn!("Riemann symmetry defect {symmetry_defect:.3e}: metric is under-resolved");
    }
    let rm = sym;
    let mut rc = TensorField::zeros(c, 2);
    for j in 0..2 {
        for k in 0..2 {
            let out = &mut rc.data[comp(&[j, k])];
            for i in 0..2 {
                for l in 0..2 {
                    let r = &rm.data[comp(&[i, j, k, l])];
                    for p in 0..n {
                        out[p] += inv.get(i, l, p) * r[p];
                    }
                }
            }
        }
    }
    let rc = rc.symmetrize(0, 1);
    let s: Vec<f64> = (0..n)
        .map(|p| (0..2).flat_map(|j| (0..2).map(move |k| (j, k))).map(|(j, k)| inv.get(j, k, p) * rc.data[comp(&[j, k])][p]).sum())
        .collect();
    let norm_rm_sq = norm_sq_with(&rm, &inv);
    Ok(CurvatureBundle {
        gamma,
        rm,
        rc,
        s,
        rcheck: None,
        norm_rm_sq,
        deriv_sup: Vec::new(),
        symmetry_defect,
        inv,
    })
}

/// `Ř_{ij} = R_{ipqr} R_j^{pqr}`.
pub fn rcheck(b: &CurvatureBundle, g: &MetricField2) -> Result<TensorField> {
    b.rm.chart.same_as(&g.chart)?;
    let inv = &b.inv;
    let mut raised = b.rm.clone();
    for s in 1..4 {
        raised = raise_slot(&raised, inv, s);
    }
    let c = g.chart;
    let n = c.len();
    let mut out = TensorField::zeros(c, 2);
    for i in 0..2 {
        for j in 0..2 {
            let o = &mut out.data[comp(&[i, j])];
            for rest in 0..8 {
                let a = &b.rm.data[(i << 3) | rest];
                let r = &raised.data[(j << 3) | rest];
                for p in 0..n {
                    o[p] += a[p] * r[p];
                }
            }
        }
    }
    Ok(out.symmetrize(0, 1))
}

/// `[Rm, ∇Rm, .., ∇^m Rm]`.
pub fn nabla_chain(rm: &TensorField, g: &MetricField2, gamma: &TensorField, m: usize) -> Result<Vec<TensorField>> {
    let mut list = vec![rm.clone()];
    for _ in 0..m {
        let next = covariant_derivative(list.last().expect("nonempty"), g, gamma)?;
        list.push(next);
    }
    Ok(list)
}

/// `∇^k Rm`.
pub fn nabla_k_rm(g: &MetricField2, k: usize) -> Result<TensorField> {
    if k > M_MAX {
        return Err(FocfError::ValenceOverflow(4 + k, 4 + M_MAX));
    }
    let b = riemann(g)?;
    Ok(nabla_chain(&b.rm, g, &b.gamma, k)?.pop().expect("nonempty"))
}

/// Contracts slots 0 and 1 of `t` with `g^{-1}`.
fn trace_first_pair(t: &TensorField, inv: &InverseMetric) -> TensorField {
    let v = t.valence;
    let n = t.chart.len();
    let mut out = TensorField::zeros(t.chart, v - 2);
    for (rest, o) in out.data.iter_mut().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                let src = &t.data[(((a << 1) | b) << (v - 2)) | rest];
                for p in 0..n {
                    o[p] += inv.get(a, b, p) * src[p];
                }
            }
        }
    }
    out
}

/// Rough Laplacian `g^{ab} ∇_a ∇_b T`.
pub fn rough_laplacian(t: &TensorField, g: &MetricField2) -> Result<TensorField> {
    let inv = g.inverse()?;
    let gamma = christoffel_with(g, &inv);
    rough_laplacian_with(t, g, &gamma, &inv)
}

pub(crate) fn rough_laplacian_with(
    t: &TensorField,
    g: &MetricField2,
    gamma: &TensorField,
    inv: &InverseMetric,
) -> Result<TensorField> {
    let d1 = covariant_derivative(t, g, gamma)?;
    let d2 = covariant_derivative(&d1, g, gamma)?;
    Ok(trace_first_pair(&d2, inv))
}

pub fn bilaplacian(t: &TensorField, g: &MetricField2) -> Result<TensorField> {
    let inv = g.inverse()?;
    let gamma = christoffel_with(g, &inv);
    let once = rough_laplacian_with(t, g, &gamma, &inv)?;
    rough_laplacian_with(&once, g, &gamma, &inv)
}

/// `f_m = Σ_{j=1}^m |∇^j Rm|^{2/(2+j)}` per node, and its supremum.
pub fn f_m(g: &MetricField2, m: usize) -> Result<(Vec<f64>, f64)> {
    if m > M_MAX {
        return Err(FocfError::ValenceOverflow(4 + m, 4 + M_MAX));
    }
    let b = riemann(g)?;
    let chain = nabla_chain(&b.rm, g, &b.gamma, m)?;
    Ok(f_m_from_chain(&chain, &b.inv))
}

pub(crate) fn f_m_from_chain(chain: &[TensorField], inv: &InverseMetric) -> (Vec<f64>, f64) {
    let norms: Vec<Vec<f64>> = chain.iter().map(|t| norm_sq_with(t, inv)).collect();
    f_m_from_norms(&norms)
}

/// `f_m` from pointwise `|∇^j Rm|²`, `j = 0..=m` (entry 0 is ignored).
pub(crate) fn f_m_from_norms(norms_sq: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = norms_sq[0].len();
    let mut f = vec![0.0; n];
    for (j, q) in norms_sq.iter().enumerate().skip(1) {
        let e = 2.0 / (2.0 + j as f64);
        for (acc, q) in f.iter_mut().zip(q) {
            let norm = q.sqrt();
            if norm > 0.0 {
                *acc += norm.powf(e);
            }
        }
    }
    let s = sup(&f);
    (f, s)
}

/// Pointwise `|∇^j Rm|²` for `j = 0..=m` through `|∇^j Rm|² = 4|∇^j K|²`,
/// which holds on surfaces since `Rm = K·g⊙g` and `∇g = 0`.
pub fn rm_derivative_norms_sq(b: &CurvatureBundle, g: &MetricField2, m: usize) -> Result<Vec<Vec<f64>>> {
    let k = TensorField { chart: g.chart, valence: 0, data: vec![b.s.iter().map(|s| 0.5 * s).collect()] };
    let mut out = Vec::with_capacity(m + 1);
    let mut t = k;
    for j in 0..=m {
        if j > 0 {
            t = covariant_derivative(&t, g, &b.gamma)?;
        }
        out.push(norm_sq_with(&t, &b.inv).into_iter().map(|v| 4.0 * v).collect());
    }
    Ok(out)
}

/// Pointwise `|T|^2` for a tensor already known to live on `g`'s chart.
pub fn pointwise_norm_sq(t: &TensorField, inv: &InverseMetric) -> Vec<f64> {
    norm_sq_with(t, inv)
}

/// Pointwise inner product with a cached inverse metric.
pub fn pointwise_inner(a: &TensorField, b: &TensorField, inv: &InverseMetric) -> Vec<f64> {
    contract_inner_with(a, b, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2Chart;
    use crate::tensor::integrate;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn chart(n: usize) -> Grid2Chart {
        Grid2Chart::square(TAU, n).unwrap()
    }

    fn wavy(c: Grid2Chart, a: f64) -> MetricField2 {
        let g11 = c.sample(|x, y| 1.0 + a * (x + 2.0 * y).cos());
        let g12 = c.sample(|x, y| 0.5 * a * (x - y).sin());
        let g22 = c.sample(|x, y| 1.2 + a * (2.0 * x).sin() * y.cos());
        MetricField2::new(c, g11, g12, g22).unwrap()
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let g = MetricField2::flat(chart(16));
        let b = riemann(&g).unwrap();
        assert!(b.gamma.max_abs() < 1e-14);
        assert!(b.rm.max_abs() < 1e-14);
        assert_eq!(f_m(&g, 2).unwrap().1, 0.0);
    }

    #[test]
    fn conformal_gauss_curvature_matches_formula() {
        let c = chart(32);
        let u = c.sample(|x, y| 0.2 * x.cos() + 0.1 * (x + y).sin());
        let lap = c.sample(|x, y| -0.2 * x.cos() - 0.2 * (x + y).sin());
        let b = riemann(&MetricField2::conformal(c, &u).unwrap()).unwrap();
        for (k, (u, l)) in b.gauss().iter().zip(u.iter().zip(&lap)) {
            assert!((k + (-2.0 * u).exp() * l).abs() < 1e-11);
        }
    }

    #[test]
    fn metric_is_parallel() {
        let g = wavy(chart(32), 0.2);
        let b = riemann(&g).unwrap();
        assert!(covariant_derivative(&g.as_tensor(), &g, &b.gamma).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn ricci_and_scalar_are_consistent_in_two_dimensions() {
        let g = wavy(chart(32), 0.2);
        let b = riemann(&g).unwrap();
        // Rc = K g and |Rm|² = s².
        let gt = g.as_tensor();
        for ij in 0..4 {
            for p in 0..g.chart.len() {
                assert!((b.rc.data[ij][p] - 0.5 * b.s[p] * gt.data[ij][p]).abs() < 1e-9);
            }
        }
        for (q, s) in b.norm_rm_sq.iter().zip(&b.s) {
            assert!((q - s * s).abs() < 1e-9 * (1.0 + s * s));
        }
    }

    #[test]
    fn derivative_norms_agree_with_full_chain() {
        let g = wavy(chart(64), 0.15);
        let b = riemann(&g).unwrap();
        let fast = rm_derivative_norms_sq(&b, &g, 2).unwrap();
        let chain = nabla_chain(&b.rm, &g, &b.gamma, 2).unwrap();
        for (j, t) in chain.iter().enumerate() {
            let slow = pointwise_norm_sq(t, &b.inv);
            let scale = sup(&slow);
            let err = fast[j].iter().zip(&slow).fold(0.0f64, |m, (a, s)| m.max((a - s).abs()));
            assert!(err <= 1e-7 * scale, "order {j}: {:e}", err / scale);
        }
        assert!((f_m_from_norms(&fast).1 - f_m(&g, 2).unwrap().1).abs() < 1e-9);
    }

    #[test]
    fn bilaplacian_of_scalar_on_flat_torus() {
        let c = chart(16);
        let g = MetricField2::flat(c);
        let f = TensorField::scalar(c, c.sample(|x, y| (2.0 * x + y).cos()));
        let out = bilaplacian(&f, &g).unwrap();
        for (a, b) in out.data[0].iter().zip(&f.data[0]) {
            assert!((a - 25.0 * b).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_order_is_capped() {
        let g = MetricField2::flat(chart(8));
        assert!(matches!(nabla_k_rm(&g, M_MAX + 1), Err(FocfError::ValenceOverflow(..))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn gauss_bonnet_on_random_metrics(a in 0.0f64..0.4, p in 0.0f64..TAU) {
            let c = chart(32);
            let g11 = c.sample(|x, y| 1.0 + a * (x + p).cos() * y.sin());
            let g12 = c.sample(|x, y| 0.3 * a * (x - y + p).sin());
            let g22 = c.sample(|_, y| 1.0 + a * (2.0 * y - p).cos());
            let g = MetricField2::new(c, g11, g12, g22).unwrap();
            let b = riemann(&g).unwrap();
            let abs: Vec<f64> = b.s.iter().map(|v| v.abs()).collect();
            let total = integrate(&b.s, &g).unwrap();
            prop_assert!(total.abs() <= 1e-9 * (1.0 + integrate(&abs, &g).unwrap()));
        }
    }
}
