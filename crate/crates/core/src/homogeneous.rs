//! Symmetric-ansatz geometries with closed-form curvature: products of two
//! round 2-spheres (n = 4) and diagonal left-invariant metrics on SU(2) in a
//! Milnor frame (n = 3).

use crate::error::{FocfError, Result};
use crate::functionals::normalization_coefficient;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the closed-form invariants, so they can be evaluated
/// on plain floats or on dual numbers for exact first derivatives.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Forward-mode dual number `v + d ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn var(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: -self.d }
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        Self { v: r, d: 0.5 * self.d / r }
    }
}

/// `S²(a) × S²(b)` with squared radii `a2`, `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductSphereMetric {
    pub a2: f64,
    pub b2: f64,
}

impl ProductSphereMetric {
    pub fn new(a2: f64, b2: f64) -> Result<Self> {
        if !(a2 > 0.0 && b2 > 0.0 && a2.is_finite() && b2.is_finite()) {
            return Err(FocfError::Invalid(format!("squared radii must be positive, got {a2}, {b2}")));
        }
        Ok(Self { a2, b2 })
    }
}

/// Diagonal left-invariant metric `l_i` on SU(2), Milnor frame with
/// `[e_2, e_3] = 2 e_1` and cyclic; `l = (1, 1, 1)` is the unit round S³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MilnorFrameMetric {
    pub l: [f64; 3],
}

impl MilnorFrameMetric {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self> {
        if ![l1, l2, l3].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(FocfError::Invalid(format!("Milnor coefficients must be positive, got {l1}, {l2}, {l3}")));
        }
        Ok(Self { l: [l1, l2, l3] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductSphereInvariants {
    pub k1: f64,
    pub k2: f64,
    pub norm_rm_sq: f64,
    pub f: f64,
    pub vol: f64,
    /// Coefficients `(c1, c2)` with `grad F = c1 g₁ ⊕ c2 g₂`.
    pub grad: [f64; 2],
}

fn product_energy<T: Real>(a2: T, b2: T) -> T {
    T::cst(32.0 * PI * PI) * (a2 / b2 + b2 / a2)
}

fn product_volume<T: Real>(a2: T, b2: T) -> T {
    T::cst(16.0 * PI * PI) * a2 * b2
}

/// Closed-form curvature data; the gradient uses `∇Rc = 0` and
/// `Ř = 2K_i² g_i` on each Einstein factor.
pub fn product_sphere_invariants(m: &ProductSphereMetric) -> ProductSphereInvariants {
    let (a2, b2) = (m.a2, m.b2);
    let k1 = 1.0 / a2;
    let k2 = 1.0 / b2;
    let norm = 4.0 * k1 * k1 + 4.0 * k2 * k2;
    let vol = product_volume(a2, b2);
    let quarter = 0.25 * norm;
    ProductSphereInvariants {
        k1,
        k2,
        norm_rm_sq: norm,
        f: product_energy(a2, b2),
        vol,
        grad: [-2.0 * k1 * k1 + quarter, -2.0 * k2 * k2 + quarter],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilnorInvariants {
    /// Sectional curvatures `K(e_2,e_3), K(e_1,e_3), K(e_1,e_2)`.
    pub sectional: [f64; 3],
    /// Principal Ricci curvatures.
    pub ricci: [f64; 3],
    pub norm_rm_sq: f64,
    pub f: f64,
    pub vol: f64,
}

fn milnor_sectional<T: Real>(l: [T; 3]) -> ([T; 3], [T; 3]) {
    let root = (l[0] * l[1] * l[2]).sqrt();
    let lam = [T::cst(2.0) * l[0] / root, T::cst(2.0) * l[1] / root, T::cst(2.0) * l[2] / root];
    let half = T::cst(0.5) * (lam[0] + lam[1] + lam[2]);
    let mu = [half - lam[0], half - lam[1], half - lam[2]];
    let r = [T::cst(2.0) * mu[1] * mu[2], T::cst(2.0) * mu[0] * mu[2], T::cst(2.0) * mu[0] * mu[1]];
    let k = [
        T::cst(0.5) * (r[1] + r[2] - r[0]),
        T::cst(0.5) * (r[0] + r[2] - r[1]),
        T::cst(0.5) * (r[0] + r[1] - r[2]),
    ];
    (k, r)
}

fn milnor_norm<T: Real>(l: [T; 3]) -> T {
    let (k, _) = milnor_sectional(l);
    T::cst(4.0) * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2])
}

fn milnor_volume<T: Real>(l: [T; 3]) -> T {
    T::cst(2.0 * PI * PI) * (l[0] * l[1] * l[2]).sqrt()
}

fn milnor_energy<T: Real>(l: [T; 3]) -> T {
    T::cst(0.5) * milnor_norm(l) * milnor_volume(l)
}

pub fn milnor_invariants(m: &MilnorFrameMetric) -> MilnorInvariants {
    let (k, r) = milnor_sectional(m.l);
    MilnorInvariants {
        sectional: k,
        ricci: r,
        norm_rm_sq: milnor_norm(m.l),
        f: milnor_energy(m.l),
        vol: milnor_volume(m.l),
    }
}

/// A point of either closed-form family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HomogeneousMetric {
    ProductSpheres(ProductSphereMetric),
    Milnor(MilnorFrameMetric),
}

impl HomogeneousMetric {
    pub fn coeffs(&self) -> Vec<f64> {
        match self {
            HomogeneousMetric::ProductSpheres(m) => vec![m.a2, m.b2],
            HomogeneousMetric::Milnor(m) => m.l.to_vec(),
        }
    }

    /// Same family, new coefficients.
    pub fn with_coeffs(&self, c: &[f64]) -> Result<Self> {
        match self {
            HomogeneousMetric::ProductSpheres(_) if c.len() == 2 => {
                Ok(HomogeneousMetric::ProductSpheres(ProductSphereMetric::new(c[0], c[1])?))
            }
            HomogeneousMetric::Milnor(_) if c.len() == 3 => {
                Ok(HomogeneousMetric::Milnor(MilnorFrameMetric::new(c[0], c[1], c[2])?))
            }
            _ => Err(FocfError::Invalid("coefficient count does not match the family".into())),
        }
    }

    pub fn block_dims(&self) -> Vec<f64> {
        match self {
            HomogeneousMetric::ProductSpheres(_) => vec![2.0, 2.0],
            HomogeneousMetric::Milnor(_) => vec![1.0; 3],
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            HomogeneousMetric::ProductSpheres(_) => 4,
            HomogeneousMetric::Milnor(_) => 3,
        }
    }

    pub fn energy(&self) -> f64 {
        match self {
            HomogeneousMetric::ProductSpheres(m) => product_energy(m.a2, m.b2),
            HomogeneousMetric::Milnor(m) => milnor_energy(m.l),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            HomogeneousMetric::ProductSpheres(m) => product_volume(m.a2, m.b2),
            HomogeneousMetric::Milnor(m) => milnor_volume(m.l),
        }
    }

    pub fn norm_rm_sq(&self) -> f64 {
        match self {
            HomogeneousMetric::ProductSpheres(m) => product_sphere_invariants(m).norm_rm_sq,
            HomogeneousMetric::Milnor(m) => milnor_norm(m.l),
        }
    }

    /// `∂F/∂c_i`, exact via dual numbers.
    pub fn energy_partials(&self) -> Vec<f64> {
        let c = self.coeffs();
        (0..c.len())
            .map(|i| {
                let arg: Vec<Dual> =
                    c.iter().enumerate().map(|(j, v)| if i == j { Dual::var(*v) } else { Dual::cst(*v) }).collect();
                match self {
                    HomogeneousMetric::ProductSpheres(_) => product_energy(arg[0], arg[1]).d,
                    HomogeneousMetric::Milnor(_) => milnor_energy([arg[0], arg[1], arg[2]]).d,
                }
            })
            .collect()
    }

    /// L² inner product of two coefficient perturbations.
    pub fn inner(&self, h: &[f64], k: &[f64]) -> f64 {
        let c = self.coeffs();
        let vol = self.volume();
        self.block_dims().iter().zip(&c).zip(h.iter().zip(k)).map(|((d, l), (a, b))| vol * d * a * b / (l * l)).sum()
    }

    /// Shortest closed geodesic among the obvious circles.
    pub fn systole_proxy(&self) -> f64 {
        self.coeffs().iter().fold(f64::INFINITY, |m, v| m.min(2.0 * PI * v.sqrt()))
    }
}

/// Coefficients `v` of `grad F` restricted to the family:
/// `dF(h) = <v, h>` for every diagonal perturbation `h`.
pub fn homogeneous_grad(m: &HomogeneousMetric) -> Vec<f64> {
    let c = m.coeffs();
    let vol = m.volume();
    m.energy_partials()
        .iter()
        .zip(c.iter().zip(m.block_dims()))
        .map(|(df, (l, d))| df * l * l / (vol * d))
        .collect()
}

/// `dc/dt` for the unnormalized or volume-normalized flow.
pub fn homogeneous_velocity(m: &HomogeneousMetric, normalized: bool) -> Vec<f64> {
    let v = homogeneous_grad(m);
    let c = m.coeffs();
    let coef = if normalized { normalization_coefficient(m.dimension()) * m.energy() / m.volume() } else { 0.0 };
    v.iter().zip(&c).map(|(vi, ci)| -vi + coef * ci).collect()
}

/// `sqrt(<v, v>)` for a coefficient vector.
pub fn homogeneous_norm(m: &HomogeneousMetric, v: &[f64]) -> f64 {
    m.inner(v, v).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_product_is_critical() {
        let inv = product_sphere_invariants(&ProductSphereMetric::new(1.0, 1.0).unwrap());
        assert_eq!(inv.grad, [0.0, 0.0]);
        assert!((inv.f - 64.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn round_milnor_is_unit_sphere() {
        let inv = milnor_invariants(&MilnorFrameMetric::new(1.0, 1.0, 1.0).unwrap());
        for k in inv.sectional {
            assert!((k - 1.0).abs() < 1e-15);
        }
        // constant curvature 1 in dimension 3: |Rm|^2 = 2 n (n - 1) = 12
        assert!((inv.norm_rm_sq - 12.0).abs() < 1e-13);
        assert!((inv.vol - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn berger_limits() {
        let collapsed = milnor_invariants(&MilnorFrameMetric::new(1.0, 1.0, 1e-8).unwrap());
        assert!((collapsed.norm_rm_sq - 64.0).abs() < 1e-5);
        let stretched = milnor_invariants(&MilnorFrameMetric::new(1.0, 1.0, 1e4).unwrap());
        assert!(stretched.norm_rm_sq > 1e8);
    }

    #[test]
    fn dual_matches_quotient_rule() {
        let x = Dual::var(2.0);
        let y = (x * x + Dual::cst(1.0)) / x.sqrt();
        let expect = (2.0 * 2.0 * 2.0f64.sqrt() - 5.0 * 0.5 / 2.0f64.sqrt()) / 2.0;
        assert!((y.d - expect).abs() < 1e-14);
    }
}
