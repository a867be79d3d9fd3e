//! Fourier-spectral calculus on the periodic chart.
//!
//! Every routine here acts on a single real plane (one tensor component).
//! FFT plans are cached per grid shape and shared across threads.

use crate::grid::Grid2Chart;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct Plan {
    fwd_rows: Arc<dyn Fft<f64>>,
    inv_rows: Arc<dyn Fft<f64>>,
    fwd_cols: Arc<dyn Fft<f64>>,
    inv_cols: Arc<dyn Fft<f64>>,
}

fn plan(n1: usize, n2: usize) -> Arc<Plan> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Plan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n1, n2))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan {
                fwd_rows: planner.plan_fft_forward(n2),
                inv_rows: planner.plan_fft_inverse(n2),
                fwd_cols: planner.plan_fft_forward(n1),
                inv_cols: planner.plan_fft_inverse(n1),
            })
        })
        .clone()
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Spectrum of a real plane, laid out like the plane (`k1 * n2 + k2`).
pub fn forward(chart: &Grid2Chart, plane: &[f64]) -> Vec<Complex64> {
    let p = plan(chart.n1, chart.n2);
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    p.fwd_rows.process(&mut buf);
    let mut t = transpose(&buf, chart.n1, chart.n2);
    p.fwd_cols.process(&mut t);
    transpose(&t, chart.n2, chart.n1)
}

/// Inverse of [`forward`], keeping the real part.
pub fn inverse(chart: &Grid2Chart, spec: &[Complex64]) -> Vec<f64> {
    let p = plan(chart.n1, chart.n2);
    let mut t = transpose(spec, chart.n1, chart.n2);
    p.inv_cols.process(&mut t);
    let mut buf = transpose(&t, chart.n2, chart.n1);
    p.inv_rows.process(&mut buf);
    let scale = 1.0 / chart.len() as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Angular wavenumbers `(xi1, xi2)` of spectral bin `idx`, plus Nyquist flags.
pub fn bin(chart: &Grid2Chart, idx: usize) -> (f64, f64, bool, bool) {
    let (k1, k2) = chart.node(idx);
    (
        Grid2Chart::wavenumber(k1, chart.n1, chart.l1),
        Grid2Chart::wavenumber(k2, chart.n2, chart.l2),
        k1 == chart.n1 / 2,
        k2 == chart.n2 / 2,
    )
}

/// Multiplier of `d^order/dx_axis^order`. Odd derivatives drop the Nyquist bin.
fn derivative_symbol(chart: &Grid2Chart, idx: usize, axis: usize, order: u32) -> Complex64 {
    let (xi1, xi2, nyq1, nyq2) = bin(chart, idx);
    let (xi, nyq) = if axis == 1 { (xi1, nyq1) } else { (xi2, nyq2) };
    if order % 2 == 1 && nyq {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, xi).powu(order)
}

/// `order`-th partial derivative of a plane along `axis` (1 or 2).
pub fn partial(chart: &Grid2Chart, plane: &[f64], axis: usize, order: u32) -> Vec<f64> {
    if order == 0 {
        return plane.to_vec();
    }
    let mut spec = forward(chart, plane);
    for (idx, c) in spec.iter_mut().enumerate() {
        *c *= derivative_symbol(chart, idx, axis, order);
    }
    inverse(chart, &spec)
}

/// Both first partials from a single forward transform.
pub fn gradient(chart: &Grid2Chart, plane: &[f64]) -> [Vec<f64>; 2] {
    let spec = forward(chart, plane);
    let d = |axis: usize| {
        let s: Vec<Complex64> = spec
            .iter()
            .enumerate()
            .map(|(idx, c)| c * derivative_symbol(chart, idx, axis, 1))
            .collect();
        inverse(chart, &s)
    };
    [d(1), d(2)]
}

/// Multiplies the spectrum by a real symbol `m(xi1, xi2)`.
pub fn apply_symbol(chart: &Grid2Chart, plane: &[f64], m: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut spec = forward(chart, plane);
    for (idx, c) in spec.iter_mut().enumerate() {
        let (xi1, xi2, _, _) = bin(chart, idx);
        *c *= m(xi1, xi2);
    }
    inverse(chart, &spec)
}

/// Flat Laplacian `d11 + d22`.
pub fn flat_laplacian(chart: &Grid2Chart, plane: &[f64]) -> Vec<f64> {
    apply_symbol(chart, plane, |a, b| -(a * a + b * b))
}

/// Flat bilaplacian.
pub fn flat_bilaplacian(chart: &Grid2Chart, plane: &[f64]) -> Vec<f64> {
    apply_symbol(chart, plane, |a, b| {
        let q = a * a + b * b;
        q * q
    })
}

/// 2/3-rule truncation: zeroes every bin with |k| > n/3 along either axis.
pub fn dealias(chart: &Grid2Chart, plane: &[f64]) -> Vec<f64> {
    let mut spec = forward(chart, plane);
    let cut1 = chart.n1 / 3;
    let cut2 = chart.n2 / 3;
    for (idx, c) in spec.iter_mut().enumerate() {
        let (k1, k2) = chart.node(idx);
        let a1 = k1.min(chart.n1 - k1);
        let a2 = k2.min(chart.n2 - k2);
        if a1 > cut1 || a2 > cut2 {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    inverse(chart, &spec)
}

/// Complex amplitude of integer mode `(m1, m2)` normalized so that
/// `cos(m1 * 2πx/L1 + m2 * 2πy/L2)` has amplitude 1.
pub fn mode_amplitude(chart: &Grid2Chart, plane: &[f64], m1: i64, m2: i64) -> f64 {
    let spec = forward(chart, plane);
    let k1 = m1.rem_euclid(chart.n1 as i64) as usize;
    let k2 = m2.rem_euclid(chart.n2 as i64) as usize;
    let c = spec[k1 * chart.n2 + k2];
    let scale = if m1 == 0 && m2 == 0 { 1.0 } else { 2.0 };
    scale * c.norm() / chart.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn roundtrip() {
        let c = Grid2Chart::new(1.0, 2.0, 8, 12).unwrap();
        let f = c.sample(|x, y| (2.0 * PI * x).sin() + (PI * y).cos() * 0.3 + 1.5);
        let back = inverse(&c, &forward(&c, &f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fourth_derivative_symbol() {
        let c = Grid2Chart::square(1.0, 16).unwrap();
        let k = 2.0 * PI * 3.0;
        let f = c.sample(|x, _| (k * x).cos());
        let d4 = partial(&c, &f, 1, 4);
        for (idx, v) in d4.iter().enumerate() {
            let (x, _) = c.coords(idx);
            assert!((v - k.powi(4) * (k * x).cos()).abs() < 1e-8 * k.powi(4));
        }
    }

    #[test]
    fn mode_amplitude_reads_cosine() {
        let c = Grid2Chart::square(2.0 * PI, 16).unwrap();
        let f = c.sample(|x, y| 0.7 * (2.0 * x + y).cos() + 0.1);
        assert!((mode_amplitude(&c, &f, 2, 1) - 0.7).abs() < 1e-13);
        assert!((mode_amplitude(&c, &f, 0, 0) - 0.1).abs() < 1e-13);
    }

    #[test]
    fn dealias_keeps_low_modes() {
        let c = Grid2Chart::square(2.0 * PI, 24).unwrap();
        let low = c.sample(|x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let high = c.sample(|x, _| (11.0 * x).cos());
        let mixed: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        let out = dealias(&c, &mixed);
        for (a, b) in out.iter().zip(&low) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
