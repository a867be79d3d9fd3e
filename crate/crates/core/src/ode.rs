//! Dormand–Prince 5(4) with embedded error control for the closed-form
//! coefficient flows.

use crate::error::{FocfError, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h0: 1e-3, h_min: 1e-12, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

/// One accepted step: new time, new state and the scaled error estimate.
#[derive(Debug, Clone)]
pub struct OdeStep {
    pub t: f64,
    pub y: Vec<f64>,
    pub err: f64,
}

/// Integrates `y' = f(y)` from `t0` to `t1`, calling `accept` after every
/// accepted step. `f` may fail (e.g. positivity lost), which rejects the step.
pub fn dopri5<F, G>(f: F, t0: f64, y0: &[f64], t1: f64, opts: &Dopri5Options, mut accept: G) -> Result<Vec<OdeStep>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    G: FnMut(&OdeStep) -> bool,
{
    if !(t1 > t0) {
        return Err(FocfError::RangeEmpty(format!("[{t0}, {t1}]")));
    }
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = opts.h0.min(t1 - t0).min(opts.h_max);
    let mut out = Vec::new();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = f(&y)?;
    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(FocfError::StepRejected(format!("step budget exhausted at t = {t}")));
        }
        steps += 1;
        if t + h > t1 {
            h = t1 - t;
        }
        let mut ok = true;
        for s in 1..7 {
            let ys: Vec<f64> = (0..n).map(|i| y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>()).collect();
            match f(&ys) {
                Ok(v) => k[s] = v,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            h *= 0.25;
            if h < opts.h_min {
                return Err(FocfError::StepRejected(format!("step size underflow at t = {t}")));
            }
            continue;
        }
        let y5: Vec<f64> = (0..n).map(|i| y[i] + h * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>()).collect();
        let err = ((0..n)
            .map(|i| {
                let e = h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>();
                let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n as f64)
            .sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
            k[0] = k[6].clone();
            let step = OdeStep { t, y: y.clone(), err };
            let keep_going = accept(&step);
            out.push(step);
            if !keep_going {
                break;
            }
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * fac).min(opts.h_max);
        if h < opts.h_min {
            return Err(FocfError::StepRejected(format!("step size underflow at t = {t}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |y: &[f64]| Ok(vec![-y[0], -2.0 * y[1]]);
        let steps = dopri5(f, 0.0, &[1.0, 1.0], 2.0, &Dopri5Options::default(), |_| true).unwrap();
        let last = steps.last().unwrap();
        assert!((last.t - 2.0).abs() < 1e-14);
        assert!((last.y[0] - (-2.0f64).exp()).abs() < 1e-10);
        assert!((last.y[1] - (-4.0f64).exp()).abs() < 1e-10);
        assert!(steps.iter().all(|s| s.err <= 1.0));
    }
}
