use crate::error::{FocfError, Result};
use std::f64::consts::PI;

/// Periodic rectangular chart of the flat 2-torus.
///
/// Node `(i, j)` sits at `(i * h1, j * h2)`; `i` runs along axis 1. Field
/// planes are stored row-major with `j` fastest: `index = i * n2 + j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2Chart {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Grid2Chart {
    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(FocfError::Invalid(format!("period lengths must be positive, got {l1}, {l2}")));
        }
        if n1 < 8 || n2 < 8 || n1 % 2 != 0 || n2 % 2 != 0 {
            return Err(FocfError::Invalid(format!("node counts must be even and >= 8, got {n1}x{n2}")));
        }
        Ok(Self { l1, l2, n1, n2 })
    }

    /// Square chart with period `l` and `n` nodes per axis.
    pub fn square(l: f64, n: usize) -> Result<Self> {
        Self::new(l, l, n, n)
    }

    pub fn h1(&self) -> f64 {
        self.l1 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        self.l2 / self.n2 as f64
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(i, j)`, wrapping both coordinates.
    pub fn idx(&self, i: isize, j: isize) -> usize {
        let i = i.rem_euclid(self.n1 as isize) as usize;
        let j = j.rem_euclid(self.n2 as isize) as usize;
        i * self.n2 + j
    }

    pub fn node(&self, idx: usize) -> (usize, usize) {
        (idx / self.n2, idx % self.n2)
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.node(idx);
        (i as f64 * self.h1(), j as f64 * self.h2())
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (x, y) = self.coords(k);
                f(x, y)
            })
            .collect()
    }

    /// Angular wavenumber of FFT bin `k` along an axis with `n` nodes and period `l`.
    pub fn wavenumber(k: usize, n: usize, l: f64) -> f64 {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * PI * signed / l
    }

    pub fn same_as(&self, other: &Grid2Chart) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FocfError::ChartMismatch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_small_grids() {
        assert!(Grid2Chart::new(1.0, 1.0, 7, 8).is_err());
        assert!(Grid2Chart::new(1.0, 1.0, 6, 6).is_err());
        assert!(Grid2Chart::new(0.0, 1.0, 8, 8).is_err());
        assert!(Grid2Chart::new(1.0, 2.0, 8, 16).is_ok());
    }

    #[test]
    fn indices_wrap() {
        let c = Grid2Chart::new(1.0, 1.0, 8, 10).unwrap();
        assert_eq!(c.idx(-1, 0), c.idx(7, 0));
        assert_eq!(c.idx(8, 11), c.idx(0, 1));
        assert_eq!(c.node(c.idx(3, 4)), (3, 4));
    }
}
