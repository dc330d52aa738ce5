//! Periodic Fourier transforms on a [`SpatialGrid`].
//!
//! Coefficients use the physical convention `h(x) = Σ_k ĥ_k e^{iξ_k x}`, so a
//! shift `x → x + a` is the phase `e^{iξ_k a}` regardless of where the grid
//! starts.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grids::SpatialGrid;

#[derive(Clone)]
pub struct Fourier {
    n: usize,
    xi: Vec<f64>,
    x0: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier")
            .field("n", &self.n)
            .field("x0", &self.x0)
            .finish()
    }
}

impl Fourier {
    pub fn new(grid: &SpatialGrid) -> Self {
        let n = grid.len();
        let mut planner = FftPlanner::new();
        Self {
            n,
            xi: grid.xi().to_vec(),
            x0: grid.x()[0],
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got,
            });
        }
        Ok(())
    }

    /// Physical-convention coefficients of grid samples.
    pub fn coefficients(&self, h: &[f64]) -> Result<Vec<Complex64>> {
        self.check(h.len())?;
        let mut buf: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for (c, &xi) in buf.iter_mut().zip(&self.xi) {
            *c *= Complex64::from_polar(scale, -xi * self.x0);
        }
        Ok(buf)
    }

    /// Samples `Re Σ_k ĥ_k e^{iξ_k (x_i + shift)}` on the grid.
    pub fn evaluate_shifted(&self, h_hat: &[Complex64], shift: f64) -> Result<Vec<f64>> {
        self.check(h_hat.len())?;
        let mut buf: Vec<Complex64> = h_hat
            .iter()
            .zip(&self.xi)
            .map(|(&c, &xi)| c * Complex64::from_polar(1.0, xi * (self.x0 + shift)))
            .collect();
        self.inverse.process(&mut buf);
        Ok(buf.iter().map(|c| c.re).collect())
    }

    pub fn synthesize(&self, h_hat: &[Complex64]) -> Result<Vec<f64>> {
        self.evaluate_shifted(h_hat, 0.0)
    }

    /// Trigonometric interpolant at an arbitrary point.
    pub fn evaluate_at(&self, h_hat: &[Complex64], x: f64) -> f64 {
        h_hat
            .iter()
            .zip(&self.xi)
            .map(|(&c, &xi)| (c * Complex64::from_polar(1.0, xi * x)).re)
            .sum()
    }

    /// Multiplies the coefficients of `row` by `mult(ξ_k)` in place; the
    /// real part of the result is kept.
    pub fn apply_multiplier(&self, row: &mut [f64], mult: impl Fn(f64) -> Complex64) -> Result<()> {
        self.check(row.len())?;
        let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for (c, &xi) in buf.iter_mut().zip(&self.xi) {
            *c *= mult(xi) * scale;
        }
        self.inverse.process(&mut buf);
        for (r, c) in row.iter_mut().zip(&buf) {
            *r = c.re;
        }
        Ok(())
    }
}
