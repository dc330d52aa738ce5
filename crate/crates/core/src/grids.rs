//! Velocity and spatial grids.
//!
//! The velocity line is mapped to `q ∈ (0, π)` through `v = L_v cot(q)` and
//! sampled at the half-offset points `q_j = π(2j+1)/(2N_v)`, so no grid point
//! ever sits on `q = 0` or `q = π` and every `v_j` is finite. Integrals over
//! `v` become midpoint sums in `q` with the Jacobian `w_j = L_v / sin²(q_j)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    n: usize,
    l_v: f64,
    q: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    dq: f64,
}

impl VelocityGrid {
    pub fn new(n_v: usize, l_v: f64) -> Result<Self> {
        if n_v < 2 || !n_v.is_multiple_of(2) {
            return Err(Error::param(
                "n_v",
                format!("must be even and >= 2, got {n_v}"),
            ));
        }
        if !(l_v > 0.0) || !l_v.is_finite() {
            return Err(Error::param("l_v", format!("must be positive, got {l_v}")));
        }
        let dq = PI / n_v as f64;
        let q: Vec<f64> = (0..n_v).map(|j| Self::node(j, n_v)).collect();
        let mut v = vec![0.0; n_v];
        let mut w = vec![0.0; n_v];
        // Fill the left half and mirror, so the symmetries hold bit-for-bit.
        for j in 0..n_v / 2 {
            let (sin, cos) = q[j].sin_cos();
            v[j] = l_v * cos / sin;
            w[j] = l_v / (sin * sin);
            v[n_v - 1 - j] = -v[j];
            w[n_v - 1 - j] = w[j];
        }
        Ok(Self {
            n: n_v,
            l_v,
            q,
            v,
            w,
            dq,
        })
    }

    /// `q_j = π(2j+1)/(2n)`; valid for `j < 2n` on the even-extended grid.
    #[inline]
    pub fn node(j: usize, n: usize) -> f64 {
        PI * (2 * j + 1) as f64 / (2 * n) as f64
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn l_v(&self) -> f64 {
        self.l_v
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn dq(&self) -> f64 {
        self.dq
    }

    /// Samples a function of the physical velocity on the grid.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.v.iter().map(|&v| f(v)).collect()
    }

    /// `Σ_j f_j w_j Δq`, the quadrature of `∫_ℝ f dv`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: f.len(),
            });
        }
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.w).map(|(f, w)| f * w).sum::<f64>() * self.dq
    }

    /// Weighted L¹ distance `Σ_j |a_j − b_j| w_j Δq`.
    pub fn weighted_l1(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.w)
            .map(|((a, b), w)| (a - b).abs() * w)
            .sum::<f64>()
            * self.dq
    }

    pub(crate) fn same_as(&self, other: &VelocityGrid) -> bool {
        self.n == other.n && self.l_v.to_bits() == other.l_v.to_bits()
    }
}

/// Free-function form of [`VelocityGrid::integrate`].
pub fn integrate_v(f: &[f64], grid: &VelocityGrid) -> Result<f64> {
    grid.integrate(f)
}

/// Uniform periodic grid on `[−L_x, L_x]` with cell-centred points.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n: usize,
    l_x: f64,
    x: Vec<f64>,
    dx: f64,
    xi: Vec<f64>,
}

impl SpatialGrid {
    pub fn new(n_x: usize, l_x: f64) -> Result<Self> {
        if n_x < 2 || !n_x.is_multiple_of(2) {
            return Err(Error::param(
                "n_x",
                format!("must be even and >= 2, got {n_x}"),
            ));
        }
        if !(l_x > 0.0) || !l_x.is_finite() {
            return Err(Error::param("l_x", format!("must be positive, got {l_x}")));
        }
        let dx = 2.0 * l_x / n_x as f64;
        let x = (0..n_x).map(|i| -l_x + (i as f64 + 0.5) * dx).collect();
        let xi = (0..n_x)
            .map(|k| PI * Self::signed_index(k, n_x) as f64 / l_x)
            .collect();
        Ok(Self {
            n: n_x,
            l_x,
            x,
            dx,
            xi,
        })
    }

    /// FFT-order index `k` mapped to the symmetric range `[−n/2, n/2)`.
    #[inline]
    pub fn signed_index(k: usize, n: usize) -> i64 {
        if k < n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn l_x(&self) -> f64 {
        self.l_x
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Wavenumbers in FFT storage order: `ξ[k] = π·signed(k)/L_x`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Index of the unpaired Nyquist mode `k = −n/2` in FFT order.
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.x.iter().map(|&x| f(x)).collect()
    }
}

pub fn build_velocity_grid(n_v: usize, l_v: f64) -> Result<VelocityGrid> {
    VelocityGrid::new(n_v, l_v)
}

pub fn build_spatial_grid(n_x: usize, l_x: f64) -> Result<SpatialGrid> {
    SpatialGrid::new(n_x, l_x)
}
