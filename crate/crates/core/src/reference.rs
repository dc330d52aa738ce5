//! Baselines for the AP scheme: an IMEX kinetic solver for `ε = 1` and a
//! Fourier solver for the fractional heat equation `∂_t ρ + (−Δ_x)^s ρ = 0`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::ap_scheme::Field;
use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grids::{SpatialGrid, VelocityGrid};
use crate::linalg::{Factored, DEFAULT_CONDITION_CAP};

/// Default Courant number for the explicit transport guard.
pub const DEFAULT_CFL: f64 = 0.5;

/// Fourier coefficients of the limit density.
#[derive(Debug, Clone)]
pub struct LimitState {
    pub rho_hat: Vec<Complex64>,
    pub t: f64,
    pub s: f64,
}

impl LimitState {
    pub fn new(rho_in: &[f64], s: f64, fourier: &Fourier) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param("s", format!("s must lie in (0,1), got {s}")));
        }
        Ok(Self {
            rho_hat: fourier.coefficients(rho_in)?,
            t: 0.0,
            s,
        })
    }

    pub fn density(&self, fourier: &Fourier) -> Result<Vec<f64>> {
        fourier.synthesize(&self.rho_hat)
    }
}

/// One implicit Euler step `ρ̂_k ← ρ̂_k / (1 + Δt|ξ_k|^{2s})`.
pub fn limit_step(state: &LimitState, dt: f64, xi: &[f64]) -> LimitState {
    LimitState {
        rho_hat: crate::ap_scheme::step3_eta(&state.rho_hat, dt, state.s, xi),
        t: state.t + dt,
        s: state.s,
    }
}

/// Exact solution `ρ̂_k(t) = e^{−|ξ_k|^{2s} t} ρ̂_k(0)` sampled on the grid.
pub fn limit_solve_exact(rho_in: &[f64], t: f64, s: f64, fourier: &Fourier) -> Result<Vec<f64>> {
    let mut c = fourier.coefficients(rho_in)?;
    for (ck, &xi) in c.iter_mut().zip(fourier.xi()) {
        *ck *= (-xi.abs().powf(2.0 * s) * t).exp();
    }
    fourier.synthesize(&c)
}

/// Discretization of `v ∂_x f` in the IMEX reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// `f* = f − Δt v ∂_x f` with spectral `∂_x`. Neutrally stable at best:
    /// every mode grows by `|1 − iΔt v ξ| > 1`.
    ExplicitEuler,
    /// `f̂* = e^{−iΔt v ξ} f̂`, the exact transport flow per mode.
    ExactPhase,
}

/// Lie splitting: transport, then `(I − Δt P^s) f^{n+1} = f*` per column.
///
/// With a scaling parameter `ε` the equation is
/// `∂_t f + ε^{1−2s} v ∂_x f = ε^{−2s} 𝓛f`, which reduces to the kinetic
/// problem at `ε = 1`.
#[derive(Debug, Clone)]
pub struct ImexSolver {
    vgrid: VelocityGrid,
    fourier: Fourier,
    dt: f64,
    /// Transport speed factor `ε^{1−2s}`.
    speed: f64,
    transport: Transport,
    /// `(I − Δt P^s)^{-1}`, formed once so each step is a matrix product.
    inverse: DMatrix<f64>,
}

impl ImexSolver {
    pub fn new(
        ps: &CollisionOperator,
        xgrid: &SpatialGrid,
        dt: f64,
        transport: Transport,
        cfl: f64,
    ) -> Result<Self> {
        Self::scaled(ps, xgrid, dt, 1.0, transport, cfl)
    }

    pub fn scaled(
        ps: &CollisionOperator,
        xgrid: &SpatialGrid,
        dt: f64,
        eps: f64,
        transport: Transport,
        cfl: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        let s = ps.s();
        let speed = eps.powf(1.0 - 2.0 * s);
        let stiffness = eps.powf(-2.0 * s);
        let vgrid = ps.grid().clone();
        if transport == Transport::ExplicitEuler {
            let vmax = vgrid.v().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let bound = cfl * xgrid.dx() / (vmax * speed);
            if dt > bound {
                return Err(Error::StabilityBound { dt, bound });
            }
        }
        let n = ps.len();
        let a = DMatrix::identity(n, n) - ps.mat() * (dt * stiffness);
        let lu = Factored::new(a, DEFAULT_CONDITION_CAP)?;
        let mut inverse = DMatrix::identity(n, n);
        lu.solve_columns(&mut inverse);
        Ok(Self {
            vgrid,
            fourier: Fourier::new(xgrid),
            dt,
            speed,
            transport,
            inverse,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The transport half-step alone.
    pub fn transport(&self, f: &Field) -> Result<Field> {
        let dt = self.dt * self.speed;
        let mode = self.transport;
        let rows: Vec<Vec<f64>> = (0..f.nrows())
            .into_par_iter()
            .map(|j| {
                let v = self.vgrid.v()[j];
                let mut row: Vec<f64> = f.row(j).iter().copied().collect();
                self.fourier.apply_multiplier(&mut row, |xi| match mode {
                    Transport::ExplicitEuler => Complex64::new(1.0, -dt * v * xi),
                    Transport::ExactPhase => Complex64::from_polar(1.0, -dt * v * xi),
                })?;
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(f.nrows(), f.ncols(), |j, i| rows[j][i]))
    }

    pub fn step(&self, f: &Field) -> Result<Field> {
        if f.nrows() != self.vgrid.len() || f.ncols() != self.fourier.len() {
            return Err(Error::GridMismatch(format!(
                "field is {}x{}, solver expects {}x{}",
                f.nrows(),
                f.ncols(),
                self.vgrid.len(),
                self.fourier.len()
            )));
        }
        let star = self.transport(f)?;
        let next = &self.inverse * star;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: 1,
                what: "IMEX step produced non-finite values".into(),
            });
        }
        Ok(next)
    }

    /// Advances `n_steps`, calling `observe(step, f)` after each one.
    pub fn run(
        &self,
        f0: &Field,
        n_steps: usize,
        mut observe: impl FnMut(usize, &Field),
    ) -> Result<Field> {
        let mut f = f0.clone();
        for n in 1..=n_steps {
            f = self.step(&f)?;
            observe(n, &f);
        }
        Ok(f)
    }
}

/// Trigonometric interpolation of grid samples onto arbitrary points.
pub fn interpolate(values: &[f64], fourier: &Fourier, points: &[f64]) -> Result<Vec<f64>> {
    let c = fourier.coefficients(values)?;
    Ok(points.iter().map(|&x| fourier.evaluate_at(&c, x)).collect())
}

/// `Σ_i |a_i − b_i| Δx`.
pub fn l1_distance(a: &[f64], b: &[f64], dx: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::assemble_ps;
    use crate::fraclap::{assemble_ls, FracLapParams};
    use std::f64::consts::PI;

    #[test]
    fn limit_step_factors() {
        let grid = SpatialGrid::new(16, PI).unwrap();
        let four = Fourier::new(&grid);
        let rho = grid.sample(|x| 2.0 + x.sin());
        let st = LimitState::new(&rho, 0.5, &four).unwrap();
        let next = limit_step(&st, 0.1, four.xi());
        assert_eq!(next.rho_hat[0], st.rho_hat[0]);
        assert!((next.rho_hat[1] - st.rho_hat[1] / 1.1).norm() < 1e-15);
    }

    #[test]
    fn single_mode_decays_like_the_exponential() {
        let grid = SpatialGrid::new(32, PI).unwrap();
        let four = Fourier::new(&grid);
        let rho = grid.sample(|x| 1.0 + x.sin());
        for s in [0.3, 0.7] {
            let exact = limit_solve_exact(&rho, 1.0, s, &four).unwrap();
            let dt = 1e-4;
            let mut st = LimitState::new(&rho, s, &four).unwrap();
            for _ in 0..10_000 {
                st = limit_step(&st, dt, four.xi());
            }
            let num = st.density(&four).unwrap();
            // (1 + Δt)^{−1/Δt} − e^{−1} = e^{−1}Δt/2 + O(Δt²)
            let predicted = (-1.0f64).exp() * dt / 2.0;
            for ((x, e), r) in grid.x().iter().zip(&exact).zip(&num) {
                let closed = 1.0 + (-1.0f64).exp() * x.sin();
                assert!((e - closed).abs() < 1e-6, "s = {s}");
                assert!(
                    (r - closed - predicted * x.sin()).abs() < 1e-2 * predicted,
                    "s = {s}"
                );
            }
        }
    }

    #[test]
    fn implicit_limit_converges_at_first_order() {
        let grid = SpatialGrid::new(64, 5.0).unwrap();
        let four = Fourier::new(&grid);
        let rho = grid.sample(|x| (-15.0 * x * x).exp());
        let exact = limit_solve_exact(&rho, 0.5, 0.6, &four).unwrap();
        let err = |n: usize| {
            let mut st = LimitState::new(&rho, 0.6, &four).unwrap();
            for _ in 0..n {
                st = limit_step(&st, 0.5 / n as f64, four.xi());
            }
            l1_distance(&st.density(&four).unwrap(), &exact, grid.dx())
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn exact_limit_is_identity_at_zero_and_conserves_mass() {
        let grid = SpatialGrid::new(32, 5.0).unwrap();
        let four = Fourier::new(&grid);
        let rho = grid.sample(|x| (-x * x).exp());
        let same = limit_solve_exact(&rho, 0.0, 0.4, &four).unwrap();
        for (a, b) in same.iter().zip(&rho) {
            assert!((a - b).abs() < 1e-14);
        }
        let later = limit_solve_exact(&rho, 2.0, 0.4, &four).unwrap();
        let m0: f64 = rho.iter().sum();
        let m1: f64 = later.iter().sum();
        assert!((m0 - m1).abs() < 1e-12 * m0);
    }

    #[test]
    fn nonnegative_data_stays_nonnegative() {
        let grid = SpatialGrid::new(128, 5.0).unwrap();
        let four = Fourier::new(&grid);
        let rho = grid.sample(|x| (-15.0 * x * x).exp());
        for s in [0.4, 0.6, 0.8] {
            let out = limit_solve_exact(&rho, 0.1, s, &four).unwrap();
            let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10, "s = {s}: min {min}");
        }
    }

    /// At `s = 1/2` the kernel is the Poisson kernel `t/(π(x² + t²))`.
    #[test]
    fn half_order_matches_periodized_poisson_kernel() {
        let (l, n) = (5.0, 256);
        let grid = SpatialGrid::new(n, l).unwrap();
        let four = Fourier::new(&grid);
        let a = 50.0;
        let gauss = |x: f64| (-a * x * x).exp();
        let rho = grid.sample(gauss);
        let t = 1.0;
        let out = limit_solve_exact(&rho, t, 0.5, &four).unwrap();
        let kernel = |x: f64| {
            // Image sum over periods; the tail beyond is summed in closed form.
            let p = 2.0 * l;
            let mut acc = 0.0;
            let k_max = 2000;
            for k in -k_max..=k_max {
                let y = x + k as f64 * p;
                acc += t / (PI * (y * y + t * t));
            }
            acc + 2.0 * t / (PI * p * p * k_max as f64)
        };
        // Trapezoidal convolution over the support of the Gaussian.
        let m = 4001;
        let h = 2.0 / (m - 1) as f64;
        for (i, &x) in grid.x().iter().enumerate().step_by(16) {
            let mut acc = 0.0;
            for k in 0..m {
                let y = -1.0 + k as f64 * h;
                let wt = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
                acc += wt * gauss(y) * kernel(x - y);
            }
            acc *= h;
            assert!((out[i] - acc).abs() < 1e-4, "x = {x}: {} vs {acc}", out[i]);
        }
    }

    fn small_ops(s: f64) -> (VelocityGrid, CollisionOperator) {
        let vg = VelocityGrid::new(32, 3.0).unwrap();
        let ls = assemble_ls(&FracLapParams::new(s, 300).unwrap(), &vg).unwrap();
        let ps = assemble_ps(&ls, &vg).unwrap();
        (vg, ps)
    }

    #[test]
    fn euler_transport_has_the_scalar_amplification() {
        let (vg, ps) = small_ops(0.5);
        let xg = SpatialGrid::new(16, PI).unwrap();
        let dt = 1e-4;
        let solver = ImexSolver::new(&ps, &xg, dt, Transport::ExplicitEuler, DEFAULT_CFL).unwrap();
        let f = DMatrix::from_fn(vg.len(), xg.len(), |_, i| (2.0 * xg.x()[i]).cos());
        let out = solver.transport(&f).unwrap();
        for j in [0, 7, 16, 31] {
            let v = vg.v()[j];
            for (i, &x) in xg.x().iter().enumerate() {
                // Re[(1 − iΔt v ξ) e^{iξx}] with ξ = ±2
                let exact = (2.0 * x).cos() + dt * v * 2.0 * (2.0 * x).sin();
                assert!((out[(j, i)] - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfl_guard_rejects_large_steps() {
        let (_, ps) = small_ops(0.5);
        let xg = SpatialGrid::new(16, PI).unwrap();
        let r = ImexSolver::new(&ps, &xg, 0.1, Transport::ExplicitEuler, DEFAULT_CFL);
        assert!(matches!(r, Err(Error::StabilityBound { .. })));
        assert!(ImexSolver::new(&ps, &xg, 0.1, Transport::ExactPhase, DEFAULT_CFL).is_ok());
    }

    #[test]
    fn spatially_uniform_equilibrium_is_steady() {
        let (vg, ps) = small_ops(0.8);
        let eq = crate::collision::compute_equilibrium(&ps, 0.01, 1e-8).unwrap();
        let xg = SpatialGrid::new(16, PI).unwrap();
        let solver = ImexSolver::new(&ps, &xg, 1e-3, Transport::ExactPhase, DEFAULT_CFL).unwrap();
        let f = DMatrix::from_fn(vg.len(), xg.len(), |j, _| 2.0 * eq.m[j]);
        let next = solver.step(&f).unwrap();
        let scale = f.amax();
        assert!((next - &f).amax() < 1e-5 * scale);
    }
}
