//! Micro-macro asymptotic-preserving scheme for
//! `ε^{2s} ∂_t f + ε v ∂_x f = P^s f` on a periodic interval.
//!
//! The distribution is split as `f = η M + g` with `η(t,x,v) = h(t, x + εv)`.
//! One time step runs three sub-steps in order:
//!
//! 1. per spatial column, `[(r+γ)I − P^s] g* = r gⁿ − I(ηⁿ, M)` with `r = ε^{2s}/Δt`;
//! 2. per velocity row in Fourier, `ĝ^{n+1} = r ĝ* / (r − γ + iεv_jξ_k)`;
//! 3. per mode, `ĥ^{n+1} = ĥⁿ / (1 + Δt|ξ_k|^{2s})`.
//!
//! Fields over `(x, v)` are stored as `N_v × N_x` matrices: column `i` is the
//! velocity profile at `x_i`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::collision::{CollisionOperator, GrowingModes};
use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::fraclap::SpectralOperator;
use crate::grids::{SpatialGrid, VelocityGrid};
use crate::linalg::{condition_number, Factored, DEFAULT_CONDITION_CAP};

/// Below this `|ε^{2s}/Δt − γ|` the zero spatial mode of Step 2 is singular.
pub const ZERO_MODE_GUARD: f64 = 1e-10;

/// Tolerance for the `ρ_in = ∫ f_in dv` consistency check.
pub const DENSITY_CHECK_TOL: f64 = 1e-8;

pub type Field = DMatrix<f64>;

/// Macro carrier `ĥ`, micro part `g` and the scheme parameters.
#[derive(Debug, Clone)]
pub struct SplitState {
    pub h_hat: Vec<Complex64>,
    pub g: Field,
    pub t: f64,
    pub eps: f64,
    pub s: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub step: usize,
    pub t: f64,
    pub e_f: f64,
    pub e_g: f64,
    pub e_eta: f64,
    pub ap_error: f64,
    /// `Σ_i ρ_i Δx`.
    pub mass: f64,
}

/// Immutable data shared by every step: grids, operators and the equilibrium.
#[derive(Debug, Clone)]
pub struct ApOperators {
    pub vgrid: VelocityGrid,
    pub xgrid: SpatialGrid,
    pub fourier: Fourier,
    pub ls: SpectralOperator,
    pub ps: CollisionOperator,
    pub m: Vec<f64>,
    ls_m: Vec<f64>,
}

impl ApOperators {
    pub fn new(
        xgrid: SpatialGrid,
        ls: SpectralOperator,
        ps: CollisionOperator,
        m: Vec<f64>,
    ) -> Result<Self> {
        let vgrid = ls.grid().clone();
        if m.len() != vgrid.len() {
            return Err(Error::LengthMismatch {
                expected: vgrid.len(),
                got: m.len(),
            });
        }
        if let Some(j) = m.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::param(
                "M",
                format!("equilibrium must be positive, M[{j}] = {}", m[j]),
            ));
        }
        let ls_m = ls.apply(&m);
        Ok(Self {
            fourier: Fourier::new(&xgrid),
            vgrid,
            xgrid,
            ls,
            ps,
            m,
            ls_m,
        })
    }

    pub fn n_v(&self) -> usize {
        self.vgrid.len()
    }

    pub fn n_x(&self) -> usize {
        self.xgrid.len()
    }

    /// `∫ f dv` for each column.
    pub fn density(&self, f: &Field) -> Vec<f64> {
        f.column_iter()
            .map(|c| {
                c.iter()
                    .zip(self.vgrid.w())
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
                    * self.vgrid.dq()
            })
            .collect()
    }
}

/// Selects one of the built-in initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    /// `π^{−1/2}(1 + sin(πx/L_x)) e^{−v²}`
    Ic1,
    /// `π^{−1/2} e^{−15x²} e^{−v²}`
    Ic2,
    /// `π^{−1/2} e^{−v²}`, uniform in `x`
    GaussianV,
}

impl InitialCondition {
    pub fn sample(self, xgrid: &SpatialGrid, vgrid: &VelocityGrid) -> Field {
        let l_x = xgrid.l_x();
        let c = 1.0 / PI.sqrt();
        let rho = |x: f64| match self {
            InitialCondition::Ic1 => 1.0 + (PI * x / l_x).sin(),
            InitialCondition::Ic2 => (-15.0 * x * x).exp(),
            InitialCondition::GaussianV => 1.0,
        };
        DMatrix::from_fn(vgrid.len(), xgrid.len(), |j, i| {
            let v = vgrid.v()[j];
            c * rho(xgrid.x()[i]) * (-v * v).exp()
        })
    }
}

/// `L_s(η⊙M) − M⊙L_s η − η⊙L_s M` for one velocity profile.
pub fn commutator_i(eta_col: &[f64], m: &[f64], ls: &SpectralOperator) -> Vec<f64> {
    let n = ls.len();
    assert!(
        eta_col.len() == n && m.len() == n,
        "commutator_i: size mismatch"
    );
    let prod: Vec<f64> = eta_col.iter().zip(m).map(|(a, b)| a * b).collect();
    let l_prod = ls.apply(&prod);
    let l_eta = ls.apply(eta_col);
    let l_m = ls.apply(m);
    (0..n)
        .map(|j| l_prod[j] - m[j] * l_eta[j] - eta_col[j] * l_m[j])
        .collect()
}

/// Column-wise [`commutator_i`] over a whole field.
pub fn commutator_field(eta: &Field, ops: &ApOperators) -> Field {
    let mut prod = eta.clone();
    for mut col in prod.column_iter_mut() {
        for (x, m) in col.iter_mut().zip(&ops.m) {
            *x *= m;
        }
    }
    let l = ops.ls.mat();
    let mut out = l * &prod;
    let l_eta = l * eta;
    for i in 0..eta.ncols() {
        for j in 0..eta.nrows() {
            out[(j, i)] -= ops.m[j] * l_eta[(j, i)] + eta[(j, i)] * ops.ls_m[j];
        }
    }
    out
}

/// `η(x_i, v_j) = Σ_k ĥ_k e^{iξ_k(x_i + εv_j)}`.
pub fn eval_eta(h_hat: &[Complex64], eps: f64, ops: &ApOperators) -> Result<Field> {
    let rows: Vec<Vec<f64>> = ops
        .vgrid
        .v()
        .par_iter()
        .map(|&v| ops.fourier.evaluate_shifted(h_hat, eps * v))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(ops.n_v(), ops.n_x(), |j, i| rows[j][i]))
}

/// Splits `f_in` into `η M + g` with `h(0,·) = ρ_in`.
pub fn decompose_initial(
    f_in: &Field,
    rho_in: Option<&[f64]>,
    eps: f64,
    s: f64,
    gamma: f64,
    ops: &ApOperators,
) -> Result<SplitState> {
    check_shape(f_in, ops)?;
    let discrete = ops.density(f_in);
    let rho = match rho_in {
        Some(r) => {
            if r.len() != ops.n_x() {
                return Err(Error::LengthMismatch {
                    expected: ops.n_x(),
                    got: r.len(),
                });
            }
            let deviation = r
                .iter()
                .zip(&discrete)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if deviation > DENSITY_CHECK_TOL {
                return Err(Error::DensityMismatch { deviation });
            }
            r.to_vec()
        }
        None => discrete,
    };
    let h_hat = ops.fourier.coefficients(&rho)?;
    let eta = eval_eta(&h_hat, eps, ops)?;
    let mut g = f_in.clone();
    for i in 0..ops.n_x() {
        for j in 0..ops.n_v() {
            g[(j, i)] -= eta[(j, i)] * ops.m[j];
        }
    }
    Ok(SplitState {
        h_hat,
        g,
        t: 0.0,
        eps,
        s,
        gamma,
    })
}

fn check_shape(f: &Field, ops: &ApOperators) -> Result<()> {
    if f.nrows() != ops.n_v() || f.ncols() != ops.n_x() {
        return Err(Error::GridMismatch(format!(
            "field is {}x{}, grids are N_v={} by N_x={}",
            f.nrows(),
            f.ncols(),
            ops.n_v(),
            ops.n_x()
        )));
    }
    Ok(())
}

/// `r = ε^{2s}/Δt`.
pub fn relaxation_rate(eps: f64, s: f64, dt: f64) -> f64 {
    eps.powf(2.0 * s) / dt
}

/// The Step 1 matrix `(r + γ)I − P^s`.
pub fn step1_matrix(ps: &CollisionOperator, eps: f64, dt: f64, gamma: f64) -> Field {
    let n = ps.len();
    let r = relaxation_rate(eps, ps.s(), dt);
    DMatrix::identity(n, n) * (r + gamma) - ps.mat()
}

/// 2-norm condition number of [`step1_matrix`].
pub fn step1_condition(ps: &CollisionOperator, eps: f64, dt: f64, gamma: f64) -> f64 {
    condition_number(&step1_matrix(ps, eps, dt, gamma))
}

/// Step 1 with a freshly factored matrix. [`ApSolver`] reuses one factorization.
pub fn step1_collision(
    g_n: &Field,
    eta_n: &Field,
    eps: f64,
    dt: f64,
    gamma: f64,
    ops: &ApOperators,
) -> Result<Field> {
    let lu = Factored::new(step1_matrix(&ops.ps, eps, dt, gamma), DEFAULT_CONDITION_CAP)?;
    step1_with(&lu, g_n, eta_n, relaxation_rate(eps, ops.ps.s(), dt), ops)
}

fn step1_with(
    lu: &Factored,
    g_n: &Field,
    eta_n: &Field,
    r: f64,
    ops: &ApOperators,
) -> Result<Field> {
    check_shape(g_n, ops)?;
    check_shape(eta_n, ops)?;
    let mut rhs = g_n * r - commutator_field(eta_n, ops);
    lu.solve_columns(&mut rhs);
    Ok(rhs)
}

fn check_zero_mode(r: f64, gamma: f64) -> Result<()> {
    let gap = (r - gamma).abs();
    if gap < ZERO_MODE_GUARD {
        return Err(Error::ZeroModeGuard { gap });
    }
    Ok(())
}

/// Step 2: `ĝ^{n+1}_{j,k} = r ĝ*_{j,k} / (r − γ + iεv_jξ_k)` row by row.
pub fn step2_transport(
    g_star: &Field,
    eps: f64,
    s: f64,
    dt: f64,
    gamma: f64,
    ops: &ApOperators,
) -> Result<Field> {
    check_shape(g_star, ops)?;
    let r = relaxation_rate(eps, s, dt);
    check_zero_mode(r, gamma)?;
    let rows: Vec<Vec<f64>> = (0..ops.n_v())
        .into_par_iter()
        .map(|j| {
            let ev = eps * ops.vgrid.v()[j];
            let mut row: Vec<f64> = g_star.row(j).iter().copied().collect();
            ops.fourier.apply_multiplier(&mut row, |xi| {
                Complex64::new(r, 0.0) / Complex64::new(r - gamma, ev * xi)
            })?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(ops.n_v(), ops.n_x(), |j, i| rows[j][i]))
}

/// Step 3: implicit Euler for `∂_t h = −(−Δ_x)^s h`, mode by mode.
pub fn step3_eta(h_hat: &[Complex64], dt: f64, s: f64, xi: &[f64]) -> Vec<Complex64> {
    h_hat
        .iter()
        .zip(xi)
        .map(|(&c, &k)| c / (1.0 + dt * k.abs().powf(2.0 * s)))
        .collect()
}

/// `f = η⊙M + g` and `ρ = ∫ f dv`.
pub fn reconstruct_and_density(state: &SplitState, ops: &ApOperators) -> Result<(Field, Vec<f64>)> {
    let eta = eval_eta(&state.h_hat, state.eps, ops)?;
    let f = reconstruct_with(&eta, &state.g, ops);
    let rho = ops.density(&f);
    Ok((f, rho))
}

fn reconstruct_with(eta: &Field, g: &Field, ops: &ApOperators) -> Field {
    let mut f = g.clone();
    for i in 0..ops.n_x() {
        for j in 0..ops.n_v() {
            f[(j, i)] += eta[(j, i)] * ops.m[j];
        }
    }
    f
}

/// Weighted energies, the AP error and the total mass.
pub fn energies(state: &SplitState, step: usize, ops: &ApOperators) -> Result<EnergyRecord> {
    let eta = eval_eta(&state.h_hat, state.eps, ops)?;
    let f = reconstruct_with(&eta, &state.g, ops);
    let rho = ops.density(&f);
    let cell = ops.vgrid.dq() * ops.xgrid.dx();
    let (mut e_f, mut e_g, mut e_eta, mut ap) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..ops.n_x() {
        for j in 0..ops.n_v() {
            let (w, m) = (ops.vgrid.w()[j], ops.m[j]);
            let fij = f[(j, i)];
            e_f += fij * fij / m * w;
            e_g += state.g[(j, i)].powi(2) / m * w;
            e_eta += eta[(j, i)].powi(2) * m * w;
            ap += (rho[i] * m - fij).abs() * w;
        }
    }
    Ok(EnergyRecord {
        step,
        t: state.t,
        e_f: e_f * cell,
        e_g: e_g * cell,
        e_eta: e_eta * cell,
        ap_error: ap * cell,
        mass: rho.iter().sum::<f64>() * ops.xgrid.dx(),
    })
}

/// Scheme parameters fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApParams {
    pub eps: f64,
    pub gamma: f64,
    pub dt: f64,
    /// Remove the non-integrable growing modes of `P^s` from the spatial
    /// mean of `g*` after Step 1.
    pub project_growing_modes: bool,
    pub condition_cap: f64,
}

impl ApParams {
    pub fn new(eps: f64, gamma: f64, dt: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(
                "gamma",
                format!("must be positive, got {gamma}"),
            ));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        Ok(Self {
            eps,
            gamma,
            dt,
            project_growing_modes: true,
            condition_cap: DEFAULT_CONDITION_CAP,
        })
    }
}

/// Time stepper holding the Step 1 factorization.
#[derive(Debug, Clone)]
pub struct ApSolver<'a> {
    ops: &'a ApOperators,
    params: ApParams,
    r: f64,
    lu: Factored,
    modes: Option<GrowingModes>,
}

impl<'a> ApSolver<'a> {
    pub fn new(ops: &'a ApOperators, params: ApParams) -> Result<Self> {
        let s = ops.ps.s();
        let r = relaxation_rate(params.eps, s, params.dt);
        check_zero_mode(r, params.gamma)?;
        let lu = Factored::new(
            step1_matrix(&ops.ps, params.eps, params.dt, params.gamma),
            params.condition_cap,
        )?;
        let modes = if params.project_growing_modes {
            Some(GrowingModes::new(&ops.ps)?)
        } else {
            None
        };
        Ok(Self {
            ops,
            params,
            r,
            lu,
            modes,
        })
    }

    pub fn params(&self) -> &ApParams {
        &self.params
    }

    /// Condition number of the Step 1 matrix.
    pub fn condition(&self) -> f64 {
        self.lu.condition()
    }

    pub fn initial_state(&self, f_in: &Field, rho_in: Option<&[f64]>) -> Result<SplitState> {
        decompose_initial(
            f_in,
            rho_in,
            self.params.eps,
            self.ops.ps.s(),
            self.params.gamma,
            self.ops,
        )
    }

    /// Removes the growing modes of `P^s` from the spatial mean of `g`.
    ///
    /// On the `ξ = 0` mode Step 2 multiplies every velocity row by the same
    /// factor `r/(r − γ)`, so the constant eigenvector of `P^s` (eigenvalue 1)
    /// is amplified by `|r/(r − γ)|` per step, which exceeds one whenever
    /// `r > γ/2`. For `ξ ≠ 0` the row factors differ and the mode does not
    /// persist, so only the mean is touched.
    fn project_mean(&self, g: &mut Field) {
        let Some(modes) = &self.modes else { return };
        let nx = g.ncols() as f64;
        let mean: Vec<f64> = g.row_iter().map(|r| r.sum() / nx).collect();
        let mut cleaned = mean.clone();
        modes.remove(&mut cleaned);
        for mut col in g.column_iter_mut() {
            for (j, x) in col.iter_mut().enumerate() {
                *x += cleaned[j] - mean[j];
            }
        }
    }

    pub fn step(&self, state: &mut SplitState) -> Result<()> {
        let ops = self.ops;
        let p = &self.params;
        let s = ops.ps.s();
        let eta = eval_eta(&state.h_hat, p.eps, ops)?;
        let mut g_star = step1_with(&self.lu, &state.g, &eta, self.r, ops)?;
        self.project_mean(&mut g_star);
        let g_next = step2_transport(&g_star, p.eps, s, p.dt, p.gamma, ops)?;
        if g_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: 1,
                what: format!("AP step at t = {} produced non-finite values", state.t),
            });
        }
        state.g = g_next;
        state.h_hat = step3_eta(&state.h_hat, p.dt, s, ops.fourier.xi());
        state.t += p.dt;
        Ok(())
    }

    /// Runs `n_steps` steps, recording energies before the first and after each step.
    pub fn run(&self, state: &mut SplitState, n_steps: usize) -> Result<Vec<EnergyRecord>> {
        let mut records = Vec::with_capacity(n_steps + 1);
        records.push(energies(state, 0, self.ops)?);
        for n in 1..=n_steps {
            self.step(state)?;
            records.push(energies(state, n, self.ops)?);
        }
        Ok(records)
    }
}

/// Number of steps of size `dt` that reach `t_end`, rejecting non-integer ratios.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::param(
            "T",
            format!("need T >= 0 and dt > 0, got T = {t_end}, dt = {dt}"),
        ));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::param(
            "T",
            format!("T = {t_end} is not a multiple of dt = {dt}"),
        ));
    }
    Ok(n as usize)
}

/// `e_Δt = Σ |f^{Δt} − f^{Δt/2}| w Δq Δx`.
pub fn field_l1_distance(a: &Field, b: &Field, ops: &ApOperators) -> f64 {
    let mut acc = 0.0;
    for i in 0..ops.n_x() {
        for j in 0..ops.n_v() {
            acc += (a[(j, i)] - b[(j, i)]).abs() * ops.vgrid.w()[j];
        }
    }
    acc * ops.vgrid.dq() * ops.xgrid.dx()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{assemble_ps, normalize_mass};
    use crate::fraclap::{assemble_ls, c_s1, FracLapParams};
    use crate::quadrature;
    use proptest::prelude::*;

    /// Operators with a unit-mass Cauchy profile standing in for `M`.
    fn fixture(s: f64, n_v: usize, n_x: usize, l_x: f64) -> ApOperators {
        let vg = VelocityGrid::new(n_v, 3.0).unwrap();
        let ls = assemble_ls(&FracLapParams::new(s, 300).unwrap(), &vg).unwrap();
        let ps = assemble_ps(&ls, &vg).unwrap();
        let m = normalize_mass(&vg.sample(|v| 1.0 / (1.0 + v * v)), &vg);
        ApOperators::new(SpatialGrid::new(n_x, l_x).unwrap(), ls, ps, m).unwrap()
    }

    fn max_abs(f: &Field) -> f64 {
        f.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    fn constant_state(c: f64, ops: &ApOperators, eps: f64) -> SplitState {
        let mut h_hat = vec![Complex64::new(0.0, 0.0); ops.n_x()];
        h_hat[0] = Complex64::new(c, 0.0);
        SplitState {
            h_hat,
            g: Field::zeros(ops.n_v(), ops.n_x()),
            t: 0.0,
            eps,
            s: ops.ps.s(),
            gamma: 1.0,
        }
    }

    fn ic1_rho(x: f64) -> f64 {
        1.0 + x.sin()
    }

    #[test]
    fn consistent_data_has_no_micro_part() {
        let ops = fixture(0.6, 32, 32, PI);
        let eps = 1e-5;
        let f_in = DMatrix::from_fn(32, 32, |j, i| {
            ic1_rho(ops.xgrid.x()[i] + eps * ops.vgrid.v()[j]) * ops.m[j]
        });
        let rho_in: Vec<f64> = ops.xgrid.x().iter().map(|&x| ic1_rho(x)).collect();
        let state = decompose_initial(&f_in, Some(&rho_in), eps, 0.6, 1.0, &ops).unwrap();
        assert!(max_abs(&state.g) < 1e-13, "g = {:e}", max_abs(&state.g));
    }

    #[test]
    fn inconsistent_density_is_rejected() {
        let ops = fixture(0.6, 32, 16, PI);
        let f_in = InitialCondition::Ic1.sample(&ops.xgrid, &ops.vgrid);
        let mut rho_in = ops.density(&f_in);
        assert!(decompose_initial(&f_in, Some(&rho_in), 0.1, 0.6, 1.0, &ops).is_ok());
        rho_in[3] += 1e-6;
        assert!(matches!(
            decompose_initial(&f_in, Some(&rho_in), 0.1, 0.6, 1.0, &ops),
            Err(Error::DensityMismatch { .. })
        ));
        assert!(decompose_initial(&f_in, Some(&rho_in[1..]), 0.1, 0.6, 1.0, &ops).is_err());
    }

    #[test]
    fn vanishing_eps_gives_unshifted_eta() {
        let ops = fixture(0.6, 32, 16, PI);
        let f_in = InitialCondition::Ic1.sample(&ops.xgrid, &ops.vgrid);
        let rho = ops.density(&f_in);
        let state = decompose_initial(&f_in, None, 1e-14, 0.6, 1.0, &ops).unwrap();
        let eta = eval_eta(&state.h_hat, 1e-14, &ops).unwrap();
        for i in 0..16 {
            for j in 0..32 {
                assert!((eta[(j, i)] - rho[i]).abs() < 1e-12);
                let g = f_in[(j, i)] - rho[i] * ops.m[j];
                assert!((state.g[(j, i)] - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ic1_eta_is_the_shifted_density() {
        let ops = fixture(0.5, 64, 32, PI);
        let f_in = InitialCondition::Ic1.sample(&ops.xgrid, &ops.vgrid);
        let state = decompose_initial(&f_in, None, 1.0, 0.5, 1.0, &ops).unwrap();
        let eta = eval_eta(&state.h_hat, 1.0, &ops).unwrap();
        let x0 = ops.xgrid.x()[0];
        for (j, &v) in ops.vgrid.v().iter().enumerate() {
            assert!((eta[(j, 0)] - ic1_rho(x0 + v)).abs() < 1e-9, "v = {v}");
        }
    }

    #[test]
    fn eval_eta_shifts_a_single_mode() {
        let l_x = 2.0;
        let ops = fixture(0.6, 16, 32, l_x);
        let h: Vec<f64> = ops
            .xgrid
            .x()
            .iter()
            .map(|&x| (PI * x / l_x).sin())
            .collect();
        let h_hat = ops.fourier.coefficients(&h).unwrap();
        let eps = 0.1;
        let eta = eval_eta(&h_hat, eps, &ops).unwrap();
        for i in 0..32 {
            for j in 0..16 {
                let x = ops.xgrid.x()[i] + eps * ops.vgrid.v()[j];
                assert!((eta[(j, i)] - (PI * x / l_x).sin()).abs() < 1e-13);
            }
        }
        let flat = eval_eta(&constant_state(0.7, &ops, eps).h_hat, eps, &ops).unwrap();
        assert!(flat.iter().all(|&e| (e - 0.7).abs() < 1e-15));
    }

    #[test]
    fn commutator_vanishes_for_constants() {
        let ops = fixture(0.6, 32, 4, PI);
        let c = vec![2.5; 32];
        let out = commutator_i(&c, &ops.m, &ops.ls);
        assert!(out.iter().all(|x| x.abs() < 1e-10), "{out:?}");
    }

    #[test]
    fn commutator_of_m_with_itself() {
        let ops = fixture(0.6, 32, 4, PI);
        let a = commutator_i(&ops.m, &ops.m, &ops.ls);
        let sq: Vec<f64> = ops.m.iter().map(|x| x * x).collect();
        let l_sq = ops.ls.apply(&sq);
        let l_m = ops.ls.apply(&ops.m);
        for j in 0..32 {
            assert!((a[j] - (l_sq[j] - 2.0 * ops.m[j] * l_m[j])).abs() < 1e-10);
        }
    }

    /// `C_{s,1} ∫ (f(v) − f(w))(g(w) − g(v)) |v − w|^{−1−2s} dw` by adaptive
    /// quadrature, folded onto `y = |w − v| > 0`.
    fn brute_commutator(f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, v: f64, s: f64) -> f64 {
        let d =
            |y: f64| (f(v) - f(v + y)) * (g(v) - g(v + y)) + (f(v) - f(v - y)) * (g(v) - g(v - y));
        let p = 2.0 - 2.0 * s;
        let near = quadrature::integrate(
            |u| {
                let y = u.powf(1.0 / p).max(1e-4);
                d(y) / (y * y) / p
            },
            0.0,
            1.0,
            &[],
            1e-13,
            20_000,
        )
        .unwrap();
        let turn = if v.abs() > 1.0 {
            v.abs().powf(-2.0 * s)
        } else {
            0.5
        };
        let far = quadrature::integrate(
            |u| d(u.powf(-1.0 / (2.0 * s))) / (2.0 * s),
            0.0,
            1.0,
            &[turn],
            1e-13,
            20_000,
        )
        .unwrap();
        -c_s1(s) * (near + far)
    }

    #[test]
    fn commutator_matches_brute_force_quadrature() {
        let s = 0.6;
        let f = |v: f64| 1.0 / (1.0 + v * v);
        let g = |v: f64| (-v * v).exp() / PI.sqrt();
        let err = |n_v: usize| {
            let ops = fixture(s, n_v, 4, PI);
            let fs = ops.vgrid.sample(f);
            let gs = ops.vgrid.sample(g);
            let disc = commutator_i(&fs, &gs, &ops.ls);
            ops.vgrid
                .v()
                .iter()
                .zip(&disc)
                .filter(|(v, _)| v.abs() < 6.0)
                .map(|(&v, &d)| (d - brute_commutator(&f, &g, v, s)).abs())
                .fold(0.0, f64::max)
        };
        let (e16, e32) = (err(16), err(32));
        assert!(e32 < 0.5 * e16, "N_v=16: {e16:e}, N_v=32: {e32:e}");
        assert!(e32 < 1e-2, "N_v=32: {e32:e}");
    }

    #[test]
    fn step1_zero_data_stays_zero() {
        let ops = fixture(0.6, 32, 8, PI);
        let eta = Field::from_element(32, 8, 1.3);
        let g = Field::zeros(32, 8);
        let out = step1_collision(&g, &eta, 0.1, 0.01, 1.0, &ops).unwrap();
        assert!(max_abs(&out) < 1e-10, "{:e}", max_abs(&out));
    }

    #[test]
    fn step2_single_mode_amplitude_and_phase() {
        // s = 1/2 makes r = ε/Δt; choosing ε = 1/v_j and Δt = ε/20 gives
        // r = 20 and ε v_j = 1 on row j.
        let ops = fixture(0.5, 32, 16, PI);
        let j = 13;
        let vj = ops.vgrid.v()[j];
        let eps = 1.0 / vj;
        let dt = eps / 20.0;
        assert!((relaxation_rate(eps, 0.5, dt) - 20.0).abs() < 1e-12);
        let mut g_star = Field::zeros(32, 16);
        for (i, &x) in ops.xgrid.x().iter().enumerate() {
            g_star[(j, i)] = x.cos();
        }
        let out = step2_transport(&g_star, eps, 0.5, dt, 1.0, &ops).unwrap();
        let amp = 20.0 / (19f64.powi(2) + 1.0).sqrt();
        let phase = (-1f64).atan2(19.0);
        assert!((amp - 1.0512).abs() < 1e-4);
        for (i, &x) in ops.xgrid.x().iter().enumerate() {
            assert!((out[(j, i)] - amp * (x + phase).cos()).abs() < 1e-13);
        }
        let others = out.iter().enumerate().filter(|(k, _)| k % 32 != j);
        assert!(others.map(|(_, x)| x.abs()).fold(0.0, f64::max) < 1e-15);
    }

    #[test]
    fn step2_mean_mode_scales_by_r_over_r_minus_gamma() {
        let ops = fixture(0.6, 16, 8, PI);
        let (eps, dt, gamma) = (0.2, 0.01, 1.0);
        let r = relaxation_rate(eps, 0.6, dt);
        let g_star = Field::from_fn(16, 8, |j, _| j as f64 - 4.0);
        let out = step2_transport(&g_star, eps, 0.6, dt, gamma, &ops).unwrap();
        assert!(max_abs(&(out - g_star * (r / (r - gamma)))) < 1e-12);
        let zero = step2_transport(&Field::zeros(16, 8), eps, 0.6, dt, gamma, &ops).unwrap();
        assert_eq!(max_abs(&zero), 0.0);
    }

    #[test]
    fn step2_guards_the_zero_mode() {
        let ops = fixture(0.5, 16, 8, PI);
        // r = ε/Δt = γ exactly.
        let err = step2_transport(&Field::zeros(16, 8), 0.1, 0.5, 0.1, 1.0, &ops);
        assert!(matches!(err, Err(Error::ZeroModeGuard { .. })));
    }

    #[test]
    fn step3_scalar_factors() {
        let h = vec![Complex64::new(2.0, 0.0), Complex64::new(1.0, -0.5)];
        let out = step3_eta(&h, 0.1, 0.5, &[0.0, 1.0]);
        assert_eq!(out[0], h[0]);
        assert!((out[1] - h[1] / 1.1).norm() < 1e-15);
    }

    #[test]
    fn step3_converges_to_the_exponential_at_first_order() {
        // Implicit Euler: (1 + Δt λ)^{−n} = e^{−λt} (1 + λ² t Δt / 2 + O(Δt²)).
        let (xi, s, t) = (2.0f64, 0.75, 1.0);
        let lambda = xi.powf(2.0 * s);
        let exact = (-lambda * t).exp();
        let rel_err = |dt: f64| {
            let n = (t / dt).round() as usize;
            let mut h = vec![Complex64::new(1.0, 0.0)];
            for _ in 0..n {
                h = step3_eta(&h, dt, s, &[xi]);
            }
            (h[0].re - exact).abs() / exact
        };
        let e = rel_err(1e-3);
        let predicted = lambda * lambda * t * 1e-3 / 2.0;
        assert!(
            (e - predicted).abs() < 0.05 * predicted,
            "{e:e} vs {predicted:e}"
        );
        let ratio = e / rel_err(5e-4);
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn reconstruction_after_decomposition() {
        let ops = fixture(0.6, 64, 32, 5.0);
        let f_in = InitialCondition::Ic2.sample(&ops.xgrid, &ops.vgrid);
        let state = decompose_initial(&f_in, None, 0.3, 0.6, 1.0, &ops).unwrap();
        let (f, rho) = reconstruct_and_density(&state, &ops).unwrap();
        assert!(max_abs(&(f - &f_in)) < 1e-13);
        for (i, (&r, &x)) in rho.iter().zip(ops.xgrid.x()).enumerate() {
            assert!((r - ops.density(&f_in)[i]).abs() < 1e-8);
            assert!((r - (-15.0 * x * x).exp()).abs() < 1e-10, "x = {x}");
        }

        let flat = constant_state(0.8, &ops, 0.3);
        let (_, rho) = reconstruct_and_density(&flat, &ops).unwrap();
        assert!(rho.iter().all(|r| (r - 0.8).abs() < 1e-13));
    }

    #[test]
    fn energies_closed_forms() {
        let ops = fixture(0.6, 32, 16, PI);
        let c = 0.8;
        let rec = energies(&constant_state(c, &ops, 0.1), 0, &ops).unwrap();
        let mass: f64 = ops.vgrid.integrate(&ops.m).unwrap();
        let expected = c * c * 2.0 * PI * mass;
        assert!((rec.e_f - expected).abs() < 1e-12 * expected);
        assert!((rec.e_eta - expected).abs() < 1e-12 * expected);
        assert_eq!(rec.e_g, 0.0);
        assert!(rec.ap_error < 1e-14);
        assert!((rec.mass - c * 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn step_count_requires_a_whole_number_of_steps() {
        assert_eq!(step_count(1.0, 0.1).unwrap(), 10);
        assert_eq!(step_count(0.0, 0.1).unwrap(), 0);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(1.0, 0.0).is_err());
    }

    #[test]
    fn one_step_conserves_mass() {
        let ops = fixture(0.6, 32, 16, PI);
        let solver = ApSolver::new(&ops, ApParams::new(1e-2, 1.0, 0.01).unwrap()).unwrap();
        let f_in = InitialCondition::Ic1.sample(&ops.xgrid, &ops.vgrid);
        let mut state = solver.initial_state(&f_in, None).unwrap();
        let before = energies(&state, 0, &ops).unwrap().mass;
        solver.step(&mut state).unwrap();
        let after = energies(&state, 1, &ops).unwrap().mass;
        assert!(
            (after - before).abs() < 1e-3 * before,
            "{before} -> {after}"
        );
        assert!((state.t - 0.01).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn step3_keeps_the_mean_and_damps_the_rest(
            coefs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 8),
            dt in 1e-4f64..1.0,
            s in 0.05f64..0.95,
        ) {
            let xgrid = SpatialGrid::new(8, PI).unwrap();
            let h: Vec<Complex64> = coefs.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let fourier = Fourier::new(&xgrid);
            let out = step3_eta(&h, dt, s, fourier.xi());
            prop_assert_eq!(out[0], h[0]);
            for (a, b) in out.iter().zip(&h).skip(1) {
                prop_assert!(a.norm() <= b.norm());
            }
        }

        #[test]
        fn decomposition_round_trips(
            vals in proptest::collection::vec(0.0f64..2.0, 16 * 8),
            eps in 1e-6f64..1.0,
        ) {
            let ops = fixture_small();
            let f_in = Field::from_vec(16, 8, vals);
            let state = decompose_initial(&f_in, None, eps, 0.6, 1.0, &ops).unwrap();
            let (f, _) = reconstruct_and_density(&state, &ops).unwrap();
            prop_assert!(max_abs(&(f - &f_in)) < 1e-12);
            let rec = energies(&state, 0, &ops).unwrap();
            prop_assert!(rec.e_f >= 0.0 && rec.e_g >= 0.0 && rec.e_eta >= 0.0);
        }
    }

    fn fixture_small() -> ApOperators {
        use std::sync::OnceLock;
        static OPS: OnceLock<ApOperators> = OnceLock::new();
        OPS.get_or_init(|| fixture(0.6, 16, 8, PI)).clone()
    }
}
