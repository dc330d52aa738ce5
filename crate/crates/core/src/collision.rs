//! Discrete Lévy–Fokker–Planck collision operator and the spatially
//! homogeneous relaxation toward its fat-tailed equilibrium.
//!
//! In the mapped variable the operator reads
//! `𝓛f = f − cos(q) sin(q) ∂_q f − (−Δ_q)^s f`, discretized as
//! `P^s = C·D + I − L_s` with `D` the spectral derivative of the even
//! extension and `C = diag(−cos q_j sin q_j)`.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fraclap::{OperatorKind, SpectralOperator};
use crate::grids::VelocityGrid;
use crate::linalg::{Factored, DEFAULT_CONDITION_CAP};

/// Entries of `f` below this contribute nothing to the relative entropy.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Default stopping threshold for the numerical equilibrium.
pub const DEFAULT_EQUILIBRIUM_DELTA: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CollisionOperator {
    op: SpectralOperator,
}

impl CollisionOperator {
    pub fn mat(&self) -> &DMatrix<f64> {
        self.op.mat()
    }

    pub fn grid(&self) -> &VelocityGrid {
        self.op.grid()
    }

    pub fn s(&self) -> f64 {
        self.op.s()
    }

    pub fn l_lim(&self) -> usize {
        self.op.l_lim()
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.is_empty()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.op.apply(f)
    }

    pub fn as_operator(&self) -> &SpectralOperator {
        &self.op
    }
}

/// Spectral `∂_q` on the grid through the even extension about `q = π`:
/// `D[j][n] = −(1/N) Σ_{m=−N}^{N−1} m sin(m q_j) cos(m q_n)`.
pub fn derivative_matrix(grid: &VelocityGrid) -> DMatrix<f64> {
    let n = grid.len();
    let q = grid.q();
    let nf = n as f64;
    DMatrix::from_fn(n, n, |j, col| {
        let mut acc = 0.0;
        for m in 1..n {
            let mf = m as f64;
            // m and −m contribute equally.
            acc += mf * (mf * q[j]).sin() * (mf * q[col]).cos();
        }
        -2.0 * acc / nf
    })
}

/// The drift part `C·D`, i.e. `f ↦ −cos(q) sin(q) ∂_q f`.
pub fn drift_matrix(grid: &VelocityGrid) -> DMatrix<f64> {
    let mut d = derivative_matrix(grid);
    for (j, mut row) in d.row_iter_mut().enumerate() {
        let q = grid.q()[j];
        row *= -q.cos() * q.sin();
    }
    d
}

/// `P^s = C·D + I − L_s`.
pub fn assemble_ps(ls: &SpectralOperator, grid: &VelocityGrid) -> Result<CollisionOperator> {
    if ls.kind() != OperatorKind::FracLap {
        return Err(Error::GridMismatch(
            "expected a fractional Laplacian operator".into(),
        ));
    }
    if !ls.grid().same_as(grid) {
        return Err(Error::GridMismatch(format!(
            "L_s built on (N_v={}, L_v={}), grid is (N_v={}, L_v={})",
            ls.grid().len(),
            ls.grid().l_v(),
            grid.len(),
            grid.l_v()
        )));
    }
    let n = grid.len();
    let mat = drift_matrix(grid) + DMatrix::identity(n, n) - ls.mat();
    Ok(CollisionOperator {
        op: SpectralOperator::from_parts(
            mat,
            ls.s(),
            ls.l_lim(),
            grid.clone(),
            OperatorKind::Collision,
        ),
    })
}

/// Backward Euler `(I − Δt P^s) f^{n+1} = f^n` with the factorization reused
/// across steps.
#[derive(Debug, Clone)]
pub struct HomogeneousStepper {
    factored: Factored,
    dt: f64,
}

impl HomogeneousStepper {
    pub fn new(ps: &CollisionOperator, dt: f64) -> Result<Self> {
        Self::with_cap(ps, dt, DEFAULT_CONDITION_CAP)
    }

    pub fn with_cap(ps: &CollisionOperator, dt: f64, cap: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        let n = ps.len();
        let a = DMatrix::identity(n, n) - ps.mat() * dt;
        Ok(Self {
            factored: Factored::new(a, cap)?,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn condition(&self) -> f64 {
        self.factored.condition()
    }

    pub fn step(&self, f: &[f64]) -> Vec<f64> {
        self.factored.solve(f)
    }
}

/// Eigenvalues of `P^s` with real part above this are treated as spurious.
/// The continuous operator is dissipative on integrable densities, so the
/// only such modes on the grid are the constant (`P^s·1 = 1`) and its odd
/// counterpart, neither of which has finite mass.
pub const GROWING_MODE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
struct BlockMode {
    odd: bool,
    /// Right eigenvector on the half grid `j < N_v/2`.
    right: Vec<f64>,
    /// Left eigenvector scaled so that `left · right = 1`.
    left: Vec<f64>,
}

/// Projector that removes the non-integrable growing modes of `P^s`.
///
/// The reflection `v → −v` commutes with `P^s`, so the even and odd halves are
/// searched separately. Each growing eigenvalue is isolated from the rest of
/// its block by a gap of about one, which makes shifted inverse iteration
/// converge in a handful of sweeps.
#[derive(Debug, Clone)]
pub struct GrowingModes {
    n: usize,
    modes: Vec<BlockMode>,
}

impl GrowingModes {
    pub fn new(ps: &CollisionOperator) -> Result<Self> {
        let n = ps.len();
        let h = n / 2;
        let p = ps.mat();
        let mut modes = Vec::new();
        for odd in [false, true] {
            let sign = if odd { -1.0 } else { 1.0 };
            let block = DMatrix::from_fn(h, h, |j, k| p[(j, k)] + sign * p[(j, n - 1 - k)]);
            for lambda in block.clone().complex_eigenvalues().iter() {
                if lambda.re <= GROWING_MODE_THRESHOLD {
                    continue;
                }
                if lambda.im.abs() > 1e-8 {
                    return Err(Error::NoConvergence {
                        iterations: 0,
                        what: format!("growing mode pair {lambda} is not real"),
                    });
                }
                let shift = lambda.re + 1e-7;
                let right = inverse_iteration(&block, shift)?;
                let left = inverse_iteration(&block.transpose(), shift)?;
                let overlap: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum();
                if overlap.abs() < 1e-12 {
                    return Err(Error::NoConvergence {
                        iterations: 0,
                        what: format!("defective growing mode at eigenvalue {:.6}", lambda.re),
                    });
                }
                let left = left.iter().map(|x| x / overlap).collect();
                modes.push(BlockMode { odd, right, left });
            }
        }
        Ok(Self { n, modes })
    }

    /// Number of modes that [`Self::remove`] projects out.
    pub fn count(&self) -> usize {
        self.modes.len()
    }

    pub fn remove(&self, f: &mut [f64]) {
        debug_assert_eq!(f.len(), self.n);
        let n = self.n;
        for mode in &self.modes {
            let sign = if mode.odd { -1.0 } else { 1.0 };
            let c: f64 = mode
                .left
                .iter()
                .enumerate()
                .map(|(j, l)| l * 0.5 * (f[j] + sign * f[n - 1 - j]))
                .sum();
            for (j, r) in mode.right.iter().enumerate() {
                f[j] -= c * r;
                f[n - 1 - j] -= sign * c * r;
            }
        }
    }
}

fn inverse_iteration(a: &DMatrix<f64>, shift: f64) -> Result<Vec<f64>> {
    let h = a.nrows();
    let lu = (a - DMatrix::identity(h, h) * shift).lu();
    let mut x = nalgebra::DVector::from_element(h, 1.0 / (h as f64).sqrt());
    for _ in 0..8 {
        x = lu.solve(&x).ok_or(Error::Singular)?;
        x /= x.norm();
    }
    Ok(x.data.into())
}

/// One backward-Euler step. Use [`HomogeneousStepper`] for repeated steps.
pub fn step_homogeneous(f: &[f64], dt: f64, ps: &CollisionOperator) -> Result<Vec<f64>> {
    if f.len() != ps.len() {
        return Err(Error::LengthMismatch {
            expected: ps.len(),
            got: f.len(),
        });
    }
    Ok(HomogeneousStepper::new(ps, dt)?.step(f))
}

/// Replaces negative tail values by extrapolating the equilibrium decay
/// `((1+|v_{j∓1}|)/(1+|v_j|))^{1+2s}` from the last positive entry. Both tails
/// are scanned outward from the centre of the grid.
pub fn apply_positivity_fix(f: &[f64], grid: &VelocityGrid, s: f64) -> Vec<f64> {
    let n = f.len();
    let v = grid.v();
    let mut out = f.to_vec();
    let ratio =
        |from: usize, to: usize| ((1.0 + v[from].abs()) / (1.0 + v[to].abs())).powf(1.0 + 2.0 * s);
    let mut clamped = false;

    // q → π side: indices n/2 .. n.
    if let Some(first) = (n / 2..n).find(|&j| out[j] < 0.0) {
        if first > 0 && out[first - 1] > 0.0 {
            for j in first..n {
                out[j] = out[j - 1] * ratio(j - 1, j);
            }
        } else {
            clamped = true;
        }
    }
    // q → 0 side: indices n/2 − 1 down to 0.
    if let Some(first) = (0..n / 2).rev().find(|&j| out[j] < 0.0) {
        if first + 1 < n && out[first + 1] > 0.0 {
            for j in (0..=first).rev() {
                out[j] = out[j + 1] * ratio(j + 1, j);
            }
        } else {
            clamped = true;
        }
    }
    if clamped {
        warn!("positivity fix found no positive anchor; clamping negative entries to zero");
        for x in out.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    out
}

/// Discrete relative entropy `Σ_j f_j ln(f_j/M_j) w_j Δq` with `0 ln 0 = 0`.
pub fn relative_entropy(f: &[f64], m: &[f64], grid: &VelocityGrid) -> f64 {
    f.iter()
        .zip(m)
        .zip(grid.w())
        .map(|((&f, &m), &w)| {
            if f < ENTROPY_FLOOR {
                0.0
            } else {
                f * (f / m).ln() * w
            }
        })
        .sum::<f64>()
        * grid.dq()
}

/// `|Σ_j f_j w_j Δq − M₀|`.
pub fn mass_error(f: &[f64], grid: &VelocityGrid, m0: f64) -> f64 {
    (grid.integrate_unchecked(f) - m0).abs()
}

/// Least-squares slope of `ln M` against `ln |v|` over the outermost decade of
/// velocities, excluding the two extreme grid points themselves.
pub fn tail_slope(m: &[f64], grid: &VelocityGrid) -> f64 {
    let v = grid.v();
    let v_last = v[0].abs();
    let pts: Vec<(f64, f64)> = (1..v.len() - 1)
        .filter(|&j| v[j].abs() >= v_last / 10.0 && m[j] > 0.0)
        .map(|j| (v[j].abs().ln(), m[j].ln()))
        .collect();
    linear_fit(&pts).0
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (a, b, r2)
}

/// The numerical equilibrium of `P^s`.
#[derive(Debug, Clone)]
pub struct EquilibriumProfile {
    /// Positive, unit-mass profile on the velocity grid.
    pub m: Vec<f64>,
    pub mass: f64,
    pub tail_slope: f64,
    pub s: f64,
    pub t_converged: f64,
    pub steps: usize,
    /// The last iterate before renormalization, exactly as the time stepper
    /// left it.
    pub raw_limit: Vec<f64>,
}

/// Relaxation history of a homogeneous run.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub dt: f64,
    /// `f^0, f^1, …, f^K`; the last entry met the stopping rule.
    pub states: Vec<Vec<f64>>,
}

impl Relaxation {
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("a relaxation holds at least f^0")
    }
}

/// Change between consecutive iterates once the uniform mass drift is taken
/// out: `Σ_j |f^{n+1}_j − (m^{n+1}/m^n) f^n_j| w_j Δq`.
///
/// The discrete operator does not conserve mass exactly for `s ≠ 1/2`, so the
/// iterates keep rescaling slowly after their shape has settled. Measuring the
/// plain difference would then never drop below a small threshold.
pub fn shape_change(prev: &[f64], next: &[f64], grid: &VelocityGrid) -> f64 {
    let m_prev = grid.integrate_unchecked(prev);
    let m_next = grid.integrate_unchecked(next);
    let ratio = if m_prev != 0.0 { m_next / m_prev } else { 1.0 };
    prev.iter()
        .zip(next)
        .zip(grid.w())
        .map(|((a, b), w)| (b - ratio * a).abs() * w)
        .sum::<f64>()
        * grid.dq()
}

/// Backward Euler followed by removal of the growing modes and the
/// positivity fix.
#[derive(Debug, Clone)]
pub struct RelaxationStepper {
    stepper: HomogeneousStepper,
    modes: GrowingModes,
    grid: VelocityGrid,
    s: f64,
}

impl RelaxationStepper {
    pub fn new(ps: &CollisionOperator, dt: f64) -> Result<Self> {
        Ok(Self {
            stepper: HomogeneousStepper::new(ps, dt)?,
            modes: GrowingModes::new(ps)?,
            grid: ps.grid().clone(),
            s: ps.s(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    pub fn step(&self, f: &[f64]) -> Vec<f64> {
        let mut next = self.stepper.step(f);
        self.modes.remove(&mut next);
        apply_positivity_fix(&next, &self.grid, self.s)
    }
}

/// Steps from `f0` until [`shape_change`] drops to `delta`.
pub fn relax(
    ps: &CollisionOperator,
    f0: &[f64],
    dt: f64,
    delta: f64,
    max_steps: usize,
) -> Result<Relaxation> {
    if !(delta > 0.0) {
        return Err(Error::param(
            "delta",
            format!("must be positive, got {delta}"),
        ));
    }
    if f0.len() != ps.len() {
        return Err(Error::LengthMismatch {
            expected: ps.len(),
            got: f0.len(),
        });
    }
    let grid = ps.grid();
    let stepper = RelaxationStepper::new(ps, dt)?;
    let mut states = vec![f0.to_vec()];
    for _ in 0..max_steps {
        let prev = states.last().unwrap();
        let next = stepper.step(prev);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: states.len(),
                what: "homogeneous relaxation produced non-finite values".into(),
            });
        }
        let change = shape_change(prev, &next, grid);
        states.push(next);
        if change <= delta {
            return Ok(Relaxation { dt, states });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_steps,
        what: format!("homogeneous relaxation did not reach delta = {delta:e}"),
    })
}

/// `f` divided by its grid mass.
pub fn normalize_mass(f: &[f64], grid: &VelocityGrid) -> Vec<f64> {
    let mass = grid.integrate_unchecked(f);
    f.iter().map(|x| x / mass).collect()
}

/// Unit-mass Gaussian `e^{−v²}` normalized with the grid quadrature.
pub fn normalized_gaussian(grid: &VelocityGrid) -> Vec<f64> {
    normalize_mass(&grid.sample(|v| (-v * v).exp()), grid)
}

pub const DEFAULT_MAX_RELAX_STEPS: usize = 1_000_000;

/// Relaxes a normalized Gaussian to the numerical equilibrium.
pub fn compute_equilibrium(
    ps: &CollisionOperator,
    dt: f64,
    delta: f64,
) -> Result<EquilibriumProfile> {
    let grid = ps.grid();
    let run = relax(
        ps,
        &normalized_gaussian(grid),
        dt,
        delta,
        DEFAULT_MAX_RELAX_STEPS,
    )?;
    let raw = run.last().to_vec();
    let fixed = apply_positivity_fix(&raw, grid, ps.s());
    let mass = grid.integrate_unchecked(&fixed);
    let m: Vec<f64> = fixed.iter().map(|x| x / mass).collect();
    if let Some(j) = m.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NoConvergence {
            iterations: run.states.len() - 1,
            what: format!("equilibrium is not positive at index {j}"),
        });
    }
    let steps = run.states.len() - 1;
    Ok(EquilibriumProfile {
        tail_slope: tail_slope(&m, grid),
        mass: grid.integrate_unchecked(&m),
        m,
        s: ps.s(),
        t_converged: run.t(steps),
        steps,
        raw_limit: raw,
    })
}

/// Independent oracle for the equilibrium: the symmetric stable density with
/// characteristic function `exp(−|k|^{2s}/(2s))`, evaluated as
/// `(1/π) ∫_0^∞ cos(kv) exp(−k^{2s}/(2s)) dk` with breaks at the zeros of the
/// cosine. Used only in tests.
pub fn stable_equilibrium_oracle(v: f64, s: f64, tol: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param("s", format!("s must lie in (0,1), got {s}")));
    }
    let two_s = 2.0 * s;
    // Beyond this the integrand is below e^{-40}.
    let k_max = (two_s * 40.0).powf(1.0 / two_s);
    let mut breaks = Vec::new();
    let va = v.abs();
    if va > 0.0 {
        let half = std::f64::consts::PI / va;
        let mut z = 0.5 * half;
        while z < k_max {
            breaks.push(z);
            z += half;
        }
    }
    let value = crate::quadrature::integrate(
        |k| (k * va).cos() * (-k.powf(two_s) / two_s).exp(),
        0.0,
        k_max,
        &breaks,
        tol,
        50 * breaks.len() + 2000,
    )?;
    Ok(value / std::f64::consts::PI)
}
