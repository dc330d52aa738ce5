//! Pseudospectral fractional Laplacian on the whole line.
//!
//! A function sampled on the mapped grid is even-extended about `q = π`, so its
//! discrete Fourier coefficients are those of a cosine series. The fractional
//! Laplacian of every Fourier mode `e^{imq}` (viewed as a function of
//! `v = L_v cot q`) has a closed form as a weighted series in `e^{2ilq}`. On the
//! grid, `e^{2i(l₁N+l₂)q_j} = (−1)^{l₁} e^{2il₂q_j}`, so the `l`-series folds
//! exactly into `N` bins and only the outer truncation `|l₁| ≤ l_lim` is an
//! approximation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grids::VelocityGrid;
use crate::quadrature;

/// Largest imaginary residue tolerated in an assembled operator entry,
/// relative to `max(1, max |entry|)`.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

/// Orders closer to 1/2 than this use the dedicated `s = 1/2` formulas.
pub const HALF_ORDER_TOL: f64 = 1e-12;

/// `C_{s,1} = 4^s Γ(1/2+s) / (√π |Γ(−s)|)`.
pub fn c_s1(s: f64) -> f64 {
    let (lg_num, _) = ln_gamma_signed(0.5 + s);
    let (lg_den, _) = ln_gamma_signed(-s);
    (s * 4f64.ln() + lg_num - 0.5 * PI.ln() - lg_den).exp()
}

/// `(ln|Γ(x)|, sign Γ(x))`, valid for negative non-integer arguments too.
pub fn ln_gamma_signed(x: f64) -> (f64, f64) {
    let (lg, sign) = libm::lgamma_r(x);
    (lg, if sign < 0 { -1.0 } else { 1.0 })
}

/// `Γ(a)/Γ(b)` through log-gamma differences with explicit sign tracking.
fn gamma_ratio(a: f64, b: f64) -> Result<f64> {
    let (la, sa) = ln_gamma_signed(a);
    let (lb, sb) = ln_gamma_signed(b);
    let r = sa * sb * (la - lb).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFiniteGamma {
            context: format!("Γ({a})/Γ({b})"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracLapParams {
    s: f64,
    l_lim: usize,
    c_s1: f64,
}

impl FracLapParams {
    pub fn new(s: f64, l_lim: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param("s", format!("s must lie in (0,1), got {s}")));
        }
        if l_lim < 1 {
            return Err(Error::param("l_lim", "must be >= 1"));
        }
        Ok(Self {
            s,
            l_lim,
            c_s1: c_s1(s),
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn l_lim(&self) -> usize {
        self.l_lim
    }

    pub fn c_s1(&self) -> f64 {
        self.c_s1
    }

    pub fn is_half(&self) -> bool {
        (self.s - 0.5).abs() < HALF_ORDER_TOL
    }
}

/// Gamma-ratio tables shared by every mode of one `(s, N, l_lim)` assembly.
///
/// `r1[a] = Γ((2s−1)/2 + a) / Γ((3−2s)/2 + a)` for integer `a ≥ 0`, and
/// `r2[2b] = Γ((−1−2s)/2 + b) / Γ((3+2s)/2 + b)` for `b` a non-negative
/// integer or half-integer (stored at doubled index).
struct GammaTables {
    r1: Vec<f64>,
    r2: Vec<f64>,
}

impl GammaTables {
    fn new(s: f64, max_l: usize) -> Result<Self> {
        let r1 = (0..=max_l)
            .map(|a| {
                gamma_ratio(
                    (2.0 * s - 1.0) / 2.0 + a as f64,
                    (3.0 - 2.0 * s) / 2.0 + a as f64,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let r2 = (0..=2 * max_l + 2)
            .map(|b2| {
                let b = b2 as f64 / 2.0;
                gamma_ratio((-1.0 - 2.0 * s) / 2.0 + b, (3.0 + 2.0 * s) / 2.0 + b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { r1, r2 })
    }
}

/// `(−Δ)^s e^{imq} = scale · |sin q|^{sin_power} · Σ_l coef[l − l_min] e^{2ilq}`.
struct ModeSeries {
    scale: Complex64,
    sin_power: f64,
    l_min: i64,
    coef: Vec<f64>,
}

impl ModeSeries {
    fn zero() -> Self {
        Self {
            scale: Complex64::new(0.0, 0.0),
            sin_power: 0.0,
            l_min: 0,
            coef: Vec::new(),
        }
    }

    fn eval(&self, q: f64) -> Complex64 {
        if self.coef.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        let sum: Complex64 = self
            .coef
            .iter()
            .enumerate()
            .map(|(i, &c)| c * Complex64::cis(2.0 * (self.l_min + i as i64) as f64 * q))
            .sum();
        self.scale * q.sin().abs().powf(self.sin_power) * sum
    }

    /// Folds the series onto the `N` bins `l₂ ∈ [−N/2, N/2)`, stored at `l₂ + N/2`.
    fn fold(&self, n: usize) -> Vec<f64> {
        let half = (n / 2) as i64;
        let mut bins = vec![0.0; n];
        for (i, &c) in self.coef.iter().enumerate() {
            let l = self.l_min + i as i64;
            let l1 = (l + half).div_euclid(n as i64);
            let l2 = l - l1 * n as i64;
            let sign = if l1 % 2 == 0 { 1.0 } else { -1.0 };
            bins[(l2 + half) as usize] += sign * c;
        }
        bins
    }
}

/// Builds the truncated series for mode `m` on an `N`-point grid.
fn mode_series(
    m: i64,
    params: &FracLapParams,
    l_v: f64,
    n: usize,
    tables: Option<&GammaTables>,
) -> ModeSeries {
    if m == 0 {
        return ModeSeries::zero();
    }
    let s = params.s;
    let n_i = n as i64;
    let l_min = -(params.l_lim as i64) * n_i - n_i / 2;
    let l_max = (params.l_lim as i64) * n_i + n_i / 2 - 1;
    let len = (l_max - l_min + 1) as usize;
    let mf = m as f64;

    if params.is_half() {
        if m % 2 == 0 {
            // |m| sin²q / L e^{imq}, written out in powers of e^{2iq}.
            let k = m / 2;
            let a = mf.abs() / l_v;
            return ModeSeries {
                scale: Complex64::new(1.0, 0.0),
                sin_power: 0.0,
                l_min: k - 1,
                coef: vec![-a / 4.0, a / 2.0, -a / 4.0],
            };
        }
        let mut coef = vec![0.0; len];
        for (i, c) in coef.iter_mut().enumerate() {
            let l = l_min + i as i64;
            let d = (m - 2 * l) as f64;
            *c = if l == 0 {
                -2.0 / (mf * mf - 4.0)
            } else {
                -4.0 * (l.signum() as f64) / (d * (d * d - 4.0))
            };
        }
        return ModeSeries {
            scale: Complex64::new(0.0, mf / (l_v * PI)),
            sin_power: 0.0,
            l_min,
            coef,
        };
    }

    let tables = tables.expect("gamma tables are required for s != 1/2");
    let odd = m % 2 != 0;
    let mut coef = vec![0.0; len];
    for (i, c) in coef.iter_mut().enumerate() {
        let l = l_min + i as i64;
        // Twice |m/2 − l|, an integer for either parity of m.
        let b2 = (m - 2 * l).unsigned_abs() as usize;
        let mut a = ((1.0 - 2.0 * s) * mf * mf - 4.0 * mf * l as f64)
            * tables.r1[l.unsigned_abs() as usize]
            * tables.r2[b2];
        if odd {
            a *= ((m - 2 * l).signum()) as f64;
        }
        *c = a;
    }
    let base = params.c_s1 / (8.0 * l_v.powf(2.0 * s));
    let scale = if odd {
        Complex64::new(0.0, base)
    } else {
        Complex64::new(base / (PI * s).tan(), 0.0)
    };
    ModeSeries {
        scale,
        sin_power: 2.0 * s - 1.0,
        l_min,
        coef,
    }
}

fn tables_for(params: &FracLapParams, n: usize) -> Result<Option<GammaTables>> {
    if params.is_half() {
        Ok(None)
    } else {
        GammaTables::new(params.s, params.l_lim * n + n / 2 + n).map(Some)
    }
}

/// Truncated `(−Δ_q)^s e^{imq}` evaluated at arbitrary points `q ∈ (0, 2π)`.
pub fn frac_lap_mode(
    m: i64,
    params: &FracLapParams,
    l_v: f64,
    n_v: usize,
    qpts: &[f64],
) -> Result<Vec<Complex64>> {
    if m.unsigned_abs() as usize > n_v {
        return Err(Error::param(
            "m",
            format!("|m| must be <= N_v = {n_v}, got {m}"),
        ));
    }
    if !(l_v > 0.0) {
        return Err(Error::param("l_v", format!("must be positive, got {l_v}")));
    }
    let tables = tables_for(params, n_v)?;
    let series = mode_series(m, params, l_v, n_v, tables.as_ref());
    Ok(qpts.iter().map(|&q| series.eval(q)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// The fractional Laplacian `L_s`.
    FracLap,
    /// The full collision operator `P^s`.
    Collision,
}

impl OperatorKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            OperatorKind::FracLap => 0,
            OperatorKind::Collision => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(OperatorKind::FracLap),
            1 => Some(OperatorKind::Collision),
            _ => None,
        }
    }
}

/// Dense real operator acting on vectors sampled on a [`VelocityGrid`].
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    mat: DMatrix<f64>,
    s: f64,
    l_lim: usize,
    grid: VelocityGrid,
    kind: OperatorKind,
}

impl SpectralOperator {
    pub(crate) fn from_parts(
        mat: DMatrix<f64>,
        s: f64,
        l_lim: usize,
        grid: VelocityGrid,
        kind: OperatorKind,
    ) -> Self {
        debug_assert_eq!(mat.nrows(), grid.len());
        Self {
            mat,
            s,
            l_lim,
            grid,
            kind,
        }
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn l_lim(&self) -> usize {
        self.l_lim
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.mat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mat.nrows() == 0
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len(), "operator/vector size mismatch");
        let n = self.len();
        let mut out = vec![0.0; n];
        // Row-major walk over a column-major matrix is slow; go column by column.
        for (col, &fj) in self.mat.column_iter().zip(f) {
            if fj != 0.0 {
                for (o, a) in out.iter_mut().zip(col.iter()) {
                    *o += a * fj;
                }
            }
        }
        out
    }
}

/// Assembles the `N_v × N_v` matrix `L_s` realizing `(−Δ_v)^s` on the grid.
pub fn assemble_ls(params: &FracLapParams, grid: &VelocityGrid) -> Result<SpectralOperator> {
    let n = grid.len();
    let l_v = grid.l_v();
    let tables = tables_for(params, n)?;
    let q = grid.q();

    // e^{2 i l₂ q_j} for the first N points, l₂ ∈ [−N/2, N/2).
    let half = (n / 2) as i64;
    let phases: Vec<Complex64> = (0..n)
        .flat_map(|j| (0..n).map(move |b| Complex64::cis(2.0 * (b as i64 - half) as f64 * q[j])))
        .collect();

    // Φ[j][m + N] = (−Δ)^s e^{imq} at q_j, for m ∈ [−N, N).
    let columns: Vec<Vec<Complex64>> = (0..2 * n)
        .into_par_iter()
        .map(|mi| {
            let m = mi as i64 - n as i64;
            let series = mode_series(m, params, l_v, n, tables.as_ref());
            if series.coef.is_empty() {
                return vec![Complex64::new(0.0, 0.0); n];
            }
            let bins = series.fold(n);
            (0..n)
                .map(|j| {
                    let row = &phases[j * n..(j + 1) * n];
                    let sum: Complex64 = row.iter().zip(&bins).map(|(p, b)| p * b).sum();
                    series.scale * q[j].sin().abs().powf(series.sin_power) * sum
                })
                .collect()
        })
        .collect();

    // Fourier coefficients of the even extension: f̂_m = (1/N) Σ_n f_n cos(m q_n).
    let dft = DMatrix::from_fn(2 * n, n, |mi, col| {
        let m = mi as f64 - n as f64;
        (m * q[col]).cos() / n as f64
    });
    let phi_re = DMatrix::from_fn(n, 2 * n, |j, mi| columns[mi][j].re);
    let phi_im = DMatrix::from_fn(n, 2 * n, |j, mi| columns[mi][j].im);
    let mat = &phi_re * &dft;
    let imag = &phi_im * &dft;

    if let Some(bad) = mat.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGamma {
            context: format!("assembled entry {bad}"),
        });
    }
    let scale = mat.amax().max(1.0);
    let residue = imag.amax() / scale;
    if residue > IMAG_RESIDUE_TOL {
        return Err(Error::ImaginaryResidue {
            residue,
            tolerance: IMAG_RESIDUE_TOL,
        });
    }
    Ok(SpectralOperator::from_parts(
        mat,
        params.s,
        params.l_lim,
        grid.clone(),
        OperatorKind::FracLap,
    ))
}

/// Evaluates the spectral `(−Δ)^s` of grid samples `f` at arbitrary mapped
/// points `q ∈ (0, π)`, using the same truncated mode series as
/// [`assemble_ls`]. At a grid node this agrees with `L_s f`.
pub fn frac_lap_at(
    f: &[f64],
    params: &FracLapParams,
    grid: &VelocityGrid,
    qpts: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.len();
    if f.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let tables = tables_for(params, n)?;
    let q = grid.q();
    let mut out = vec![0.0; qpts.len()];
    for mi in 0..2 * n {
        let m = mi as i64 - n as i64;
        let coef: f64 = f
            .iter()
            .zip(q)
            .map(|(fj, qj)| fj * (m as f64 * qj).cos())
            .sum::<f64>()
            / n as f64;
        if coef == 0.0 {
            continue;
        }
        let series = mode_series(m, params, grid.l_v(), n, tables.as_ref());
        if series.coef.is_empty() {
            continue;
        }
        for (o, &qp) in out.iter_mut().zip(qpts) {
            *o += coef * series.eval(qp).re;
        }
    }
    Ok(out)
}

/// Singular-integral reference value of `(−Δ)^s f(v)`:
/// `C_{s,1} ∫₀^∞ (2f(v) − f(v−y) − f(v+y)) y^{−1−2s} dy`.
///
/// The integral is split at `δ = 1/2`. Near the origin the second difference
/// is divided by `y²` and the substitution `y = δ u^{1/(2−2s)}` removes the
/// weight; the far tail beyond `B` uses `y = B u^{−1/(2s)}`. Every piece is then
/// a bounded integrand handed to adaptive Gauss–Kronrod.
pub fn frac_lap_quadrature_oracle(f: &dyn Fn(f64) -> f64, v: f64, s: f64, tol: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param("s", format!("s must lie in (0,1), got {s}")));
    }
    let c = c_s1(s);
    let piece_tol = tol / (3.0 * c);
    let fv = f(v);
    let second_diff = |y: f64| 2.0 * fv - f(v - y) - f(v + y);
    let budget = 20_000;

    let delta: f64 = 0.5;
    let p_in = 2.0 - 2.0 * s;
    // Below `y_flat` the quotient is frozen at its value there: the Taylor
    // error is O(f'''' y²) while the rounding noise of the raw quotient grows
    // like 1/y².
    let y_flat = 1e-3;
    let u_flat = (y_flat / delta).powf(p_in);
    let inner = quadrature::integrate(
        |u| {
            let y = (delta * u.powf(1.0 / p_in)).max(y_flat);
            second_diff(y) / (y * y)
        },
        0.0,
        1.0,
        &[u_flat],
        piece_tol * p_in / delta.powf(p_in),
        budget,
    )? * delta.powf(p_in)
        / p_in;

    let far = 2.0 * v.abs() + 50.0;
    let mut breaks: Vec<f64> = vec![1.0, 2.0, 5.0, 10.0, 20.0];
    breaks.extend([
        v.abs() - 2.0,
        v.abs() - 0.5,
        v.abs(),
        v.abs() + 0.5,
        v.abs() + 2.0,
    ]);
    let middle = quadrature::integrate(
        |y| second_diff(y) * y.powf(-1.0 - 2.0 * s),
        delta,
        far,
        &breaks,
        piece_tol,
        budget,
    )?;

    let tail_scale = far.powf(-2.0 * s) / (2.0 * s);
    let tail = quadrature::integrate(
        |u| {
            if u == 0.0 {
                2.0 * fv
            } else {
                second_diff(far * u.powf(-1.0 / (2.0 * s)))
            }
        },
        0.0,
        1.0,
        &[],
        piece_tol / tail_scale,
        budget,
    )? * tail_scale;

    Ok(c * (inner + middle + tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normalization_constant() {
        assert_relative_eq!(c_s1(0.5), 1.0 / PI, epsilon = 1e-14);
        for s in [0.1, 0.3, 0.7, 0.95] {
            assert!(c_s1(s) > 0.0);
        }
        // Closed form at s = 1/4: √2 Γ(3/4) / (√π |Γ(−1/4)|).
        let g34 = 1.225_416_702_465_177_6;
        let gm14: f64 = -4.901_666_809_860_711;
        assert_relative_eq!(
            c_s1(0.25),
            2f64.sqrt() * g34 / (PI.sqrt() * gm14.abs()),
            epsilon = 1e-13
        );
    }

    #[test]
    fn signed_log_gamma() {
        let (lg, sign) = ln_gamma_signed(-0.5);
        assert_eq!(sign, -1.0);
        assert_relative_eq!(lg.exp(), 2.0 * PI.sqrt(), epsilon = 1e-13);
        let (lg, sign) = ln_gamma_signed(-1.3);
        assert_eq!(sign, 1.0);
        assert!(lg.is_finite());
    }

    #[test]
    fn rejects_bad_order() {
        assert!(FracLapParams::new(0.0, 10).is_err());
        assert!(FracLapParams::new(1.0, 10).is_err());
        assert!(FracLapParams::new(1.2, 10).is_err());
        assert!(FracLapParams::new(0.5, 0).is_err());
        assert!(FracLapParams::new(0.5 + 1e-13, 10).unwrap().is_half());
    }

    #[test]
    fn constant_mode_vanishes() {
        for s in [0.3, 0.5, 0.8] {
            let p = FracLapParams::new(s, 20).unwrap();
            let out = frac_lap_mode(0, &p, 3.0, 16, &[0.3, 1.0, 2.5]).unwrap();
            assert!(out.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn off_grid_evaluation_matches_matrix_at_nodes() {
        let grid = VelocityGrid::new(16, 2.0).unwrap();
        let p = FracLapParams::new(0.35, 40).unwrap();
        let ls = assemble_ls(&p, &grid).unwrap();
        let f = grid.sample(|v| 1.0 / (1.0 + v * v));
        let at = frac_lap_at(&f, &p, &grid, &grid.q()[..5]).unwrap();
        let mat = ls.apply(&f);
        for j in 0..5 {
            assert_relative_eq!(at[j], mat[j], epsilon = 1e-11, max_relative = 1e-11);
        }
    }

    #[test]
    fn half_order_even_mode_closed_form() {
        let p = FracLapParams::new(0.5, 10).unwrap();
        let out = frac_lap_mode(2, &p, 1.0, 16, &[PI / 2.0]).unwrap();
        assert_relative_eq!(out[0].re, -2.0, epsilon = 1e-13);
        assert!(out[0].im.abs() < 1e-13);
    }

    #[test]
    fn mode_index_range_checked() {
        let p = FracLapParams::new(0.3, 10).unwrap();
        assert!(frac_lap_mode(17, &p, 3.0, 16, &[1.0]).is_err());
    }

    #[test]
    fn folding_matches_direct_series_on_grid() {
        for s in [0.3, 0.5, 0.7] {
            let p = FracLapParams::new(s, 4).unwrap();
            let n = 8;
            let grid = VelocityGrid::new(n, 2.0).unwrap();
            let tables = tables_for(&p, n).unwrap();
            for m in [-8i64, -3, 2, 5, 7] {
                let series = mode_series(m, &p, 2.0, n, tables.as_ref());
                let bins = series.fold(n);
                for &q in grid.q() {
                    let folded: Complex64 = bins
                        .iter()
                        .enumerate()
                        .map(|(b, c)| c * Complex64::cis(2.0 * (b as f64 - (n / 2) as f64) * q))
                        .sum::<Complex64>()
                        * series.scale
                        * q.sin().abs().powf(series.sin_power);
                    let direct = series.eval(q);
                    assert!(
                        (folded - direct).norm() < 1e-10 * (1.0 + direct.norm()),
                        "s={s} m={m}"
                    );
                }
            }
        }
    }

    #[test]
    fn oracle_constant_is_zero() {
        for s in [0.2, 0.5, 0.9] {
            let r = frac_lap_quadrature_oracle(&|_| 1.0, 0.7, s, 1e-10).unwrap();
            assert!(r.abs() < 1e-9, "s={s}: {r}");
        }
    }

    #[test]
    fn oracle_gaussian_at_origin() {
        // C_{1/2,1} ∫(1 − e^{−w²})/w² dw = (1/π)·2√π = 2/√π.
        let r = frac_lap_quadrature_oracle(&|v| (-v * v).exp(), 0.0, 0.5, 1e-11).unwrap();
        assert_relative_eq!(r, 2.0 / PI.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn oracle_power_law_at_origin() {
        // 2^{2s} Γ((1+2s)/2)/Γ((1−2s)/2) at s = 1/4, with positive sign.
        let s = 0.25;
        let expected = 2f64.sqrt() * 1.225_416_702_465_177_6 / 3.625_609_908_221_908;
        let f = |v: f64| (1.0 + v * v).powf(-(1.0 - 2.0 * s) / 2.0);
        let r = frac_lap_quadrature_oracle(&f, 0.0, s, 1e-10).unwrap();
        assert_relative_eq!(r, expected, epsilon = 1e-7);
        assert_relative_eq!(expected, 0.4779, epsilon = 1e-4);
    }

    #[test]
    fn oracle_rejects_bad_order() {
        assert!(frac_lap_quadrature_oracle(&|_| 1.0, 0.0, 1.5, 1e-8).is_err());
    }
}
