//! The acceptance suite: every check runs at its stated tolerance and reports
//! PASS or FAIL with the measured numbers.
//!
//! Used by the `acceptance` integration test and by `levy-fp self-test`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::ap_scheme::{
    field_l1_distance, reconstruct_and_density, step1_condition, step_count, ApOperators, ApParams,
    ApSolver, EnergyRecord, Field, InitialCondition,
};
use crate::collision::{
    assemble_ps, compute_equilibrium, linear_fit, normalize_mass, normalized_gaussian,
    relative_entropy, relax, CollisionOperator, EquilibriumProfile, DEFAULT_EQUILIBRIUM_DELTA,
};
use crate::error::Result;
use crate::fourier::Fourier;
use crate::fraclap::{
    assemble_ls, frac_lap_at, frac_lap_quadrature_oracle, FracLapParams, SpectralOperator,
};
use crate::grids::{SpatialGrid, VelocityGrid};
use crate::reference::{
    interpolate, l1_distance, limit_step, ImexSolver, LimitState, Transport, DEFAULT_CFL,
};

const L_V: f64 = 3.0;
const L_LIM: usize = 300;
const EQ_DT: f64 = 0.01;

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// One-line digest of the measured values.
    pub summary: String,
    /// Per-case measurements.
    pub details: Vec<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            summary: String::new(),
            details: Vec::new(),
        }
    }

    /// Records a case; any failing case fails the check.
    fn case(&mut self, ok: bool, text: String) {
        self.passed &= ok;
        self.details
            .push(format!("[{}] {text}", if ok { "ok" } else { "FAIL" }));
    }

    /// Records a case whose evaluation itself errored.
    fn error(&mut self, what: &str, err: impl std::fmt::Display) {
        self.case(false, format!("{what}: {err}"));
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.summary
        )
    }
}

/// Operators and equilibrium for one `(s, N_v)` at `L_v = 3`, `l_lim = 300`.
#[derive(Debug)]
pub struct Setup {
    pub vgrid: VelocityGrid,
    pub ls: SpectralOperator,
    pub ps: CollisionOperator,
    pub eq: EquilibriumProfile,
}

impl Setup {
    fn build(s: f64, n_v: usize) -> Result<Self> {
        let vgrid = VelocityGrid::new(n_v, L_V)?;
        let ls = assemble_ls(&FracLapParams::new(s, L_LIM)?, &vgrid)?;
        let ps = assemble_ps(&ls, &vgrid)?;
        let eq = compute_equilibrium(&ps, EQ_DT, DEFAULT_EQUILIBRIUM_DELTA)?;
        Ok(Self { vgrid, ls, ps, eq })
    }

    fn ap_operators(&self, n_x: usize, l_x: f64) -> Result<ApOperators> {
        ApOperators::new(
            SpatialGrid::new(n_x, l_x)?,
            self.ls.clone(),
            self.ps.clone(),
            self.eq.m.clone(),
        )
    }
}

/// Memoizes [`Setup`]s across checks.
#[derive(Debug, Default)]
pub struct Suite {
    setups: HashMap<(u64, usize), Arc<Setup>>,
}

/// Outcome of a fixed-time AP run.
struct ApRun {
    records: Vec<EnergyRecord>,
    f: Field,
    rho: Vec<f64>,
}

fn run_ap(ops: &ApOperators, f0: &Field, eps: f64, dt: f64, t_end: f64) -> Result<ApRun> {
    let solver = ApSolver::new(ops, ApParams::new(eps, 1.0, dt)?)?;
    let mut state = solver.initial_state(f0, None)?;
    let records = solver.run(&mut state, step_count(t_end, dt)?)?;
    let (f, rho) = reconstruct_and_density(&state, ops)?;
    Ok(ApRun { records, f, rho })
}

/// Implicit-Euler limit solution on the AP grid with the AP step.
fn limit_density(ops: &ApOperators, rho0: &[f64], s: f64, dt: f64, t_end: f64) -> Result<Vec<f64>> {
    let mut state = LimitState::new(rho0, s, &ops.fourier)?;
    for _ in 0..step_count(t_end, dt)? {
        state = limit_step(&state, dt, ops.fourier.xi());
    }
    state.density(&ops.fourier)
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    linear_fit(&pts).0
}

fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

/// `₁F₁(a; b; −x)` for `x ≥ 0` through Kummer's transformation, whose series
/// has terms of one sign after the first.
fn hyp1f1_neg(a: f64, b: f64, x: f64) -> f64 {
    let c = b - a;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..10_000 {
        let kf = k as f64;
        term *= (c + kf) / (b + kf) * x / (kf + 1.0);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    (-x).exp() * sum
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn setup(&mut self, s: f64, n_v: usize) -> Result<Arc<Setup>> {
        let key = (s.to_bits(), n_v);
        if let Some(setup) = self.setups.get(&key) {
            return Ok(Arc::clone(setup));
        }
        let setup = Arc::new(Setup::build(s, n_v)?);
        self.setups.insert(key, Arc::clone(&setup));
        Ok(setup)
    }

    /// Runs every criterion in order.
    pub fn run_all(&mut self) -> Vec<CheckOutcome> {
        vec![
            self.operator_vs_oracle(),
            self.closed_form_values(),
            self.equilibrium_shape(),
            self.entropy_decay(),
            self.mass_table(),
            self.condition_table(),
            self.time_accuracy(),
            self.energy_stability(),
            self.kinetic_agreement(),
            self.ap_property(),
            self.micro_scaling(),
        ]
    }

    /// `L_s f` against the singular-integral quadrature over `|v| ≤ 10`.
    pub fn operator_vs_oracle(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("operator_vs_oracle");
        let grid = match VelocityGrid::new(128, L_V) {
            Ok(g) => g,
            Err(e) => {
                out.error("grid", e);
                return out;
            }
        };
        let cases: [(f64, bool); 5] = [
            (0.25, true),
            (0.4, true),
            (0.3, false),
            (0.5, false),
            (0.8, false),
        ];
        let mut worst = Vec::new();
        for (s, power_law) in cases {
            let f: Box<dyn Fn(f64) -> f64> = if power_law {
                Box::new(move |v: f64| (1.0 + v * v).powf(-(1.0 - 2.0 * s) / 2.0))
            } else {
                Box::new(|v: f64| (-v * v).exp())
            };
            // Closed forms with the sign that makes (−Δ)^s positive at the peak.
            let a = (1.0 + 2.0 * s) / 2.0;
            let closed = |v: f64| {
                if power_law {
                    4f64.powf(s) * libm::tgamma(a) / libm::tgamma((1.0 - 2.0 * s) / 2.0)
                        * (1.0 + v * v).powf(-a)
                } else {
                    4f64.powf(s) * libm::tgamma(a) / PI.sqrt() * hyp1f1_neg(a, 0.5, v * v)
                }
            };
            let tol = if power_law { 1e-2 } else { 1e-3 };
            let result = (|| -> Result<(f64, f64, f64)> {
                let ls = assemble_ls(&FracLapParams::new(s, L_LIM)?, &grid)?;
                let lf = ls.apply(&grid.sample(&f));
                let (mut err, mut err_plus, mut err_minus) = (0.0f64, 0.0f64, 0.0f64);
                for (j, &v) in grid.v().iter().enumerate() {
                    if v.abs() > 10.0 {
                        continue;
                    }
                    let oracle = frac_lap_quadrature_oracle(&*f, v, s, 1e-10)?;
                    err = err.max((lf[j] - oracle).abs());
                    err_plus = err_plus.max((lf[j] - closed(v)).abs());
                    err_minus = err_minus.max((lf[j] + closed(v)).abs());
                }
                Ok((err, err_plus, err_minus))
            })();
            let kind = if power_law {
                "power-law"
            } else {
                "exponential"
            };
            match result {
                Ok((err, plus, minus)) => {
                    worst.push(format!("s={s} {}", sci(err)));
                    out.case(
                        err <= tol,
                        format!(
                            "s={s} {kind}: sup error vs quadrature {} (tol {tol:e}); vs closed form +{} / -{}",
                            sci(err),
                            sci(plus),
                            sci(minus)
                        ),
                    );
                }
                Err(e) => out.error(&format!("s={s} {kind}"), e),
            }
        }
        out.summary = format!("sup errors {}", worst.join(", "));
        out
    }

    pub fn closed_form_values(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("closed_form_values");
        let result = (|| -> Result<(f64, f64)> {
            let grid = VelocityGrid::new(128, L_V)?;
            let params = FracLapParams::new(0.5, L_LIM)?;
            let gauss = grid.sample(|v| (-v * v).exp());
            let at0 = frac_lap_at(&gauss, &params, &grid, &[PI / 2.0])?[0];
            let ls = assemble_ls(&params, &grid)?;
            let cauchy = grid.sample(|v| 1.0 / (PI * (1.0 + v * v)));
            let lc = ls.apply(&cauchy);
            let err = grid
                .v()
                .iter()
                .zip(&lc)
                .map(|(&v, &x)| (x - (1.0 - v * v) / (PI * (1.0 + v * v).powi(2))).abs())
                .fold(0.0, f64::max);
            Ok((at0, err))
        })();
        match result {
            Ok((at0, err)) => {
                let target = 2.0 / PI.sqrt();
                let d0 = (at0.abs() - target).abs();
                out.case(
                    d0 <= 1e-3,
                    format!(
                        "|(-Δ)^(1/2) e^(-v²)| at v=0 = {at0:.12} vs 2/√π, diff {}",
                        sci(d0)
                    ),
                );
                out.case(err <= 1e-3, format!("Cauchy image sup error {}", sci(err)));
                out.summary = format!("v=0 diff {}, Cauchy sup error {}", sci(d0), sci(err));
            }
            Err(e) => out.error("closed forms", e),
        }
        out
    }

    pub fn equilibrium_shape(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("equilibrium_shape");
        let mut parts = Vec::new();
        match self.setup(0.5, 128) {
            Ok(st) => {
                let cauchy =
                    normalize_mass(&st.vgrid.sample(|v| 1.0 / (PI * (1.0 + v * v))), &st.vgrid);
                let d = st.vgrid.weighted_l1(&st.eq.m, &cauchy);
                parts.push(format!("s=0.5 L1 vs Cauchy {}", sci(d)));
                out.case(
                    d <= 1e-3,
                    format!(
                        "s=0.5: weighted L1 to the normalized Cauchy density {} (tol 1e-3)",
                        sci(d)
                    ),
                );
            }
            Err(e) => out.error("s=0.5", e),
        }
        for s in [0.6, 0.8] {
            match self.setup(s, 128) {
                Ok(st) => {
                    let target = -(1.0 + 2.0 * s);
                    let slope = st.eq.tail_slope;
                    parts.push(format!("s={s} slope {slope:.3}"));
                    out.case(
                        (slope - target).abs() <= 0.15,
                        format!("s={s}: tail slope {slope:.4} vs {target} (tol 0.15)"),
                    );
                }
                Err(e) => out.error(&format!("s={s}"), e),
            }
        }
        out.summary = parts.join(", ");
        out
    }

    /// `ln H` against `t` over the middle half of the relaxation.
    pub fn entropy_decay(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("entropy_decay");
        let mut parts = Vec::new();
        for s in [0.5, 0.6, 0.8] {
            let result = (|| -> Result<(f64, f64, usize)> {
                let st = self.setup(s, 128)?;
                let run = relax(
                    &st.ps,
                    &normalized_gaussian(&st.vgrid),
                    0.01,
                    DEFAULT_EQUILIBRIUM_DELTA,
                    1_000_000,
                )?;
                let n = run.states.len();
                let pts: Vec<(f64, f64)> = (n / 4..3 * n / 4)
                    .filter_map(|k| {
                        let h = relative_entropy(
                            &normalize_mass(&run.states[k], &st.vgrid),
                            &st.eq.m,
                            &st.vgrid,
                        );
                        (h > 0.0).then(|| (run.t(k), h.ln()))
                    })
                    .collect();
                let (rate, _, r2) = linear_fit(&pts);
                Ok((r2, rate, pts.len()))
            })();
            match result {
                Ok((r2, rate, npts)) => {
                    parts.push(format!("s={s} R²={r2:.5}"));
                    out.case(
                        r2 >= 0.99,
                        format!("s={s}: R² {r2:.6} over {npts} points, decay rate {rate:.4}"),
                    );
                }
                Err(e) => out.error(&format!("s={s}"), e),
            }
        }
        out.summary = parts.join(", ");
        out
    }

    /// Mass defect of the numerical equilibrium for a Gaussian start of mass
    /// `√π`, relative to that mass.
    pub fn mass_table(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("mass_table");
        let targets: [(f64, usize, f64); 3] =
            [(0.5, 128, 2.2e-3), (0.6, 128, 5.9e-4), (0.8, 256, 9.4e-7)];
        // Differences below this are rounding noise and do not count against
        // the monotone trend.
        let noise = 1e-10;
        let mut parts = Vec::new();
        let mut table: HashMap<(u64, usize), f64> = HashMap::new();
        for s in [0.5, 0.6, 0.8] {
            let mut prev: Option<(usize, f64)> = None;
            let mut trend_ok = true;
            let mut row = Vec::new();
            for n_v in [64, 128, 256] {
                match self.setup(s, n_v) {
                    Ok(st) => {
                        let raw = st.vgrid.integrate_unchecked(&st.eq.raw_limit);
                        let err = PI.sqrt() * (raw - 1.0).abs();
                        table.insert((s.to_bits(), n_v), err);
                        row.push(format!("N_v={n_v}: {}", sci(err)));
                        if let Some((_, p)) = prev {
                            trend_ok &= err <= p + noise;
                        }
                        prev = Some((n_v, err));
                    }
                    Err(e) => {
                        out.error(&format!("s={s} N_v={n_v}"), e);
                        trend_ok = false;
                    }
                }
            }
            out.case(
                trend_ok,
                format!("s={s} nonincreasing in N_v: {}", row.join(", ")),
            );
        }
        for (s, n_v, target) in targets {
            if let Some(&err) = table.get(&(s.to_bits(), n_v)) {
                let ratio = err / target;
                parts.push(format!("({s},{n_v}) {} vs {}", sci(err), sci(target)));
                out.case(
                    (1.0 / 3.0..=3.0).contains(&ratio),
                    format!(
                        "s={s}, N_v={n_v}: {} vs table {} (ratio {ratio:.3e}, need within 3x)",
                        sci(err),
                        sci(target)
                    ),
                );
            }
        }
        out.summary = parts.join(", ");
        out
    }

    pub fn condition_table(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("condition_table");
        let cases = [(0.8, 1e-5, [9.46e9, 190.79]), (0.4, 1e-3, [7.74e3, 52.0])];
        let mut parts = Vec::new();
        for (s, eps, targets) in cases {
            let st = match self.setup(s, 64) {
                Ok(st) => st,
                Err(e) => {
                    out.error(&format!("s={s}"), e);
                    continue;
                }
            };
            for (gamma, target) in [0.0, 1.0].into_iter().zip(targets) {
                let kappa = step1_condition(&st.ps, eps, 0.1, gamma);
                let rel = (kappa - target).abs() / target;
                parts.push(format!("s={s} γ={gamma}: {}", sci(kappa)));
                out.case(
                    rel <= 0.05,
                    format!(
                        "s={s}, eps={eps:e}, γ={gamma}: cond {} vs {} (rel {rel:.3})",
                        sci(kappa),
                        sci(target)
                    ),
                );
            }
            // Diagnostic only: the same table for (r + γ)I − (P^s − I).
            let n = st.ps.len();
            let shifted = st.ps.mat() - DMatrix::<f64>::identity(n, n);
            let r = eps.powf(2.0 * s) / 0.1;
            let diag: Vec<String> = [0.0, 1.0]
                .into_iter()
                .map(|g| {
                    let a = DMatrix::<f64>::identity(n, n) * (r + g) - &shifted;
                    format!("γ={g}: {}", sci(crate::linalg::condition_number(&a)))
                })
                .collect();
            out.details.push(format!(
                "[info] s={s}, eps={eps:e}, shifted operator: {}",
                diag.join(", ")
            ));
        }
        out.summary = parts.join(", ");
        out
    }

    /// Slope of `e_Δt` over the halving ladder from 0.025.
    pub fn time_accuracy(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("time_accuracy");
        let mut parts = Vec::new();
        let dts: Vec<f64> = (0..5).map(|k| 0.025 / f64::from(1u32 << k)).collect();
        for s in [0.4, 0.8] {
            let ops = match self.setup(s, 128).and_then(|st| st.ap_operators(200, 5.0)) {
                Ok(o) => o,
                Err(e) => {
                    out.error(&format!("s={s}"), e);
                    continue;
                }
            };
            let f0 = InitialCondition::Ic2.sample(&ops.xgrid, &ops.vgrid);
            for eps in [1.0, 1e-3, 1e-5] {
                let result = (|| -> Result<(f64, Vec<f64>)> {
                    let fields = dts
                        .iter()
                        .map(|&dt| run_ap(&ops, &f0, eps, dt, 0.1).map(|r| r.f))
                        .collect::<Result<Vec<_>>>()?;
                    let errs: Vec<f64> = fields
                        .windows(2)
                        .map(|w| field_l1_distance(&w[0], &w[1], &ops))
                        .collect();
                    Ok((fit_slope(&dts[..4], &errs), errs))
                })();
                match result {
                    Ok((slope, errs)) => {
                        parts.push(format!("s={s} eps={eps:e}: {slope:.3}"));
                        let errs: Vec<String> = errs.iter().map(|&e| sci(e)).collect();
                        out.case(
                            (slope - 1.0).abs() <= 0.15,
                            format!(
                                "s={s}, eps={eps:e}: slope {slope:.4}, e_dt = [{}]",
                                errs.join(", ")
                            ),
                        );
                    }
                    Err(e) => {
                        parts.push(format!("s={s} eps={eps:e}: error"));
                        out.error(&format!("s={s}, eps={eps:e}"), e);
                    }
                }
            }
        }
        out.summary = parts.join(", ");
        out
    }

    pub fn energy_stability(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("energy_stability");
        let mut parts = Vec::new();
        for s in [0.4, 0.6, 0.8] {
            let ops = match self.setup(s, 128).and_then(|st| st.ap_operators(100, 5.0)) {
                Ok(o) => o,
                Err(e) => {
                    out.error(&format!("s={s}"), e);
                    continue;
                }
            };
            let f0 = InitialCondition::Ic2.sample(&ops.xgrid, &ops.vgrid);
            for eps in [1.0, 1e-3, 1e-5] {
                match run_ap(&ops, &f0, eps, 0.01, 0.1) {
                    Ok(run) => {
                        let rec = &run.records[1..];
                        let rise = rec
                            .windows(2)
                            .map(|w| (w[1].e_f - w[0].e_f) / w[0].e_f)
                            .fold(f64::NEG_INFINITY, f64::max);
                        let monotone = rise <= 0.0;
                        let (g1, eta1) = (rec[0].e_g, rec[0].e_eta);
                        let g_max = rec.iter().map(|r| r.e_g).fold(0.0, f64::max);
                        let eta_max = rec.iter().map(|r| r.e_eta).fold(0.0, f64::max);
                        let bounded = g_max <= 2.0 * g1 && eta_max <= 2.0 * eta1;
                        parts.push(format!(
                            "s={s} eps={eps:e}: {}",
                            if monotone && bounded {
                                "ok"
                            } else {
                                "violated"
                            }
                        ));
                        out.case(
                            monotone && bounded,
                            format!(
                                "s={s}, eps={eps:e}: largest relative E_f rise after step 1 {rise:.3e}; \
                                 max E_g/E_g¹ {:.4}, max E_η/E_η¹ {:.4}",
                                g_max / g1,
                                eta_max / eta1
                            ),
                        );
                    }
                    Err(e) => out.error(&format!("s={s}, eps={eps:e}"), e),
                }
            }
        }
        out.summary = parts.join(", ");
        out
    }

    /// AP scheme at `ε = 1` against the IMEX reference on a finer grid.
    pub fn kinetic_agreement(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("kinetic_agreement");
        let mut parts = Vec::new();
        for s in [0.5, 0.8] {
            let result = (|| -> Result<f64> {
                let coarse = self.setup(s, 64)?;
                let ops = coarse.ap_operators(50, PI)?;
                let f0 = InitialCondition::Ic1.sample(&ops.xgrid, &ops.vgrid);
                let ap = run_ap(&ops, &f0, 1.0, 0.05, 0.5)?;

                let fine = self.setup(s, 128)?;
                let xfine = SpatialGrid::new(100, PI)?;
                let imex =
                    ImexSolver::new(&fine.ps, &xfine, 1e-4, Transport::ExactPhase, DEFAULT_CFL)?;
                let f_ref = imex.run(
                    &InitialCondition::Ic1.sample(&xfine, &fine.vgrid),
                    step_count(0.5, 1e-4)?,
                    |_, _| {},
                )?;
                let rho_ref: Vec<f64> = f_ref
                    .column_iter()
                    .map(|c| fine.vgrid.integrate_unchecked(c.as_slice()))
                    .collect();
                let on_coarse = interpolate(&rho_ref, &Fourier::new(&xfine), ops.xgrid.x())?;
                Ok(l1_distance(&ap.rho, &on_coarse, ops.xgrid.dx()))
            })();
            match result {
                Ok(d) => {
                    parts.push(format!("s={s} L1 {}", sci(d)));
                    out.case(
                        d <= 5e-2,
                        format!("s={s}: L1 density difference {} (tol 5e-2)", sci(d)),
                    );
                }
                Err(e) => out.error(&format!("s={s}"), e),
            }
        }
        out.summary = parts.join(", ");
        out
    }

    /// ap_error decay in `ε` and the `ε = 1e-5` match with the limit solver.
    pub fn ap_property(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("ap_property");
        let eps_list = [1e-1, 1e-2, 1e-3, 1e-5];
        let mut parts = Vec::new();
        for s in [0.6, 0.8] {
            for (ic, l_x, dt, t_end) in [
                (InitialCondition::Ic1, PI, 0.1, 1.0),
                (InitialCondition::Ic2, 5.0, 0.01, 0.1),
            ] {
                let label = format!("s={s} {ic:?}");
                let result = (|| -> Result<(Vec<f64>, f64)> {
                    let st = self.setup(s, 128)?;
                    let ops = st.ap_operators(100, l_x)?;
                    let f0 = ic.sample(&ops.xgrid, &ops.vgrid);
                    let mut errs = Vec::new();
                    let mut limit_gap = f64::NAN;
                    for &eps in &eps_list {
                        let run = run_ap(&ops, &f0, eps, dt, t_end)?;
                        errs.push(run.records.last().expect("run records step 0").ap_error);
                        if eps == 1e-5 {
                            let lim = limit_density(&ops, &ops.density(&f0), s, dt, t_end)?;
                            limit_gap = l1_distance(&run.rho, &lim, ops.xgrid.dx());
                        }
                    }
                    Ok((errs, limit_gap))
                })();
                match result {
                    Ok((errs, gap)) => {
                        let order = fit_slope(&eps_list, &errs);
                        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
                        let shown: Vec<String> = errs.iter().map(|&e| sci(e)).collect();
                        parts.push(format!("{label}: order {order:.3}, limit L1 {}", sci(gap)));
                        out.case(
                            decreasing && (0.7..=1.3).contains(&order),
                            format!(
                                "{label}: ap_error [{}], decreasing={decreasing}, order {order:.4}",
                                shown.join(", ")
                            ),
                        );
                        out.case(
                            gap <= 5e-2,
                            format!("{label}: L1 to the limit density at eps=1e-5 {}", sci(gap)),
                        );
                    }
                    Err(e) => out.error(&label, e),
                }
            }
        }
        out.summary = parts.join("; ");
        out
    }

    /// `log‖g¹‖_∞` against `log ε` after one step from `ρ(x) M(v)`.
    pub fn micro_scaling(&mut self) -> CheckOutcome {
        let mut out = CheckOutcome::new("micro_scaling");
        let eps_list = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
        let mut parts = Vec::new();
        for s in [0.4, 0.6, 0.8] {
            let result = (|| -> Result<f64> {
                let st = self.setup(s, 128)?;
                let ops = st.ap_operators(100, PI)?;
                let rho = ops.xgrid.sample(|x| 1.0 + x.sin());
                let f0 = DMatrix::from_fn(ops.n_v(), ops.n_x(), |j, i| rho[i] * ops.m[j]);
                let mut norms = Vec::new();
                for &eps in &eps_list {
                    let solver = ApSolver::new(&ops, ApParams::new(eps, 1.0, 0.1)?)?;
                    let mut state = solver.initial_state(&f0, None)?;
                    solver.step(&mut state)?;
                    norms.push(state.g.amax());
                }
                Ok(fit_slope(&eps_list, &norms))
            })();
            match result {
                Ok(slope) => {
                    parts.push(format!("s={s}: {slope:.3} vs {:.1}", 2.0 * s));
                    out.case(
                        (slope - 2.0 * s).abs() <= 0.3,
                        format!("s={s}: slope {slope:.4} vs 2s = {:.1} (tol 0.3)", 2.0 * s),
                    );
                }
                Err(e) => out.error(&format!("s={s}"), e),
            }
        }
        out.summary = parts.join(", ");
        out
    }
}
