//! Experiment drivers behind the command-line modes.
//!
//! Every driver writes [`Table`] files into the configured output directory.
//! Each file carries the full configuration echo, the crate version and the
//! cache keys of the operators it used as `#` metadata lines.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ap_scheme::{
    field_l1_distance, reconstruct_and_density, step_count, ApOperators, ApParams, ApSolver,
    EnergyRecord, Field,
};
use crate::cache::{load_or_assemble_ls, load_or_compute_equilibrium, EquilibriumKey, OperatorKey};
use crate::collision::{
    assemble_ps, linear_fit, mass_error, normalize_mass, relative_entropy, relax,
    CollisionOperator, EquilibriumProfile,
};
use crate::config::{IcKind, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::fraclap::{frac_lap_quadrature_oracle, FracLapParams, OperatorKind, SpectralOperator};
use crate::grids::{SpatialGrid, VelocityGrid};
use crate::reference::{l1_distance, limit_solve_exact, limit_step, ImexSolver, LimitState};
use crate::table::Table;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// An AP run whose `E_f` exceeds this multiple of its initial value is
/// reported as a numerical failure.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Files written by a run, in creation order.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Short human-readable results.
    pub notes: Vec<String>,
}

impl RunReport {
    fn write(&mut self, table: &Table, path: PathBuf) -> Result<()> {
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    /// Writes a snapshot after stamping it with the run header.
    fn write_snapshot(&mut self, mut table: Table, cfg: &RunConfig, path: PathBuf) -> Result<()> {
        header(&mut table, cfg);
        self.write(&table, path)
    }
}

/// Velocity-space operators for one run.
struct VelocityOps {
    ls: SpectralOperator,
    ps: CollisionOperator,
    eq: EquilibriumProfile,
    ls_key: String,
    eq_key: String,
}

impl VelocityOps {
    fn build(cfg: &RunConfig) -> Result<Self> {
        let vgrid = VelocityGrid::new(cfg.n_v, cfg.l_v)?;
        let params = FracLapParams::new(cfg.s, cfg.l_lim)?;
        let cache = cfg.cache_dir.as_deref();
        let ls = load_or_assemble_ls(cache, &params, &vgrid)?;
        let ps = assemble_ps(&ls, &vgrid)?;
        let eq = load_or_compute_equilibrium(cache, &ps, cfg.eq_dt, cfg.delta)?;
        let op_key = OperatorKey::of(&ls);
        let eq_key = EquilibriumKey {
            operator: OperatorKey::of(ps.as_operator()),
            dt: cfg.eq_dt,
            delta: cfg.delta,
        };
        Ok(Self {
            ls_key: op_key.file_name(OperatorKind::FracLap),
            eq_key: eq_key.file_name(),
            ls,
            ps,
            eq,
        })
    }

    fn ap_operators(&self, cfg: &RunConfig) -> Result<ApOperators> {
        ApOperators::new(
            SpatialGrid::new(cfg.n_x, cfg.l_x)?,
            self.ls.clone(),
            self.ps.clone(),
            self.eq.m.clone(),
        )
    }

    fn annotate(&self, table: &mut Table) {
        table
            .meta("cache.ls", &self.ls_key)
            .meta("cache.equilibrium", &self.eq_key);
    }
}

/// Adds the version and configuration echo to a table.
fn header(table: &mut Table, cfg: &RunConfig) {
    table.meta("levy_fp_version", VERSION);
    for (k, v) in cfg.to_assignments() {
        table.meta(format!("config.{k}"), v);
    }
}

fn ap_params(cfg: &RunConfig, eps: f64, dt: f64) -> Result<ApParams> {
    let mut p = ApParams::new(eps, cfg.gamma, dt)?;
    p.project_growing_modes = cfg.project_growing_modes;
    p.condition_cap = cfg.condition_cap;
    Ok(p)
}

/// Long-format snapshot of `f`: one row per `(x_i, v_j)`, `i` outer.
pub fn f_snapshot(f: &Field, xgrid: &SpatialGrid, vgrid: &VelocityGrid, t: f64) -> Table {
    let mut table = Table::new(&["x", "v", "f"]);
    grid_meta(&mut table, xgrid, Some(vgrid), t);
    for (i, &x) in xgrid.x().iter().enumerate() {
        for (j, &v) in vgrid.v().iter().enumerate() {
            table.push(vec![x, v, f[(j, i)]]);
        }
    }
    table
}

pub fn rho_snapshot(rho: &[f64], xgrid: &SpatialGrid, t: f64) -> Table {
    let mut table = Table::new(&["x", "rho"]);
    grid_meta(&mut table, xgrid, None, t);
    for (&x, &r) in xgrid.x().iter().zip(rho) {
        table.push(vec![x, r]);
    }
    table
}

fn grid_meta(table: &mut Table, xgrid: &SpatialGrid, vgrid: Option<&VelocityGrid>, t: f64) {
    table
        .meta("n_x", xgrid.len())
        .meta("l_x", format!("{:?}", xgrid.l_x()));
    if let Some(vg) = vgrid {
        table
            .meta("n_v", vg.len())
            .meta("l_v", format!("{:?}", vg.l_v()));
    }
    table.meta("t", format!("{t:?}"));
}

/// Reads an `f` snapshot written by [`f_snapshot`] and checks it against the
/// given grids.
pub fn read_f_snapshot(path: &Path, xgrid: &SpatialGrid, vgrid: &VelocityGrid) -> Result<Field> {
    let table = Table::read(path)?;
    let bad = |what: String| Error::Config(format!("ic_file {}: {what}", path.display()));
    let meta_usize = |k: &str| -> Result<usize> {
        table
            .meta_value(k)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(format!("missing or invalid '{k}' header")))
    };
    let (n_x, n_v) = (meta_usize("n_x")?, meta_usize("n_v")?);
    if n_x != xgrid.len() || n_v != vgrid.len() {
        return Err(bad(format!(
            "grid is N_x={n_x}, N_v={n_v} but the run uses N_x={}, N_v={}",
            xgrid.len(),
            vgrid.len()
        )));
    }
    let (xs, vs, fs) = match (table.column("x"), table.column("v"), table.column("f")) {
        (Some(x), Some(v), Some(f)) => (x, v, f),
        _ => return Err(bad("expected columns x, v, f".into())),
    };
    if fs.len() != n_x * n_v {
        return Err(bad(format!(
            "has {} rows, expected {}",
            fs.len(),
            n_x * n_v
        )));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    for i in 0..n_x {
        for j in 0..n_v {
            let k = i * n_v + j;
            if !close(xs[k], xgrid.x()[i]) || !close(vs[k], vgrid.v()[j]) {
                return Err(bad(format!("row {} does not lie on the run's grid", k + 1)));
            }
        }
    }
    Ok(DMatrix::from_fn(n_v, n_x, |j, i| fs[i * n_v + j]))
}

fn initial_field(cfg: &RunConfig, xgrid: &SpatialGrid, vgrid: &VelocityGrid) -> Result<Field> {
    match cfg.ic {
        IcKind::Builtin(ic) => Ok(ic.sample(xgrid, vgrid)),
        IcKind::CustomFile => {
            let path = cfg
                .ic_file
                .as_deref()
                .expect("validated config has ic_file");
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "ic_file {} does not exist",
                    path.display()
                )));
            }
            read_f_snapshot(path, xgrid, vgrid)
        }
    }
}

/// Executes the configured mode, writing into `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    fs::create_dir_all(&cfg.output_dir)?;
    info!("mode {} -> {}", cfg.mode, cfg.output_dir.display());
    match cfg.mode {
        Mode::OperatorTest => operator_test(cfg),
        Mode::Homogeneous => homogeneous(cfg),
        Mode::Ap => {
            let vops = VelocityOps::build(cfg)?;
            let ops = vops.ap_operators(cfg)?;
            let eps = cfg.eps.expect("validated config has eps");
            let (report, _) = ap_run(cfg, &vops, &ops, eps, cfg.dt, &cfg.output_dir)?;
            Ok(report)
        }
        Mode::ImexReference => imex_reference(cfg),
        Mode::Limit => limit(cfg),
        Mode::EpsSweep => eps_sweep(cfg),
        Mode::DtRefinement => dt_refinement(cfg),
    }
}

fn operator_test(cfg: &RunConfig) -> Result<RunReport> {
    let s = cfg.s;
    let power_law = s < 0.5;
    let mut table = Table::new(&["n_v", "err_exp", "err_pl"]).with_integer_columns(&["n_v"]);
    header(&mut table, cfg);
    table.meta(
        "note",
        "sup-norm error of L_s f against the quadrature oracle over |v| <= 10; err_pl is NaN for s >= 1/2",
    );
    let params = FracLapParams::new(s, cfg.l_lim)?;
    let rows: Vec<Vec<f64>> = cfg
        .n_v_list
        .par_iter()
        .map(|&n_v| -> Result<Vec<f64>> {
            let grid = VelocityGrid::new(n_v, cfg.l_v)?;
            let ls = load_or_assemble_ls(cfg.cache_dir.as_deref(), &params, &grid)?;
            let sup_err = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
                let lf = ls.apply(&grid.sample(f));
                let mut err = 0.0f64;
                for (j, &v) in grid.v().iter().enumerate() {
                    if v.abs() <= 10.0 {
                        err = err.max((lf[j] - frac_lap_quadrature_oracle(f, v, s, 1e-10)?).abs());
                    }
                }
                Ok(err)
            };
            let e_exp = sup_err(&|v: f64| (-v * v).exp())?;
            let e_pl = if power_law {
                sup_err(&|v: f64| (1.0 + v * v).powf(-(1.0 - 2.0 * s) / 2.0))?
            } else {
                f64::NAN
            };
            Ok(vec![n_v as f64, e_exp, e_pl])
        })
        .collect::<Result<_>>()?;
    for row in rows {
        table.push(row);
    }
    let mut report = RunReport::default();
    report.write(&table, cfg.output_dir.join("operator_errors.csv"))?;
    Ok(report)
}

fn homogeneous(cfg: &RunConfig) -> Result<RunReport> {
    let vops = VelocityOps::build(cfg)?;
    let grid = vops.ps.grid();
    let f0 = grid.sample(|v| (-v * v).exp());
    let m0 = PI.sqrt();
    let run = relax(&vops.ps, &f0, cfg.dt, cfg.delta, cfg.max_relax_steps)?;

    let mut series = Table::new(&["step", "t", "H", "mass_error"]).with_integer_columns(&["step"]);
    header(&mut series, cfg);
    vops.annotate(&mut series);
    series.meta(
        "note",
        "H is the relative entropy of the unit-mass iterate; mass_error = |mass - sqrt(pi)|",
    );
    let mut fit_pts = Vec::new();
    let n = run.states.len();
    for (k, f) in run.states.iter().enumerate() {
        let h = relative_entropy(&normalize_mass(f, grid), &vops.eq.m, grid);
        if (n / 4..3 * n / 4).contains(&k) && h > 0.0 {
            fit_pts.push((run.t(k), h.ln()));
        }
        series.push(vec![k as f64, run.t(k), h, mass_error(f, grid, m0)]);
    }
    let (rate, _, r2) = linear_fit(&fit_pts);
    series
        .meta("entropy_decay_rate", format!("{rate:?}"))
        .meta("entropy_fit_r2", format!("{r2:?}"));

    let mut eq = Table::new(&["q", "v", "w", "M", "f_final"]);
    header(&mut eq, cfg);
    vops.annotate(&mut eq);
    eq.meta("mass", format!("{:?}", vops.eq.mass))
        .meta("tail_slope", format!("{:?}", vops.eq.tail_slope))
        .meta("t_converged", format!("{:?}", vops.eq.t_converged))
        .meta("relaxation_t_converged", format!("{:?}", run.t(n - 1)));
    let last = run.last();
    for (j, &f) in last.iter().enumerate() {
        eq.push(vec![grid.q()[j], grid.v()[j], grid.w()[j], vops.eq.m[j], f]);
    }

    let mut report = RunReport::default();
    report.notes.push(format!(
        "equilibrium tail slope {:.4}, relaxation converged at t = {}, entropy R² {r2:.5}",
        vops.eq.tail_slope,
        run.t(n - 1)
    ));
    report.write(&series, cfg.output_dir.join("relaxation.csv"))?;
    report.write(&eq, cfg.output_dir.join("equilibrium.csv"))?;
    Ok(report)
}

/// Final `f`, `ρ` and energy record of an AP run.
type ApFinal = (Field, Vec<f64>, EnergyRecord);

fn snapshot_due(cfg: &RunConfig, step: usize, last: usize) -> bool {
    step == last || (cfg.snapshot_every > 0 && step.is_multiple_of(cfg.snapshot_every))
}

/// One AP run at `(eps, dt)` to `cfg.t_end`, writing diagnostics and
/// snapshots into `dir`. Returns the final `f`.
fn ap_run(
    cfg: &RunConfig,
    vops: &VelocityOps,
    ops: &ApOperators,
    eps: f64,
    dt: f64,
    dir: &Path,
) -> Result<(RunReport, ApFinal)> {
    fs::create_dir_all(dir)?;
    let f0 = initial_field(cfg, &ops.xgrid, &ops.vgrid)?;
    let solver = ApSolver::new(ops, ap_params(cfg, eps, dt)?)?;
    let mut state = solver.initial_state(&f0, None)?;
    let n_steps = step_count(cfg.t_end, dt)?;

    let mut diag = Table::new(&["step", "t", "E_f", "E_g", "E_eta", "ap_error", "mass"])
        .with_integer_columns(&["step"]);
    header(&mut diag, cfg);
    vops.annotate(&mut diag);
    diag.meta("run.eps", format!("{eps:?}"))
        .meta("run.dt", format!("{dt:?}"))
        .meta("step1_condition", format!("{:?}", solver.condition()));

    let mut report = RunReport::default();
    let push = |diag: &mut Table, r: &EnergyRecord| {
        diag.push(vec![
            r.step as f64,
            r.t,
            r.e_f,
            r.e_g,
            r.e_eta,
            r.ap_error,
            r.mass,
        ]);
    };
    let mut last = crate::ap_scheme::energies(&state, 0, ops)?;
    let e_f0 = last.e_f;
    push(&mut diag, &last);
    for n in 1..=n_steps {
        solver.step(&mut state)?;
        last = crate::ap_scheme::energies(&state, n, ops)?;
        push(&mut diag, &last);
        if !(last.e_f <= DIVERGENCE_FACTOR * e_f0) {
            diag.write(&dir.join("diagnostics.csv"))?;
            return Err(Error::NoConvergence {
                iterations: n,
                what: format!(
                    "AP run diverged: E_f grew from {e_f0:.3e} to {:.3e} by t = {} (eps^(2s)/dt = {:.4})",
                    last.e_f,
                    last.t,
                    crate::ap_scheme::relaxation_rate(eps, cfg.s, dt)
                ),
            });
        }
        if snapshot_due(cfg, n, n_steps) {
            let (f, rho) = reconstruct_and_density(&state, ops)?;
            report.write_snapshot(
                f_snapshot(&f, &ops.xgrid, &ops.vgrid, state.t),
                cfg,
                dir.join(format!("f_{n:06}.txt")),
            )?;
            report.write_snapshot(
                rho_snapshot(&rho, &ops.xgrid, state.t),
                cfg,
                dir.join(format!("rho_{n:06}.txt")),
            )?;
        }
    }
    report.write(&diag, dir.join("diagnostics.csv"))?;
    let (f, rho) = reconstruct_and_density(&state, ops)?;
    report.notes.push(format!(
        "eps = {eps:e}, dt = {dt}: final ap_error {:.6e}, E_f {:.6e}",
        last.ap_error, last.e_f
    ));
    Ok((report, (f, rho, last)))
}

fn imex_reference(cfg: &RunConfig) -> Result<RunReport> {
    let vops = VelocityOps::build(cfg)?;
    let xgrid = SpatialGrid::new(cfg.n_x, cfg.l_x)?;
    let vgrid = vops.ps.grid().clone();
    let eps = cfg.eps_or_kinetic();
    let solver = ImexSolver::scaled(&vops.ps, &xgrid, cfg.dt, eps, cfg.imex_transport, cfg.cfl)?;
    let f0 = initial_field(cfg, &xgrid, &vgrid)?;
    let n_steps = step_count(cfg.t_end, cfg.dt)?;
    let density = |f: &Field| -> Vec<f64> {
        f.column_iter()
            .map(|c| vgrid.integrate_unchecked(c.as_slice()))
            .collect()
    };

    let mut series = Table::new(&["step", "t", "mass"]).with_integer_columns(&["step"]);
    header(&mut series, cfg);
    vops.annotate(&mut series);
    series.push(vec![
        0.0,
        0.0,
        density(&f0).iter().sum::<f64>() * xgrid.dx(),
    ]);

    let mut report = RunReport::default();
    let mut snapshots: Vec<(usize, Field)> = Vec::new();
    let f = solver.run(&f0, n_steps, |n, f| {
        series.push(vec![
            n as f64,
            n as f64 * cfg.dt,
            density(f).iter().sum::<f64>() * xgrid.dx(),
        ]);
        if n != n_steps && snapshot_due(cfg, n, n_steps) {
            snapshots.push((n, f.clone()));
        }
    })?;
    snapshots.push((n_steps, f));
    for (n, f) in &snapshots {
        let t = *n as f64 * cfg.dt;
        report.write_snapshot(
            f_snapshot(f, &xgrid, &vgrid, t),
            cfg,
            cfg.output_dir.join(format!("f_{n:06}.txt")),
        )?;
        report.write_snapshot(
            rho_snapshot(&density(f), &xgrid, t),
            cfg,
            cfg.output_dir.join(format!("rho_{n:06}.txt")),
        )?;
    }
    report.write(&series, cfg.output_dir.join("imex.csv"))?;
    Ok(report)
}

fn limit(cfg: &RunConfig) -> Result<RunReport> {
    let xgrid = SpatialGrid::new(cfg.n_x, cfg.l_x)?;
    let vgrid = VelocityGrid::new(cfg.n_v, cfg.l_v)?;
    let fourier = crate::fourier::Fourier::new(&xgrid);
    let f0 = initial_field(cfg, &xgrid, &vgrid)?;
    let rho0: Vec<f64> = f0
        .column_iter()
        .map(|c| vgrid.integrate_unchecked(c.as_slice()))
        .collect();
    let n_steps = step_count(cfg.t_end, cfg.dt)?;

    let mut series =
        Table::new(&["step", "t", "mass", "l1_vs_exact"]).with_integer_columns(&["step"]);
    header(&mut series, cfg);
    let mut report = RunReport::default();
    let mut state = LimitState::new(&rho0, cfg.s, &fourier)?;
    series.push(vec![0.0, 0.0, rho0.iter().sum::<f64>() * xgrid.dx(), 0.0]);
    for n in 1..=n_steps {
        state = limit_step(&state, cfg.dt, fourier.xi());
        let rho = state.density(&fourier)?;
        let exact = limit_solve_exact(&rho0, state.t, cfg.s, &fourier)?;
        series.push(vec![
            n as f64,
            state.t,
            rho.iter().sum::<f64>() * xgrid.dx(),
            l1_distance(&rho, &exact, xgrid.dx()),
        ]);
        if snapshot_due(cfg, n, n_steps) {
            report.write_snapshot(
                rho_snapshot(&rho, &xgrid, state.t),
                cfg,
                cfg.output_dir.join(format!("rho_{n:06}.txt")),
            )?;
        }
    }
    report.write(&series, cfg.output_dir.join("limit.csv"))?;
    Ok(report)
}

fn eps_sweep(cfg: &RunConfig) -> Result<RunReport> {
    let vops = VelocityOps::build(cfg)?;
    let ops = vops.ap_operators(cfg)?;
    let n_steps = step_count(cfg.t_end, cfg.dt)?;
    let f0 = initial_field(cfg, &ops.xgrid, &ops.vgrid)?;
    let mut limit_state = LimitState::new(&ops.density(&f0), cfg.s, &ops.fourier)?;
    for _ in 0..n_steps {
        limit_state = limit_step(&limit_state, cfg.dt, ops.fourier.xi());
    }
    let lim = limit_state.density(&ops.fourier)?;

    let runs: Vec<(RunReport, ApFinal)> = cfg
        .eps_list
        .par_iter()
        .enumerate()
        .map(|(k, &eps)| {
            ap_run(
                cfg,
                &vops,
                &ops,
                eps,
                cfg.dt,
                &cfg.output_dir.join(format!("eps_{k:02}")),
            )
        })
        .collect::<Result<_>>()?;

    let mut summary = Table::new(&["eps", "ap_error", "l1_vs_limit"]);
    header(&mut summary, cfg);
    vops.annotate(&mut summary);
    let mut report = RunReport::default();
    let mut pts = Vec::new();
    for (&eps, (sub, (_, rho, last))) in cfg.eps_list.iter().zip(runs) {
        report.files.extend(sub.files);
        report.notes.extend(sub.notes);
        summary.push(vec![
            eps,
            last.ap_error,
            l1_distance(rho.as_slice(), &lim, ops.xgrid.dx()),
        ]);
        pts.push((eps.ln(), last.ap_error.ln()));
    }
    if pts.len() >= 2 {
        let order = linear_fit(&pts).0;
        summary.meta("ap_error_order", format!("{order:?}"));
        report
            .notes
            .push(format!("ap_error order in eps: {order:.4}"));
    }
    report.write(&summary, cfg.output_dir.join("eps_sweep.csv"))?;
    Ok(report)
}

fn dt_refinement(cfg: &RunConfig) -> Result<RunReport> {
    let vops = VelocityOps::build(cfg)?;
    let ops = vops.ap_operators(cfg)?;
    let eps = cfg.eps.expect("validated config has eps");
    let dts: Vec<f64> = (0..cfg.dt_levels)
        .map(|k| cfg.dt / 2f64.powi(k as i32))
        .collect();
    let runs: Vec<(RunReport, ApFinal)> = dts
        .par_iter()
        .enumerate()
        .map(|(k, &dt)| {
            ap_run(
                cfg,
                &vops,
                &ops,
                eps,
                dt,
                &cfg.output_dir.join(format!("dt_{k:02}")),
            )
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new(&["dt", "e_dt"]);
    header(&mut table, cfg);
    vops.annotate(&mut table);
    table.meta("note", "e_dt = sum |f^dt(T) - f^(dt/2)(T)| w dq dx");
    let mut report = RunReport::default();
    let mut pts = Vec::new();
    for k in 0..runs.len() - 1 {
        let e = field_l1_distance(&(runs[k].1).0, &(runs[k + 1].1).0, &ops);
        table.push(vec![dts[k], e]);
        pts.push((dts[k].ln(), e.ln()));
    }
    let slope = linear_fit(&pts).0;
    table.meta("slope", format!("{slope:?}"));
    for (sub, _) in runs {
        report.files.extend(sub.files);
    }
    report.notes.push(format!("e_dt slope {slope:.4}"));
    report.write(&table, cfg.output_dir.join("dt_refinement.csv"))?;
    Ok(report)
}
