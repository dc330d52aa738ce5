//! Python bindings for the `levy_fp` solvers.
//!
//! Arrays cross the boundary as plain lists. Velocity-by-space fields are
//! returned as a list of `n_v` rows, each holding `n_x` values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use levy_fp::ap_scheme::{
    reconstruct_and_density, ApOperators, ApParams, ApSolver, EnergyRecord, SplitState,
};
use levy_fp::cache::{load_or_assemble_ls, load_or_compute_equilibrium};
use levy_fp::collision::{self, EquilibriumProfile};
use levy_fp::config::{IcKind, RunConfig};
use levy_fp::fourier::Fourier;
use levy_fp::fraclap::{self, FracLapParams, SpectralOperator};
use levy_fp::grids;
use levy_fp::reference::limit_solve_exact;
use levy_fp::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(frozen, module = "levy_fp_py")]
struct VelocityGrid(grids::VelocityGrid);

#[pymethods]
impl VelocityGrid {
    #[new]
    #[pyo3(signature = (n_v, l_v = 3.0))]
    fn new(n_v: usize, l_v: f64) -> PyResult<Self> {
        grids::VelocityGrid::new(n_v, l_v).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_v(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn l_v(&self) -> f64 {
        self.0.l_v()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.0.q().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.0.v().to_vec()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.0.w().to_vec()
    }

    /// Quadrature of `f` sampled on the nodes.
    fn integrate(&self, f: Vec<f64>) -> PyResult<f64> {
        self.0.integrate(&f).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("VelocityGrid(n_v={}, l_v={})", self.0.len(), self.0.l_v())
    }
}

#[pyclass(frozen, module = "levy_fp_py")]
struct SpatialGrid(grids::SpatialGrid);

#[pymethods]
impl SpatialGrid {
    #[new]
    fn new(n_x: usize, l_x: f64) -> PyResult<Self> {
        grids::SpatialGrid::new(n_x, l_x).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn l_x(&self) -> f64 {
        self.0.l_x()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.0.x().to_vec()
    }

    #[getter]
    fn xi(&self) -> Vec<f64> {
        self.0.xi().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("SpatialGrid(n_x={}, l_x={})", self.0.len(), self.0.l_x())
    }
}

/// The discrete fractional Laplacian `L_s` on a velocity grid.
#[pyclass(frozen, module = "levy_fp_py")]
struct FracLap(SpectralOperator);

#[pymethods]
impl FracLap {
    #[new]
    #[pyo3(signature = (s, grid, l_lim = 300, cache_dir = None))]
    fn new(
        s: f64,
        grid: &VelocityGrid,
        l_lim: usize,
        cache_dir: Option<PathBuf>,
    ) -> PyResult<Self> {
        let params = FracLapParams::new(s, l_lim).map_err(to_py)?;
        load_or_assemble_ls(cache_dir.as_deref(), &params, &grid.0)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn s(&self) -> f64 {
        self.0.s()
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.0.mat())
    }

    fn apply(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        check_len(f.len(), self.0.len())?;
        Ok(self.0.apply(&f))
    }

    /// Evaluates `(-Δ)^{s/2} f` at arbitrary angles `q` of the map.
    fn evaluate_at(&self, f: Vec<f64>, q: Vec<f64>) -> PyResult<Vec<f64>> {
        let params = FracLapParams::new(self.0.s(), self.0.l_lim()).map_err(to_py)?;
        fraclap::frac_lap_at(&f, &params, self.0.grid(), &q).map_err(to_py)
    }
}

fn check_len(got: usize, expected: usize) -> PyResult<()> {
    if got == expected {
        Ok(())
    } else {
        Err(to_py(Error::LengthMismatch { expected, got }))
    }
}

#[pyclass(frozen, get_all, module = "levy_fp_py")]
struct Equilibrium {
    m: Vec<f64>,
    mass: f64,
    tail_slope: f64,
    s: f64,
    t_converged: f64,
    steps: usize,
}

impl From<EquilibriumProfile> for Equilibrium {
    fn from(p: EquilibriumProfile) -> Self {
        Self {
            m: p.m,
            mass: p.mass,
            tail_slope: p.tail_slope,
            s: p.s,
            t_converged: p.t_converged,
            steps: p.steps,
        }
    }
}

/// The collision operator `P^s`.
#[pyclass(frozen, module = "levy_fp_py")]
struct Collision(collision::CollisionOperator);

#[pymethods]
impl Collision {
    #[new]
    fn new(ls: &FracLap) -> PyResult<Self> {
        collision::assemble_ps(&ls.0, ls.0.grid())
            .map(Self)
            .map_err(to_py)
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.0.mat())
    }

    fn apply(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        check_len(f.len(), self.0.len())?;
        Ok(self.0.apply(&f))
    }

    /// One implicit homogeneous step `(I - dt P) f_next = f`.
    fn step(&self, f: Vec<f64>, dt: f64) -> PyResult<Vec<f64>> {
        check_len(f.len(), self.0.len())?;
        collision::step_homogeneous(&f, dt, &self.0).map_err(to_py)
    }

    #[pyo3(signature = (dt = 0.01, delta = 1e-6, cache_dir = None))]
    fn equilibrium(
        &self,
        dt: f64,
        delta: f64,
        cache_dir: Option<PathBuf>,
    ) -> PyResult<Equilibrium> {
        load_or_compute_equilibrium(cache_dir.as_deref(), &self.0, dt, delta)
            .map(Equilibrium::from)
            .map_err(to_py)
    }
}

#[pyclass(frozen, get_all, module = "levy_fp_py")]
struct Energies {
    step: usize,
    t: f64,
    e_f: f64,
    e_g: f64,
    e_eta: f64,
    ap_error: f64,
    mass: f64,
}

impl From<EnergyRecord> for Energies {
    fn from(r: EnergyRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            e_f: r.e_f,
            e_g: r.e_g,
            e_eta: r.e_eta,
            ap_error: r.ap_error,
            mass: r.mass,
        }
    }
}

/// An asymptotic-preserving run on a periodic spatial grid.
#[pyclass(module = "levy_fp_py")]
struct ApSimulation {
    ops: ApOperators,
    params: ApParams,
    state: SplitState,
    steps: usize,
}

impl ApSimulation {
    fn solver(&self) -> PyResult<ApSolver<'_>> {
        ApSolver::new(&self.ops, self.params).map_err(to_py)
    }
}

#[pymethods]
impl ApSimulation {
    #[new]
    #[pyo3(signature = (s, eps, dt, n_x, l_x, n_v, ic = "IC1", gamma = 1.0, l_v = 3.0, l_lim = 300, cache_dir = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        s: f64,
        eps: f64,
        dt: f64,
        n_x: usize,
        l_x: f64,
        n_v: usize,
        ic: &str,
        gamma: f64,
        l_v: f64,
        l_lim: usize,
        cache_dir: Option<PathBuf>,
    ) -> PyResult<Self> {
        let IcKind::Builtin(ic) = ic.parse::<IcKind>().map_err(to_py)? else {
            return Err(PyValueError::new_err(
                "ApSimulation takes a built-in initial condition",
            ));
        };
        let cache = cache_dir.as_deref();
        let vgrid = grids::VelocityGrid::new(n_v, l_v).map_err(to_py)?;
        let xgrid = grids::SpatialGrid::new(n_x, l_x).map_err(to_py)?;
        let ls = load_or_assemble_ls(cache, &FracLapParams::new(s, l_lim).map_err(to_py)?, &vgrid)
            .map_err(to_py)?;
        let ps = collision::assemble_ps(&ls, &vgrid).map_err(to_py)?;
        let eq = load_or_compute_equilibrium(cache, &ps, 0.01, 1e-6).map_err(to_py)?;
        let f0 = ic.sample(&xgrid, &vgrid);
        let ops = ApOperators::new(xgrid, ls, ps, eq.m).map_err(to_py)?;
        let params = ApParams::new(eps, gamma, dt).map_err(to_py)?;
        let state = ApSolver::new(&ops, params)
            .and_then(|solver| solver.initial_state(&f0, None))
            .map_err(to_py)?;
        Ok(Self {
            ops,
            params,
            state,
            steps: 0,
        })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn equilibrium(&self) -> Vec<f64> {
        self.ops.m.clone()
    }

    /// Advances `n` steps and returns the energies after each one.
    fn advance(&mut self, n: usize) -> PyResult<Vec<Energies>> {
        let solver = ApSolver::new(&self.ops, self.params).map_err(to_py)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            solver.step(&mut self.state).map_err(to_py)?;
            self.steps += 1;
            out.push(
                levy_fp::ap_scheme::energies(&self.state, self.steps, &self.ops)
                    .map_err(to_py)?
                    .into(),
            );
        }
        Ok(out)
    }

    fn energies(&self) -> PyResult<Energies> {
        levy_fp::ap_scheme::energies(&self.state, self.steps, &self.ops)
            .map(Energies::from)
            .map_err(to_py)
    }

    /// Condition number of the collision solve.
    fn condition(&self) -> PyResult<f64> {
        Ok(self.solver()?.condition())
    }

    fn density(&self) -> PyResult<Vec<f64>> {
        reconstruct_and_density(&self.state, &self.ops)
            .map(|(_, rho)| rho)
            .map_err(to_py)
    }

    fn field(&self) -> PyResult<Vec<Vec<f64>>> {
        reconstruct_and_density(&self.state, &self.ops)
            .map(|(f, _)| rows(&f))
            .map_err(to_py)
    }
}

/// Exact solution of the fractional heat equation from density `rho` at time `t`.
#[pyfunction]
fn limit_density(rho: Vec<f64>, t: f64, s: f64, l_x: f64) -> PyResult<Vec<f64>> {
    let xgrid = grids::SpatialGrid::new(rho.len(), l_x).map_err(to_py)?;
    limit_solve_exact(&rho, t, s, &Fourier::new(&xgrid)).map_err(to_py)
}

/// Runs a command-line mode with `key=value` settings and returns the written files.
#[pyfunction]
#[pyo3(signature = (mode, settings = None))]
fn run(mode: &str, settings: Option<BTreeMap<String, String>>) -> PyResult<Vec<PathBuf>> {
    let mut pairs = vec![("mode".to_string(), mode.to_string())];
    pairs.extend(settings.unwrap_or_default());
    let cfg = RunConfig::from_assignments(None, &pairs).map_err(to_py)?;
    levy_fp::run::run(&cfg).map(|r| r.files).map_err(to_py)
}

#[pymodule]
fn levy_fp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", levy_fp::run::VERSION)?;
    m.add_class::<VelocityGrid>()?;
    m.add_class::<SpatialGrid>()?;
    m.add_class::<FracLap>()?;
    m.add_class::<Collision>()?;
    m.add_class::<Equilibrium>()?;
    m.add_class::<Energies>()?;
    m.add_class::<ApSimulation>()?;
    m.add_function(wrap_pyfunction!(limit_density, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
