//! Python bindings for the `ridechain` crate.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ridechain::coupling;
use ridechain::exact::{self, LowerBoundChain};
use ridechain::fit;
use ridechain::mdp::{self, Chooser, MdpInstance};
use ridechain::series::Target;
use ridechain::simulator::{run_ensemble, Arrivals, Estimator, InitialState, SimConfig};

fn err(e: ridechain::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Grid", frozen, eq, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyGrid(ridechain::Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(rows: usize, cols: usize) -> PyResult<Self> {
        ridechain::Grid::new(rows, cols).map(PyGrid).map_err(err)
    }

    /// Parses `RxC`.
    #[staticmethod]
    fn parse(spec: &str) -> PyResult<Self> {
        spec.parse().map(PyGrid).map_err(err)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn index(&self, row: usize, col: usize) -> PyResult<usize> {
        self.0.index(row, col).map_err(err)
    }

    fn coords(&self, u: usize) -> PyResult<(usize, usize)> {
        self.0.coords(u).map_err(err)
    }

    fn neighbors(&self, u: usize) -> PyResult<Vec<usize>> {
        self.0.neighbors(u).map_err(err)
    }

    fn closed_neighborhood(&self, u: usize) -> PyResult<Vec<usize>> {
        self.0.closed_neighborhood(u).map_err(err)
    }

    fn manhattan_distance(&self, u: usize, v: usize) -> PyResult<usize> {
        self.0.manhattan_distance(u, v).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Grid({}, {})", self.0.rows(), self.0.cols())
    }
}

#[pyclass(name = "DriverState", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyDriverState(ridechain::DriverState);

#[pymethods]
impl PyDriverState {
    #[new]
    fn new(counts: Vec<u32>, capacity: u32) -> PyResult<Self> {
        ridechain::DriverState::new(counts, capacity).map(PyDriverState).map_err(err)
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.0.counts().to_vec()
    }

    #[getter]
    fn capacity(&self) -> u32 {
        self.0.capacity()
    }

    #[getter]
    fn total(&self) -> u32 {
        self.0.total()
    }

    /// One driver moves from `src` to `dst`.
    fn apply_move(&self, src: usize, dst: usize) -> PyResult<Self> {
        self.0.apply_move(src, dst).map(PyDriverState).map_err(err)
    }

    fn l1_distance(&self, other: &PyDriverState) -> u32 {
        self.0.l1_distance(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("DriverState({})", self.0)
    }
}

#[pyclass(name = "StateSpace", frozen)]
struct PyStateSpace(ridechain::StateSpace);

#[pymethods]
impl PyStateSpace {
    #[new]
    fn new(grid: PyGrid, drivers: u32, capacity: u32) -> PyResult<Self> {
        ridechain::StateSpace::new(grid.0, drivers, capacity)
            .map(PyStateSpace)
            .map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn rank(&self, state: &PyDriverState) -> PyResult<usize> {
        self.0.rank(&state.0).map_err(err)
    }

    fn unrank(&self, index: usize) -> PyResult<PyDriverState> {
        self.0.unrank(index).map(PyDriverState).map_err(err)
    }

    /// Count vectors in rank order.
    fn states(&self) -> Vec<Vec<u32>> {
        self.0.iter().map(|s| s.counts().to_vec()).collect()
    }
}

#[pyclass(name = "Policy", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyPolicy(ridechain::Policy);

#[pymethods]
impl PyPolicy {
    /// `nadap:ALPHA[:drop|origin]`, `rand[:ORDER]` or `greedy`.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(PyPolicy).map_err(err)
    }

    fn success_probability(&self, grid: PyGrid, state: &PyDriverState, origin: usize, dest: usize) -> f64 {
        self.0.success_probability(&grid.0, &state.0, origin, dest)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Policy({:?})", self.0.to_string())
    }
}

#[pyclass(name = "RequestModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRequestModel(ridechain::RequestModel);

#[pymethods]
impl PyRequestModel {
    /// Every ordered pair arrives with probability `p`.
    #[staticmethod]
    #[pyo3(signature = (grid, p, weights = "const:1"))]
    fn uniform(grid: PyGrid, p: f64, weights: &str) -> PyResult<Self> {
        let w = weights.parse().map_err(err)?;
        ridechain::RequestModel::uniform(grid.0, p, w)
            .map(PyRequestModel)
            .map_err(err)
    }

    /// Row-major `p[u * n + v]`.
    #[staticmethod]
    #[pyo3(signature = (grid, p, weights = "const:1"))]
    fn from_probabilities(grid: PyGrid, p: Vec<f64>, weights: &str) -> PyResult<Self> {
        let w = weights.parse().map_err(err)?;
        ridechain::RequestModel::new(grid.0, p, w)
            .map(PyRequestModel)
            .map_err(err)
    }

    #[staticmethod]
    fn load(grid: PyGrid, path: PathBuf) -> PyResult<Self> {
        ridechain::RequestModel::load(grid.0, &path)
            .map(PyRequestModel)
            .map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid())
    }

    fn p(&self, origin: usize, dest: usize) -> f64 {
        self.0.p(origin, dest)
    }

    fn w(&self, origin: usize, dest: usize) -> f64 {
        self.0.w(origin, dest)
    }

    fn probabilities(&self) -> Vec<f64> {
        self.0.probabilities().to_vec()
    }

    fn total_weight(&self) -> f64 {
        self.0.total_weight()
    }

    fn no_request_mass(&self) -> f64 {
        self.0.no_request_mass()
    }

    fn hotspot(&self) -> Option<usize> {
        self.0.hotspot()
    }
}

#[pyclass(name = "TransitionMatrix", frozen)]
struct PyTransitionMatrix(ridechain::TransitionMatrix);

#[pymethods]
impl PyTransitionMatrix {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        if i >= self.0.len() || j >= self.0.len() {
            return Err(PyValueError::new_err(format!("entry ({i}, {j}) out of range")));
        }
        Ok(self.0.get(i, j))
    }

    /// `(column, probability)` pairs of row `i`.
    fn row(&self, i: usize) -> PyResult<Vec<(usize, f64)>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i).map(|(j, x)| (j, *x)).collect())
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.0.to_dense()
    }

    fn max_row_sum_error(&self) -> f64 {
        self.0.max_row_sum_error()
    }

    fn is_irreducible(&self) -> bool {
        exact::check_irreducible(&self.0)
    }

    fn is_aperiodic(&self) -> bool {
        exact::check_aperiodic(&self.0)
    }
}

#[pyfunction]
fn transition_matrix(
    space: &PyStateSpace,
    model: &PyRequestModel,
    policy: PyPolicy,
) -> PyResult<PyTransitionMatrix> {
    exact::build_transition(&space.0, &model.0, &policy.0)
        .map(PyTransitionMatrix)
        .map_err(err)
}

/// Stationary distribution with `gamma` and `eta` flattened as `u * n + v`.
#[pyfunction]
fn stationary<'py>(py: Python<'py>, matrix: &PyTransitionMatrix) -> PyResult<Bound<'py, PyDict>> {
    let r = exact::stationary_distribution(&matrix.0).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pi", &r.pi)?;
    d.set_item("gamma", &r.gamma)?;
    d.set_item("eta", &r.eta)?;
    d.set_item("residual", r.residual)?;
    Ok(d)
}

/// Long-run average profit per round of `policy` on the given instance.
#[pyfunction]
fn limiting_objective(space: &PyStateSpace, model: &PyRequestModel, policy: PyPolicy) -> PyResult<f64> {
    let p = exact::build_transition(&space.0, &model.0, &policy.0).map_err(err)?;
    let st = exact::stationary_distribution(&p).map_err(err)?;
    exact::limiting_objective(&space.0, &st, &model.0, &policy.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (matrix, pi, eps, t_max = 1000))]
fn mixing<'py>(
    py: Python<'py>,
    matrix: &PyTransitionMatrix,
    pi: Vec<f64>,
    eps: Vec<f64>,
    t_max: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = exact::mixing_analysis(&matrix.0, &pi, &eps, t_max).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("d", &r.d_curve)?;
    d.set_item("tau", &r.tau)?;
    Ok(d)
}

#[pyfunction]
fn tv_distance(mu: Vec<f64>, nu: Vec<f64>) -> PyResult<f64> {
    exact::tv_distance(&mu, &nu).map_err(err)
}

/// Checks the coupling contraction on every neighbor pair of the uniform
/// instance.
#[pyfunction]
#[pyo3(signature = (grid, drivers, capacity, eps = 0.01))]
fn verify_contraction<'py>(
    py: Python<'py>,
    grid: PyGrid,
    drivers: u32,
    capacity: u32,
    eps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    use ridechain::exact::Scalar;
    let r = coupling::verify_contraction(grid.0, drivers, capacity, eps).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pairs", r.pairs.len())?;
    d.set_item("worst_beta", r.worst_beta.to_f64())?;
    d.set_item("bound", r.bound.to_f64())?;
    d.set_item("holds", r.worst_beta <= r.bound)?;
    d.set_item("tau_bound", r.tau_bound)?;
    Ok(d)
}

/// Gap between the two coordinates of the four-state lower-bound chain.
#[pyfunction]
fn lower_bound_gap(n: usize, m: usize, t_max: usize) -> PyResult<Vec<f64>> {
    LowerBoundChain::new(n, m).map(|c| c.iterate_gap(t_max)).map_err(err)
}

/// Monte Carlo estimate of per-round profit and the error curves.
#[pyfunction]
#[pyo3(signature = (
    model, policy, drivers, capacity, rounds, runs = 1000, seed = 0,
    initial = None, estimator = "conditional", target = None, fit_floor = 0.0
))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    model: &PyRequestModel,
    policy: PyPolicy,
    drivers: u32,
    capacity: u32,
    rounds: usize,
    runs: usize,
    seed: u64,
    initial: Option<PyDriverState>,
    estimator: &str,
    target: Option<f64>,
    fit_floor: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = SimConfig {
        grid: model.0.grid(),
        m: drivers,
        c: capacity,
        rounds,
        runs,
        seed,
        policy: policy.0,
        arrivals: Arrivals::Iid(model.0.clone()),
        initial: initial.map_or(InitialState::Adversarial, |s| InitialState::Explicit(s.0)),
        estimator: estimator.parse::<Estimator>().map_err(err)?,
    };
    let mut series = py.detach(|| run_ensemble(&config)).map_err(err)?;
    if let Some(v) = target {
        series.retarget(Target::Value(v)).map_err(err)?;
    }
    series.fit(fit_floor);
    let d = PyDict::new(py);
    d.set_item("mean", &series.mean)?;
    d.set_item("stderr", &series.stderr)?;
    d.set_item("running", &series.running)?;
    d.set_item("objective", series.objective())?;
    d.set_item("objective_se", series.objective_se)?;
    d.set_item("target", series.target)?;
    d.set_item("delta", &series.delta)?;
    d.set_item("delta_hat", &series.delta_hat)?;
    d.set_item("exp_fit", series.exp_fit.map(|f| (f.a, f.b, f.r2)))?;
    d.set_item("inverse_fit", series.inverse_fit.map(|f| (f.a, f.r2)))?;
    Ok(d)
}

/// Optimal dispatch by value iteration, with the discounted returns of the
/// optimal table and of `baselines` from the given start state.
#[pyfunction]
#[pyo3(signature = (
    model, drivers, capacity, discount = 0.9, tol = 1e-8, start = None,
    baselines = Vec::new(), episodes = 1000, horizon = 200, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn value_iteration<'py>(
    py: Python<'py>,
    model: &PyRequestModel,
    drivers: u32,
    capacity: u32,
    discount: f64,
    tol: f64,
    start: Option<PyDriverState>,
    baselines: Vec<PyPolicy>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let instance = MdpInstance::new(model.0.clone(), drivers, capacity, discount).map_err(err)?;
    let vi = py.detach(|| mdp::value_iteration(&instance, tol)).map_err(err)?;
    let start = match start {
        Some(s) => s.0,
        None => InitialState::Adversarial
            .resolve(model.0.grid(), drivers, capacity)
            .map_err(err)?,
    };
    let mut returns = vec![(
        "optimal".to_string(),
        mdp::discounted_return(&instance, &Chooser::Table(&vi.policy), &start, episodes, horizon, seed).map_err(err)?,
    )];
    for b in baselines {
        let r = mdp::discounted_return(&instance, &Chooser::Policy(b.0), &start, episodes, horizon, seed).map_err(err)?;
        returns.push((b.0.to_string(), r));
    }
    let d = PyDict::new(py);
    d.set_item("values", &vi.values)?;
    d.set_item("policy", vi.policy.iter().map(|a| a.name()).collect::<Vec<_>>())?;
    d.set_item("sweeps", vi.sweeps)?;
    d.set_item("residual", vi.residual)?;
    d.set_item("returns", returns)?;
    Ok(d)
}

/// `(a, b, r2)` of `y ≈ a·e^{−b t}` over points with `y > floor`.
#[pyfunction]
#[pyo3(signature = (ts, ys, floor = 0.0))]
fn fit_exponential(ts: Vec<f64>, ys: Vec<f64>, floor: f64) -> PyResult<(f64, f64, f64)> {
    let f = fit::fit_exponential_above(&ts, &ys, floor).map_err(err)?;
    Ok((f.a, f.b, f.r2))
}

/// `(a, r2)` of `y ≈ a / t`.
#[pyfunction]
fn fit_inverse(ts: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64)> {
    let f = fit::fit_inverse(&ts, &ys).map_err(err)?;
    Ok((f.a, f.r2))
}

#[pymodule(name = "ridechain")]
fn ridechain_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyDriverState>()?;
    m.add_class::<PyStateSpace>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyRequestModel>()?;
    m.add_class::<PyTransitionMatrix>()?;
    m.add_function(wrap_pyfunction!(transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(stationary, m)?)?;
    m.add_function(wrap_pyfunction!(limiting_objective, m)?)?;
    m.add_function(wrap_pyfunction!(mixing, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(verify_contraction, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_gap, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(fit_inverse, m)?)?;
    Ok(())
}
