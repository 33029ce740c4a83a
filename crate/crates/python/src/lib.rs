//! Python bindings: topology construction, synthetic problems, engine runs,
//! baselines and the rate certificate.

use nalgebra::DVector;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vrdqn::analysis::{check_theorem1, evaluate_certificate, MetricContext, MetricsRecord, TheoryParams};
use vrdqn::baselines::{self, BaselineConfig};
use vrdqn::config::parse_config;
use vrdqn::engine::{self, EngineConfig, InitMode};
use vrdqn::experiment;
use vrdqn::hessian::HessianStrategy;
use vrdqn::problems::{Family, FiniteSumProblem, ProblemSpec, ReferenceOptimum};
use vrdqn::topology::{make_graph, metropolis_weights, validate_assumption3, GraphKind, MixingMatrix};
use vrdqn::Error;

create_exception!(vrdqn, GateFailed, PyException, "Parameters violate the convergence conditions.");
create_exception!(vrdqn, Diverged, PyException, "Iterates diverged.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::GateFailed(_) | Error::TheoryDiscrepancy { .. } => GateFailed::new_err(e.to_string()),
        Error::Diverged { .. } => Diverged::new_err(e.to_string()),
        Error::Io(_) | Error::NoConvergence(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn family(name: &str) -> PyResult<Family> {
    match name {
        "quadratic" => Ok(Family::Quadratic),
        "ridge_least_squares" => Ok(Family::RidgeLeastSquares),
        "l2_logistic" => Ok(Family::L2Logistic),
        _ => Err(PyValueError::new_err(format!("unknown family {name:?}"))),
    }
}

fn vector(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

/// Doubly stochastic weights on an undirected graph.
#[pyclass(name = "MixingMatrix", module = "vrdqn", frozen)]
struct PyMixing {
    inner: MixingMatrix,
}

#[pymethods]
impl PyMixing {
    /// Metropolis weights on a generated graph. `kind` is one of ring,
    /// complete, star, erdos_renyi (needs `p`) or grid (needs `rows`).
    #[new]
    #[pyo3(signature = (kind, n, p=None, seed=0, rows=None, lazy=false))]
    fn new(kind: &str, n: usize, p: Option<f64>, seed: u64, rows: Option<usize>, lazy: bool) -> PyResult<Self> {
        let kind = match kind {
            "ring" => GraphKind::Ring,
            "complete" => GraphKind::Complete,
            "star" => GraphKind::Star,
            "erdos_renyi" => GraphKind::ErdosRenyi {
                p: p.ok_or_else(|| PyValueError::new_err("erdos_renyi needs p"))?,
                seed,
            },
            "grid" => {
                let rows = rows.ok_or_else(|| PyValueError::new_err("grid needs rows"))?;
                GraphKind::Grid { rows, cols: n / rows.max(1) }
            }
            other => return Err(PyValueError::new_err(format!("unknown topology {other:?}"))),
        };
        let w = metropolis_weights(&make_graph(&kind, n).map_err(to_py)?).map_err(to_py)?;
        let inner = if lazy { w.lazy().map_err(to_py)? } else { w };
        Ok(PyMixing { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// `‖W − 11ᵀ/n‖₂`
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        let w = self.inner.weights();
        (0..w.nrows()).map(|i| w.row(i).iter().copied().collect()).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph().edges().collect()
    }

    /// Clause name to `(passed, detail)`.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = validate_assumption3(self.inner.weights(), Some(self.inner.graph()));
        let out = PyDict::new(py);
        for c in &report.clauses {
            out.set_item(c.name, (c.passed, c.detail.clone()))?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("MixingMatrix(n={}, sigma={})", self.inner.n(), self.inner.sigma())
    }
}

/// A synthetic finite-sum problem together with its reference optimum.
#[pyclass(name = "Problem", module = "vrdqn", frozen)]
struct PyProblem {
    inner: FiniteSumProblem,
    reference: ReferenceOptimum,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (family, n, d, samples, seed=0, regularizer=None, curvature_spread=None, heterogeneity=None, target_scale=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        family: &str,
        n: usize,
        d: usize,
        samples: usize,
        seed: u64,
        regularizer: Option<f64>,
        curvature_spread: Option<f64>,
        heterogeneity: Option<f64>,
        target_scale: Option<f64>,
    ) -> PyResult<Self> {
        let mut spec = ProblemSpec::new(self::family(family)?, n, d, samples);
        spec.seed = seed;
        if let Some(v) = regularizer {
            spec.regularizer = v;
        }
        if let Some(v) = curvature_spread {
            spec.curvature_spread = v;
        }
        if let Some(v) = heterogeneity {
            spec.heterogeneity = v;
        }
        if let Some(v) = target_scale {
            spec.target_scale = v;
        }
        let inner = spec.generate().map_err(to_py)?;
        let reference = inner.solve_reference().map_err(to_py)?;
        Ok(PyProblem { inner, reference })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    /// `(L, mu)`
    #[getter]
    fn constants(&self) -> (f64, f64) {
        self.inner.smoothness_constants()
    }

    #[getter]
    fn x_star(&self) -> Vec<f64> {
        self.reference.x_star.as_slice().to_vec()
    }

    #[getter]
    fn f_star(&self) -> f64 {
        self.reference.f_star
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.global_objective(&vector(x)).map_err(to_py)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.global_gradient(&vector(x)).map_err(to_py)?.as_slice().to_vec())
    }

    fn local_gradient(&self, node: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.local_full_gradient(node, &vector(x)).map_err(to_py)?.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Problem(family={:?}, n={}, d={})", self.inner.family(), self.inner.n(), self.inner.d())
    }
}

fn records<'py>(py: Python<'py>, rows: &[MetricsRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("k", r.k)?;
            d.set_item("consensus_err", r.consensus_err)?;
            d.set_item("opt_gap_raw", r.opt_gap_raw)?;
            d.set_item("opt_gap_scaled", r.opt_gap_scaled)?;
            d.set_item("tracking_err", r.tracking_err)?;
            d.set_item("u_inf_q", r.u_inf_q)?;
            d.set_item("grad_evals_cumulative", r.grad_evals_cumulative)?;
            Ok(d)
        })
        .collect()
}

fn hessian(name: &str, m1: f64, m2: f64, scale: Option<f64>) -> PyResult<HessianStrategy> {
    match name {
        "identity" => Ok(HessianStrategy::Identity),
        "scaled_identity" => Ok(HessianStrategy::ScaledIdentity { scale: scale.unwrap_or(1.0) }),
        "clipped_secant" => Ok(HessianStrategy::ClippedSecant { m1, m2 }),
        other => Err(PyValueError::new_err(format!("unknown hessian strategy {other:?}"))),
    }
}

fn init(name: &str, scale: f64) -> PyResult<InitMode> {
    match name {
        "zeros" => Ok(InitMode::Zeros),
        "random" => Ok(InitMode::Random { scale }),
        "random_per_node" => Ok(InitMode::RandomPerNode { scale }),
        other => Err(PyValueError::new_err(format!("unknown init mode {other:?}"))),
    }
}

/// Runs the engine and returns a dict with `metrics` (one dict per
/// iteration), `x` (final node iterates), `gate_passed` and
/// `max_tracking_defect`.
#[pyfunction]
#[pyo3(signature = (problem, mixing, alpha, period, batch, iterations, hessian="identity", m1=0.1, m2=10.0, scale=None, init="zeros", init_scale=1.0, seed=0, stop_tolerance=None, strict_gate=false, threads=1))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    mixing: &PyMixing,
    alpha: f64,
    period: usize,
    batch: usize,
    iterations: usize,
    hessian: &str,
    m1: f64,
    m2: f64,
    scale: Option<f64>,
    init: &str,
    init_scale: f64,
    seed: u64,
    stop_tolerance: Option<f64>,
    strict_gate: bool,
    threads: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = EngineConfig::new(alpha, period, vec![batch; problem.inner.n()], iterations);
    cfg.hessian = self::hessian(hessian, m1, m2, scale)?;
    cfg.init = self::init(init, init_scale)?;
    cfg.seed = seed;
    cfg.stop_tolerance = stop_tolerance;
    cfg.strict_gate = strict_gate;
    cfg.threads = threads;
    let out = py
        .detach(|| engine::run(&problem.inner, &mixing.inner, &cfg, &problem.reference))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("metrics", records(py, &out.metrics)?)?;
    let xs: Vec<Vec<f64>> = out.final_state.nodes.iter().map(|s| s.x.as_slice().to_vec()).collect();
    d.set_item("x", xs)?;
    d.set_item("gate_passed", out.gate.passed)?;
    d.set_item("max_tracking_defect", out.max_tracking_defect)?;
    Ok(d)
}

/// Baseline metric stream: `method` is "dgd" or "gradient_tracking".
#[pyfunction]
#[pyo3(signature = (method, problem, mixing, alpha, iterations, init="zeros", init_scale=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_baseline<'py>(
    py: Python<'py>,
    method: &str,
    problem: &PyProblem,
    mixing: &PyMixing,
    alpha: f64,
    iterations: usize,
    init: &str,
    init_scale: f64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = BaselineConfig { init: self::init(init, init_scale)?, seed, ..BaselineConfig::new(alpha, iterations) };
    let ctx = MetricContext { reference: problem.reference.clone(), sigma: mixing.inner.sigma(), q: nalgebra::Vector3::new(1.0, 1.0, 1.0) };
    let out = match method {
        "dgd" => baselines::run_dgd(&problem.inner, &mixing.inner, &cfg, &ctx),
        "gradient_tracking" => baselines::run_gradient_tracking(&problem.inner, &mixing.inner, &cfg, &ctx),
        other => return Err(PyValueError::new_err(format!("unknown baseline {other:?}"))),
    }
    .map_err(to_py)?;
    records(py, &out.metrics)
}

/// Largest step size allowed by the convergence conditions.
#[pyfunction]
#[pyo3(signature = (l, mu, sigma, m1=1.0, m2=1.0))]
fn max_step_size(l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> PyResult<f64> {
    vrdqn::analysis::max_step_size(l, mu, sigma, m1, m2).map_err(to_py)
}

/// Smallest snapshot period allowed for the given step size.
#[pyfunction]
#[pyo3(signature = (alpha, l, mu, sigma, m1=1.0, m2=1.0))]
fn min_period(alpha: f64, l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> PyResult<u64> {
    Ok(TheoryParams::new(alpha, 1.0, 0.0, l, mu, sigma, m1, m2).map_err(to_py)?.min_period_ceil())
}

/// Gate and certificate checks for a parameter set. Returns a dict with
/// `gate_passed`, `passed`, `checks` (name to `(passed, margin)`) and the
/// certificate quantities.
#[pyfunction]
#[pyo3(signature = (alpha, period, b_rate, l, mu, sigma, m1=1.0, m2=1.0))]
#[allow(clippy::too_many_arguments)]
fn certify<'py>(py: Python<'py>, alpha: f64, period: f64, b_rate: f64, l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> PyResult<Bound<'py, PyDict>> {
    let p = TheoryParams::new(alpha, period, b_rate, l, mu, sigma, m1, m2).map_err(to_py)?;
    let cert = evaluate_certificate(&p);
    let d = PyDict::new(py);
    d.set_item("gate_passed", check_theorem1(&p).passed)?;
    d.set_item("passed", cert.passed)?;
    let checks = PyDict::new(py);
    for c in &cert.checks {
        checks.set_item(c.name, (c.passed, c.margin))?;
    }
    d.set_item("checks", checks)?;
    d.set_item("j_weighted_norm", cert.j_weighted_norm)?;
    d.set_item("det_i_minus_j", cert.det_i_minus_j)?;
    d.set_item("det_bound", cert.det_bound)?;
    d.set_item("resolvent_weighted_norm", cert.resolvent_weighted_norm)?;
    d.set_item("epoch_factor", cert.epoch_factor)?;
    d.set_item("zeta", cert.derived.zeta)?;
    d.set_item("alpha_tilde", cert.derived.alpha_tilde)?;
    Ok(d)
}

/// Runs a TOML experiment config and writes its artifacts to `output_dir`.
/// Returns the path of the written metrics file.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str, output_dir: std::path::PathBuf) -> PyResult<String> {
    let cfg = parse_config(text).map_err(to_py)?;
    let report = py.detach(|| experiment::run_experiment(&cfg, &output_dir)).map_err(to_py)?;
    Ok(report.output_dir.join(experiment::METRICS_FILE).display().to_string())
}

#[pymodule]
#[pyo3(name = "vrdqn")]
fn vrdqn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixing>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(max_step_size, m)?)?;
    m.add_function(wrap_pyfunction!(min_period, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("GateFailed", m.py().get_type::<GateFailed>())?;
    m.add("Diverged", m.py().get_type::<Diverged>())?;
    Ok(())
}
