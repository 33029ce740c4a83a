//! Reference algorithms, coded without the engine's update routines so they
//! can serve as independent oracles: DGD, deterministic gradient tracking
//! and centralized gradient descent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{MetricContext, MetricsRecord};
use crate::engine::{InitMode, DIVERGENCE_NORM};
use crate::error::{Error, Result};
use crate::problems::FiniteSumProblem;
use crate::topology::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Dgd,
    GradientTracking,
    CentralizedGd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub init: InitMode,
    pub seed: u64,
    /// Stop once both the gap and the consensus error reach this value.
    pub stop_tolerance: Option<f64>,
    pub record_states: bool,
}

impl BaselineConfig {
    pub fn new(alpha: f64, iterations: usize) -> Self {
        BaselineConfig { alpha, iterations, init: InitMode::Zeros, seed: 0, stop_tolerance: None, record_states: false }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub metrics: Vec<MetricsRecord>,
    /// Node iterates per recorded iteration when `record_states` is set.
    pub states: Vec<Vec<DVector<f64>>>,
    pub final_x: Vec<DVector<f64>>,
}

fn check_shapes(problem: &FiniteSumProblem, w: &MixingMatrix) -> Result<()> {
    if w.n() != problem.n() {
        return Err(Error::DimensionMismatch(format!("mixing matrix is {0}x{0} for {1} nodes", w.n(), problem.n())));
    }
    Ok(())
}

fn guard(k: usize, xs: &[DVector<f64>]) -> Result<()> {
    for x in xs {
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Diverged { k, norm });
        }
    }
    Ok(())
}

fn mix(w: &MixingMatrix, vs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = vs.len();
    let d = vs[0].len();
    let wm = w.weights();
    let mut out = vec![DVector::zeros(d); n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            let wij = wm[(i, j)];
            for c in 0..d {
                row[c] += wij * v[c];
            }
        }
    }
    out
}

fn local_gradients(problem: &FiniteSumProblem, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    xs.iter().enumerate().map(|(i, x)| problem.local_full_gradient_unchecked(i, x)).collect()
}

fn reached(rec: &MetricsRecord, tol: Option<f64>) -> bool {
    tol.is_some_and(|t| rec.opt_gap_raw <= t && rec.consensus_err <= t)
}

/// `x^{k+1} = W x^k − α ∇f(x^k)`. The recorded "tracker" is the stack of local
/// gradients, which DGD uses in place of a tracked average.
pub fn run_dgd(
    problem: &FiniteSumProblem,
    w: &MixingMatrix,
    cfg: &BaselineConfig,
    ctx: &MetricContext,
) -> Result<BaselineRun> {
    check_shapes(problem, w)?;
    cfg.validate()?;
    let full: u64 = problem.sample_counts().iter().map(|&m| m as u64).sum();
    let mut xs = cfg.init.resolve(problem.n(), problem.d(), cfg.seed);
    let mut grads = local_gradients(problem, &xs);
    let mut evals = full;
    let mut run = BaselineRun { metrics: Vec::new(), states: Vec::new(), final_x: Vec::new() };
    for k in 0..=cfg.iterations {
        let rec = ctx.record(problem, k, &xs, &grads, evals)?;
        run.metrics.push(rec);
        if cfg.record_states {
            run.states.push(xs.clone());
        }
        if k == cfg.iterations || reached(&rec, cfg.stop_tolerance) {
            break;
        }
        let mut next = mix(w, &xs);
        for (x, g) in next.iter_mut().zip(&grads) {
            x.axpy(-cfg.alpha, g, 1.0);
        }
        xs = next;
        guard(k + 1, &xs)?;
        grads = local_gradients(problem, &xs);
        evals += full;
    }
    run.final_x = xs;
    Ok(run)
}

/// Deterministic gradient tracking:
/// `x^{k+1} = W x^k − α g^k`, `g^{k+1} = W g^k + ∇f(x^{k+1}) − ∇f(x^k)`,
/// started from `g⁰ = ∇f(x⁰)`.
pub fn run_gradient_tracking(
    problem: &FiniteSumProblem,
    w: &MixingMatrix,
    cfg: &BaselineConfig,
    ctx: &MetricContext,
) -> Result<BaselineRun> {
    check_shapes(problem, w)?;
    cfg.validate()?;
    let full: u64 = problem.sample_counts().iter().map(|&m| m as u64).sum();
    let d = problem.d();
    let mut xs = cfg.init.resolve(problem.n(), d, cfg.seed);
    let mut grads = local_gradients(problem, &xs);
    let mut ys = grads.clone();
    let mut evals = full;
    let mut run = BaselineRun { metrics: Vec::new(), states: Vec::new(), final_x: Vec::new() };
    for k in 0..=cfg.iterations {
        let rec = ctx.record(problem, k, &xs, &ys, evals)?;
        run.metrics.push(rec);
        if cfg.record_states {
            run.states.push(xs.clone());
        }
        if k == cfg.iterations || reached(&rec, cfg.stop_tolerance) {
            break;
        }
        let mut next_x = mix(w, &xs);
        for (x, y) in next_x.iter_mut().zip(&ys) {
            for c in 0..d {
                x[c] -= cfg.alpha * y[c];
            }
        }
        guard(k + 1, &next_x)?;
        let next_grads = local_gradients(problem, &next_x);
        let mut next_y = mix(w, &ys);
        for ((y, gn), go) in next_y.iter_mut().zip(&next_grads).zip(&grads) {
            for c in 0..d {
                y[c] = (y[c] + gn[c]) - go[c];
            }
        }
        xs = next_x;
        ys = next_y;
        grads = next_grads;
        evals += full;
    }
    run.final_x = xs;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedConfig {
    pub alpha: f64,
    pub iterations: usize,
    /// Stop once `‖∇F(x)‖` is at or below this value.
    pub grad_tol: Option<f64>,
    pub record_history: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentralizedStep {
    pub k: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CentralizedRun {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<CentralizedStep>,
}

/// `x^{k+1} = x^k − α ∇F(x^k)`.
pub fn run_centralized_gd(problem: &FiniteSumProblem, cfg: &CentralizedConfig, x0: &DVector<f64>) -> Result<CentralizedRun> {
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {}", cfg.alpha)));
    }
    let mut x = x0.clone();
    let mut history = Vec::new();
    for k in 0..=cfg.iterations {
        let g = problem.global_gradient(&x)?;
        let grad_norm = g.norm();
        if cfg.record_history {
            history.push(CentralizedStep { k, objective: problem.global_objective(&x)?, grad_norm });
        }
        if cfg.grad_tol.is_some_and(|t| grad_norm <= t) {
            return Ok(CentralizedRun { x, iterations: k, converged: true, history });
        }
        if k == cfg.iterations {
            break;
        }
        x.axpy(-cfg.alpha, &g, 1.0);
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Diverged { k: k + 1, norm });
        }
    }
    Ok(CentralizedRun { x, iterations: cfg.iterations, converged: false, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::TheoryParams;
    use crate::problems::{Family, ProblemSpec};
    use crate::topology::{make_graph, metropolis_weights, GraphKind};
    use nalgebra::Vector3;

    fn setup(n: usize, seed: u64) -> (FiniteSumProblem, MixingMatrix, MetricContext) {
        let mut spec = ProblemSpec::new(Family::Quadratic, n, 3, 4);
        spec.seed = seed;
        let p = spec.generate().unwrap();
        let w = metropolis_weights(&make_graph(&GraphKind::Ring, n).unwrap()).unwrap();
        let ctx = MetricContext { reference: p.solve_reference().unwrap(), sigma: w.sigma(), q: Vector3::new(1.0, 10.0, 1.0) };
        (p, w, ctx)
    }

    #[test]
    fn centralized_matches_linear_solve() {
        let (p, _, ctx) = setup(4, 3);
        let (l, _) = p.smoothness_constants();
        let cfg = CentralizedConfig { alpha: 1.0 / l, iterations: 100_000, grad_tol: Some(1e-13), record_history: true };
        let run = run_centralized_gd(&p, &cfg, &DVector::zeros(3)).unwrap();
        assert!(run.converged);
        assert!((&run.x - &ctx.reference.x_star).norm() < 1e-10);
        for pair in run.history.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-15);
        }
    }

    #[test]
    fn centralized_diverges_past_two_over_l() {
        let (p, _, _) = setup(4, 3);
        // largest eigenvalue of the assembled Hessian
        let (a, _) = p.quadratic_system().unwrap();
        let lmax = a.symmetric_eigenvalues().max();
        let cfg = CentralizedConfig { alpha: 2.2 / lmax, iterations: 100_000, grad_tol: None, record_history: false };
        let x0 = DVector::from_element(3, 1.0);
        assert!(matches!(run_centralized_gd(&p, &cfg, &x0), Err(Error::Diverged { .. })));
    }

    #[test]
    fn dgd_zero_step_is_stationary() {
        let (p, w, ctx) = setup(4, 5);
        let mut cfg = BaselineConfig::new(0.0, 20);
        cfg.init = InitMode::Random { scale: 1.0 };
        let run = run_dgd(&p, &w, &cfg, &ctx).unwrap();
        assert!(run.metrics.iter().all(|r| r.opt_gap_raw == run.metrics[0].opt_gap_raw));
    }

    #[test]
    fn gradient_tracking_converges_on_ring() {
        let (p, w, ctx) = setup(5, 8);
        let (l, mu) = p.smoothness_constants();
        let alpha = TheoryParams::new(1.0, 1.0, 0.0, l, mu, w.sigma(), 1.0, 1.0).unwrap().max_step_size() * 100.0;
        let mut cfg = BaselineConfig::new(alpha, 20_000);
        cfg.stop_tolerance = Some(1e-12);
        let run = run_gradient_tracking(&p, &w, &cfg, &ctx).unwrap();
        let last = run.metrics.last().unwrap();
        assert!(last.opt_gap_raw <= 1e-12 && last.consensus_err <= 1e-12, "{last:?}");
    }

    #[test]
    fn single_node_gradient_tracking_is_gd() {
        let p = ProblemSpec::new(Family::Quadratic, 1, 2, 3).generate().unwrap();
        let g = crate::topology::Graph::from_edges(1, []).unwrap();
        let w = MixingMatrix::new(nalgebra::DMatrix::from_element(1, 1, 1.0), g).unwrap();
        let ctx = MetricContext { reference: p.solve_reference().unwrap(), sigma: 0.0, q: Vector3::new(1.0, 1.0, 1.0) };
        let mut cfg = BaselineConfig::new(0.1, 30);
        cfg.init = InitMode::Random { scale: 1.0 };
        cfg.record_states = true;
        let run = run_gradient_tracking(&p, &w, &cfg, &ctx).unwrap();
        let mut x = run.states[0][0].clone();
        for s in &run.states[1..] {
            x = &x - p.global_gradient(&x).unwrap() * 0.1;
            assert!((&s[0] - &x).norm() < 1e-13);
        }
    }
}
