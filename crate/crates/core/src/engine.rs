//! Barrier-synchronous simulation of the decentralized quasi-Newton
//! recursion
//!
//! ```text
//! x^{k+1} = W x^k − α d^k
//! g^{k+1} = W g^k + v^{k+1} − v^k
//! d^{k+1} = H^{k+1} g^{k+1}
//! ```
//!
//! with `v` the SVRG-corrected local gradient. The mixing products are the
//! only synchronization points; everything else is per node and may run on
//! a thread pool without changing results.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::analysis::{check_theorem1, mean_vector, GateReport, MetricContext, MetricsRecord, TheoryParams};
use crate::error::{Error, Result};
use crate::hessian::{eigen_range, HessianApprox, HessianStrategy, BOUND_TOL};
use crate::problems::{FiniteSumProblem, ReferenceOptimum};
use crate::sampling::{advance_snapshot, draw_batch, node_rng, non_sampling_rate, svrg_gradient_unchecked, SvrgState};
use crate::topology::MixingMatrix;

/// Iterates with a node norm above this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    Zeros,
    /// One Gaussian point shared by every node.
    Random { scale: f64 },
    /// An independent Gaussian point per node.
    RandomPerNode { scale: f64 },
}

impl InitMode {
    /// Initial iterates for `n` nodes in dimension `d`.
    pub fn resolve(&self, n: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = node_rng(seed, usize::MAX);
        let mut gauss = |scale: f64| DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        match *self {
            InitMode::Zeros => vec![DVector::zeros(d); n],
            InitMode::Random { scale } => vec![gauss(scale); n],
            InitMode::RandomPerNode { scale } => (0..n).map(|_| gauss(scale)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub alpha: f64,
    pub period: usize,
    pub batch_sizes: Vec<usize>,
    pub hessian: HessianStrategy,
    pub init: InitMode,
    pub seed: u64,
    pub iterations: usize,
    /// Stop once both the optimality gap and the consensus error are at or
    /// below this value.
    pub stop_tolerance: Option<f64>,
    pub threads: usize,
    pub strict_gate: bool,
    pub record_states: bool,
    pub log_hessian_spectrum: bool,
    pub check_hessian: bool,
}

impl EngineConfig {
    pub fn new(alpha: f64, period: usize, batch_sizes: Vec<usize>, iterations: usize) -> Self {
        EngineConfig {
            alpha,
            period,
            batch_sizes,
            hessian: HessianStrategy::Identity,
            init: InitMode::Zeros,
            seed: 0,
            iterations,
            stop_tolerance: None,
            threads: 1,
            strict_gate: false,
            record_states: false,
            log_hessian_spectrum: false,
            check_hessian: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub x: DVector<f64>,
    pub g: DVector<f64>,
    pub v: DVector<f64>,
    pub dirn: DVector<f64>,
    pub svrg: SvrgState,
    pub hessian: Box<dyn HessianApprox>,
    rng: ChaCha8Rng,
}

impl NodeState {
    pub fn rng_position(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSnapshot {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    pub dirn: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianSpectrum {
    pub node: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub k: usize,
    pub rng_positions: Vec<u128>,
    pub states: Option<Vec<NodeSnapshot>>,
    pub hessian: Option<Vec<HessianSpectrum>>,
}

/// Append-only log of a run, reproducible from `(config, seed)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTranscript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<NodeState>,
    pub k: usize,
    pub grad_evals: u64,
    pool: Option<Arc<ThreadPool>>,
}

impl Network {
    pub fn xs(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.x.clone()).collect()
    }

    pub fn gs(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.g.clone()).collect()
    }

    pub fn vs(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.v.clone()).collect()
    }

    pub fn dirns(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|s| s.dirn.clone()).collect()
    }

    /// `‖ḡ − v̄‖ / (1 + ‖v̄‖)`
    pub fn tracking_defect(&self) -> f64 {
        let vbar = mean_vector(&self.vs());
        (mean_vector(&self.gs()) - &vbar).norm() / (1.0 + vbar.norm())
    }

    fn entry(&self, record_states: bool, log_hessian: bool) -> Result<TranscriptEntry> {
        let states = record_states.then(|| {
            self.nodes
                .iter()
                .map(|s| NodeSnapshot {
                    x: s.x.as_slice().to_vec(),
                    g: s.g.as_slice().to_vec(),
                    v: s.v.as_slice().to_vec(),
                    dirn: s.dirn.as_slice().to_vec(),
                })
                .collect()
        });
        let hessian = if log_hessian {
            let mut out = Vec::with_capacity(self.nodes.len());
            for (node, s) in self.nodes.iter().enumerate() {
                let (lambda_min, lambda_max) = eigen_range(s.hessian.matrix())?;
                out.push(HessianSpectrum { node, lambda_min, lambda_max });
            }
            Some(out)
        } else {
            None
        };
        Ok(TranscriptEntry { k: self.k, rng_positions: self.nodes.iter().map(NodeState::rng_position).collect(), states, hessian })
    }
}

fn validate(problem: &FiniteSumProblem, w: &MixingMatrix, config: &EngineConfig) -> Result<()> {
    let n = problem.n();
    if w.n() != n {
        return Err(Error::DimensionMismatch(format!("mixing matrix is {0}x{0} for {n} nodes", w.n())));
    }
    if config.batch_sizes.len() != n {
        return Err(Error::DimensionMismatch(format!("{} batch sizes for {n} nodes", config.batch_sizes.len())));
    }
    for (i, &b) in config.batch_sizes.iter().enumerate() {
        if b == 0 || b > problem.m(i) {
            return Err(Error::BatchSize { batch: b, samples: problem.m(i) });
        }
    }
    if !(config.alpha >= 0.0 && config.alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {}", config.alpha)));
    }
    if config.period == 0 {
        return Err(Error::InvalidParameter("snapshot period must be positive".into()));
    }
    if config.threads == 0 {
        return Err(Error::InvalidParameter("thread count must be positive".into()));
    }
    Ok(())
}

/// Sets `x⁰` from the config, `τ⁰ = x⁰`, `g⁰ = v⁰ = ∇f_i(x⁰)` and
/// `d⁰ = H⁰ g⁰` with `H⁰` the identity clipped into the strategy bounds.
pub fn initialize(problem: &FiniteSumProblem, w: &MixingMatrix, config: &EngineConfig) -> Result<Network> {
    validate(problem, w, config)?;
    let n = problem.n();
    let d = problem.d();
    let x0 = config.init.resolve(n, d, config.seed);
    let mut nodes = Vec::with_capacity(n);
    let mut grad_evals = 0u64;
    for (i, x) in x0.into_iter().enumerate() {
        let grad = problem.local_full_gradient(i, &x)?;
        grad_evals += problem.m(i) as u64;
        let mut hessian = config.hessian.build(d)?;
        hessian.reset(&x, &grad);
        let dirn = hessian.apply(&grad);
        nodes.push(NodeState {
            svrg: SvrgState::with_gradient(x.clone(), grad.clone()),
            x,
            g: grad.clone(),
            v: grad,
            dirn,
            hessian,
            rng: node_rng(config.seed, i),
        });
    }
    let pool = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Some(Arc::new(pool))
    } else {
        None
    };
    Ok(Network { nodes, k: 0, grad_evals, pool })
}

/// Row `i` of `W` applied to the stacked vectors, summed in node order.
fn mix_row(w: &MixingMatrix, vs: &[&DVector<f64>], i: usize) -> DVector<f64> {
    let wm = w.weights();
    let d = vs[0].len();
    let mut acc = DVector::zeros(d);
    for (j, v) in vs.iter().enumerate() {
        let wij = wm[(i, j)];
        for c in 0..d {
            acc[c] += wij * v[c];
        }
    }
    acc
}

struct NodeInput {
    mixed_x: DVector<f64>,
    mixed_g: DVector<f64>,
}

fn advance_node(
    i: usize,
    node: &mut NodeState,
    input: NodeInput,
    problem: &FiniteSumProblem,
    config: &EngineConfig,
    k_plus_1: usize,
) -> Result<u64> {
    let d = problem.d();
    let NodeInput { mut mixed_x, mixed_g } = input;
    for c in 0..d {
        mixed_x[c] -= config.alpha * node.dirn[c];
    }
    let x = mixed_x;

    let m = problem.m(i);
    let b = config.batch_sizes[i];
    let batch = draw_batch(&mut node.rng, m, b)?;
    let refreshed = advance_snapshot(k_plus_1, config.period, &x, &mut node.svrg, problem, i)?;
    let v = svrg_gradient_unchecked(problem, i, &x, &node.svrg, &batch);

    let mut g = mixed_g;
    for c in 0..d {
        g[c] = (g[c] + v[c]) - node.v[c];
    }

    let (m1, m2) = node.hessian.bounds();
    let h = node.hessian.update(&x, &g);
    if config.check_hessian && !config.hessian.is_identity() {
        let (lo, hi) = eigen_range(h)?;
        if lo < m1 - BOUND_TOL || hi > m2 + BOUND_TOL {
            return Err(Error::HessianBounds { node: i, k: k_plus_1, m1, m2, lo, hi });
        }
    }
    node.dirn = node.hessian.apply(&g);
    node.x = x;
    node.g = g;
    node.v = v;
    Ok(b as u64 + if refreshed { m as u64 } else { 0 })
}

/// Advances every node from iteration `k` to `k + 1`.
pub fn step(net: &mut Network, problem: &FiniteSumProblem, w: &MixingMatrix, config: &EngineConfig) -> Result<()> {
    let n = net.nodes.len();
    let inputs: Vec<NodeInput> = {
        let xs: Vec<&DVector<f64>> = net.nodes.iter().map(|s| &s.x).collect();
        let gs: Vec<&DVector<f64>> = net.nodes.iter().map(|s| &s.g).collect();
        (0..n).map(|i| NodeInput { mixed_x: mix_row(w, &xs, i), mixed_g: mix_row(w, &gs, i) }).collect()
    };
    let k_plus_1 = net.k + 1;
    let work = |(i, (node, input)): (usize, (&mut NodeState, NodeInput))| advance_node(i, node, input, problem, config, k_plus_1);
    let evals: Vec<Result<u64>> = match &net.pool {
        Some(pool) => pool.install(|| net.nodes.par_iter_mut().zip(inputs.into_par_iter()).enumerate().map(work).collect()),
        None => net.nodes.iter_mut().zip(inputs).enumerate().map(work).collect(),
    };
    for e in evals {
        net.grad_evals += e?;
    }
    net.k = k_plus_1;

    let worst = net.nodes.iter().map(|s| s.x.norm()).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    if worst > DIVERGENCE_NORM {
        return Err(Error::Diverged { k: net.k, norm: worst });
    }
    Ok(())
}

/// Theory parameters implied by a problem, topology and engine config.
pub fn theory_params(problem: &FiniteSumProblem, w: &MixingMatrix, config: &EngineConfig) -> Result<TheoryParams> {
    let (l, mu) = problem.smoothness_constants();
    let (m1, m2) = config.hessian.bounds();
    let b_rate = non_sampling_rate(&problem.sample_counts(), &config.batch_sizes)?;
    TheoryParams::new(config.alpha, config.period as f64, b_rate, l, mu, w.sigma(), m1, m2)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub transcript: IterationTranscript,
    pub params: TheoryParams,
    pub gate: GateReport,
    /// `max_k ‖ḡ^k − v̄^k‖ / (1 + ‖v̄^k‖)`
    pub max_tracking_defect: f64,
    pub final_state: Network,
    pub stopped_early: bool,
}

/// Runs the configured iteration budget, or until the stop tolerance is met,
/// emitting one metric row per iteration starting at `k = 0`.
pub fn run(
    problem: &FiniteSumProblem,
    w: &MixingMatrix,
    config: &EngineConfig,
    reference: &ReferenceOptimum,
) -> Result<RunOutput> {
    validate(problem, w, config)?;
    let params = theory_params(problem, w, config)?;
    let gate = check_theorem1(&params);
    if config.strict_gate && !gate.passed {
        return Err(Error::GateFailed(gate.summary()));
    }
    let ctx = MetricContext { reference: reference.clone(), sigma: w.sigma(), q: params.q() };

    let mut net = initialize(problem, w, config)?;
    let mut metrics = Vec::with_capacity(config.iterations + 1);
    let mut transcript = IterationTranscript::default();
    let mut max_defect = 0.0_f64;
    let mut stopped_early = false;

    loop {
        let rec = ctx.record(problem, net.k, &net.xs(), &net.gs(), net.grad_evals)?;
        metrics.push(rec);
        transcript.entries.push(net.entry(config.record_states, config.log_hessian_spectrum)?);
        max_defect = max_defect.max(net.tracking_defect());
        if let Some(tol) = config.stop_tolerance {
            if rec.opt_gap_raw <= tol && rec.consensus_err <= tol {
                stopped_early = net.k < config.iterations;
                break;
            }
        }
        if net.k >= config.iterations {
            break;
        }
        step(&mut net, problem, w, config)?;
    }

    Ok(RunOutput { metrics, transcript, params, gate, max_tracking_defect: max_defect, final_state: net, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Family, ProblemSpec, SampleCost};
    use crate::topology::{make_graph, metropolis_weights, GraphKind};
    use nalgebra::{dvector, DMatrix};

    fn ring_problem(n: usize, m: usize) -> (FiniteSumProblem, MixingMatrix) {
        let mut spec = ProblemSpec::new(Family::Quadratic, n, 3, m);
        spec.seed = 21;
        let p = spec.generate().unwrap();
        let w = metropolis_weights(&make_graph(&GraphKind::Ring, n).unwrap()).unwrap();
        (p, w)
    }

    fn single_node_matrix() -> MixingMatrix {
        let g = crate::topology::Graph::from_edges(1, []).unwrap();
        MixingMatrix::new(DMatrix::from_element(1, 1, 1.0), g).unwrap()
    }

    #[test]
    fn zero_init_tracks_mean_targets() {
        // f_{i,l}(x) = ½(x − b_l)² has gradient −b_l at zero
        let targets = [[1.0, 2.0, 6.0], [-1.0, 0.5, 3.5]];
        let nodes = targets
            .iter()
            .map(|ts| ts.iter().map(|&b| SampleCost::squared_residual(dvector![1.0], b)).collect())
            .collect();
        let p = FiniteSumProblem::new(Family::Quadratic, 0.0, nodes).unwrap();
        let w = metropolis_weights(&make_graph(&GraphKind::Complete, 2).unwrap()).unwrap();
        let net = initialize(&p, &w, &EngineConfig::new(0.1, 5, vec![1, 1], 0)).unwrap();
        assert_eq!(net.nodes[0].g, dvector![-3.0]);
        assert_eq!(net.nodes[1].g, dvector![-1.0]);
        assert_eq!(mean_vector(&net.gs()), mean_vector(&net.vs()));
        assert_eq!(net.grad_evals, 6);
    }

    #[test]
    fn single_node_is_gradient_descent() {
        let p = ProblemSpec::new(Family::Quadratic, 1, 3, 4).generate().unwrap();
        let w = single_node_matrix();
        let mut cfg = EngineConfig::new(0.05, 3, vec![4], 0);
        cfg.init = InitMode::Random { scale: 1.0 };
        let mut net = initialize(&p, &w, &cfg).unwrap();
        assert_eq!(net.nodes[0].g, p.global_gradient(&net.nodes[0].x).unwrap());
        let mut x = net.nodes[0].x.clone();
        for _ in 0..20 {
            step(&mut net, &p, &w, &cfg).unwrap();
            x = &x - p.global_gradient(&x).unwrap() * 0.05;
            assert!((&net.nodes[0].x - &x).norm() < 1e-12);
        }
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let (p, w) = ring_problem(4, 5);
        let r = p.solve_reference().unwrap();
        let cfg = EngineConfig::new(0.05, 3, vec![5; 4], 0);
        let mut net = initialize(&p, &w, &cfg).unwrap();
        // restart every node at x*
        for (i, node) in net.nodes.iter_mut().enumerate() {
            let g = p.local_full_gradient(i, &r.x_star).unwrap();
            node.x = r.x_star.clone();
            node.svrg = SvrgState::with_gradient(r.x_star.clone(), g.clone());
            node.g = g.clone();
            node.v = g.clone();
            node.dirn = g;
        }
        // the trackers still disagree: g_i = ∇f_i(x*) is not consensual, so
        // seed them with the average instead
        let gbar = mean_vector(&net.gs());
        for node in net.nodes.iter_mut() {
            node.g = gbar.clone();
            node.dirn = gbar.clone();
        }
        for _ in 0..50 {
            step(&mut net, &p, &w, &cfg).unwrap();
        }
        for node in &net.nodes {
            assert!((&node.x - &r.x_star).norm() < 1e-10);
        }
    }

    #[test]
    fn two_node_hand_computed_step() {
        // node 0: ½(x−1)², node 1: ½(2x)² − ... scalar problems
        // f_0(x) = ½(x − 1)²  → ∇ = x − 1
        // f_1(x) = ½(2x − 2)² → ∇ = 4x − 4
        let nodes = vec![
            vec![SampleCost::squared_residual(dvector![1.0], 1.0)],
            vec![SampleCost::squared_residual(dvector![2.0], 2.0)],
        ];
        let p = FiniteSumProblem::new(Family::Quadratic, 0.0, nodes).unwrap();
        let w = metropolis_weights(&make_graph(&GraphKind::Complete, 2).unwrap()).unwrap();
        let mut cfg = EngineConfig::new(0.1, 10, vec![1, 1], 1);
        cfg.init = InitMode::RandomPerNode { scale: 1.0 };
        let mut net = initialize(&p, &w, &cfg).unwrap();
        let (a, b) = (2.0, -1.0);
        net.nodes[0].x = dvector![a];
        net.nodes[1].x = dvector![b];
        let (g0, g1) = (a - 1.0, 4.0 * b - 4.0);
        for (node, g) in net.nodes.iter_mut().zip([g0, g1]) {
            node.svrg = SvrgState::with_gradient(node.x.clone(), dvector![g]);
            node.g = dvector![g];
            node.v = dvector![g];
            node.dirn = dvector![g];
        }
        step(&mut net, &p, &w, &cfg).unwrap();
        // x¹ = 0.5(a + b) − 0.1 g⁰_i
        let xm = 0.5 * (a + b);
        let x1 = [xm - 0.1 * g0, xm - 0.1 * g1];
        // v¹ = ∇f_i(x¹) since b_i = m_i
        let v1 = [x1[0] - 1.0, 4.0 * x1[1] - 4.0];
        let gm = 0.5 * (g0 + g1);
        let expect_g = [gm + v1[0] - g0, gm + v1[1] - g1];
        for i in 0..2 {
            assert!((net.nodes[i].x[0] - x1[i]).abs() < 1e-15);
            assert!((net.nodes[i].v[0] - v1[i]).abs() < 1e-15);
            assert!((net.nodes[i].g[0] - expect_g[i]).abs() < 1e-15);
            assert_eq!(net.nodes[i].dirn, net.nodes[i].g);
        }
    }

    #[test]
    fn identity_direction_equals_tracker() {
        let (p, w) = ring_problem(5, 6);
        let cfg = EngineConfig::new(0.02, 4, vec![2; 5], 0);
        let mut net = initialize(&p, &w, &cfg).unwrap();
        for _ in 0..10 {
            step(&mut net, &p, &w, &cfg).unwrap();
            for node in &net.nodes {
                assert_eq!(node.dirn, node.g);
            }
        }
    }

    #[test]
    fn average_dynamics() {
        let (p, w) = ring_problem(5, 6);
        let mut cfg = EngineConfig::new(0.02, 4, vec![2; 5], 0);
        cfg.hessian = HessianStrategy::ClippedSecant { m1: 0.1, m2: 10.0 };
        cfg.init = InitMode::RandomPerNode { scale: 1.0 };
        let mut net = initialize(&p, &w, &cfg).unwrap();
        for _ in 0..30 {
            let xbar = mean_vector(&net.xs());
            let dbar = mean_vector(&net.dirns());
            step(&mut net, &p, &w, &cfg).unwrap();
            let expect = xbar - dbar * cfg.alpha;
            assert!((mean_vector(&net.xs()) - expect).amax() < 1e-12);
            assert!(net.tracking_defect() < 1e-12);
        }
    }

    #[test]
    fn strict_gate_rejects_large_step() {
        let (p, w) = ring_problem(4, 5);
        let r = p.solve_reference().unwrap();
        let mut cfg = EngineConfig::new(0.5, 10, vec![5; 4], 10);
        cfg.strict_gate = true;
        assert!(matches!(run(&p, &w, &cfg, &r), Err(Error::GateFailed(_))));
        cfg.strict_gate = false;
        let out = run(&p, &w, &cfg, &r).unwrap();
        assert!(!out.gate.passed);
    }

    #[test]
    fn divergence_guard() {
        let (p, w) = ring_problem(4, 5);
        let r = p.solve_reference().unwrap();
        let mut cfg = EngineConfig::new(50.0, 10, vec![5; 4], 1000);
        cfg.init = InitMode::Random { scale: 1.0 };
        assert!(matches!(run(&p, &w, &cfg, &r), Err(Error::Diverged { .. })));
    }

    #[test]
    fn config_validation() {
        let (p, w) = ring_problem(4, 5);
        assert!(matches!(
            initialize(&p, &w, &EngineConfig::new(0.1, 5, vec![6; 4], 1)),
            Err(Error::BatchSize { .. })
        ));
        assert!(initialize(&p, &w, &EngineConfig::new(0.1, 5, vec![1; 3], 1)).is_err());
        assert!(initialize(&p, &w, &EngineConfig::new(0.1, 0, vec![1; 4], 1)).is_err());
    }

    #[test]
    fn evaluation_counter() {
        let (p, w) = ring_problem(4, 20);
        let r = p.solve_reference().unwrap();
        let cfg = EngineConfig::new(0.01, 10, vec![2; 4], 10);
        let out = run(&p, &w, &cfg, &r).unwrap();
        assert_eq!(out.metrics.last().unwrap().grad_evals_cumulative, 240);
        for rec in &out.metrics {
            let k = rec.k as u64;
            assert_eq!(rec.grad_evals_cumulative, 4 * (20 + 2 * k + 20 * (k / 10)));
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let (p, w) = ring_problem(5, 8);
        let r = p.solve_reference().unwrap();
        let mut cfg = EngineConfig::new(0.02, 7, vec![3; 5], 60);
        cfg.hessian = HessianStrategy::ClippedSecant { m1: 0.1, m2: 10.0 };
        cfg.record_states = true;
        cfg.seed = 4;
        let a = run(&p, &w, &cfg, &r).unwrap();
        cfg.threads = 4;
        let b = run(&p, &w, &cfg, &r).unwrap();
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.metrics, b.metrics);
    }
}
