use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vrdqn::analysis::{dispersion, mean_vector};
use vrdqn::engine::{self, initialize, step, EngineConfig, InitMode};
use vrdqn::hessian::{verify_assumption4, HessianStrategy};
use vrdqn::problems::{Family, FiniteSumProblem, ProblemSpec, SampleCost};
use vrdqn::topology::{make_graph, metropolis_weights, GraphKind};

const FAMILIES: [Family; 3] = [Family::Quadratic, Family::RidgeLeastSquares, Family::L2Logistic];

fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for family in FAMILIES {
        let mut spec = ProblemSpec::new(family, 3, 4, 5);
        spec.seed = 12;
        let p = spec.generate().unwrap();
        for _ in 0..30 {
            let i = rng.random_range(0..3);
            let l = rng.random_range(0..5);
            let x = random_point(&mut rng, 4, 2.0);
            let g = p.sample_gradient(i, l, &x).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(4, |c, _| {
                let mut e = DVector::zeros(4);
                e[c] = h;
                (p.sample_cost(i, l, &(&x + &e)).unwrap() - p.sample_cost(i, l, &(&x - &e)).unwrap()) / (2.0 * h)
            });
            let rel = (&fd - &g).norm() / g.norm().max(1e-8);
            assert!(rel <= 1e-5, "{family:?}: relative error {rel:e}");
        }
    }
}

#[test]
fn sample_gradients_are_cocoercive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for family in FAMILIES {
        let p = ProblemSpec::new(family, 2, 3, 6).generate().unwrap();
        let (l, _) = p.smoothness_constants();
        for _ in 0..50 {
            let (i, s) = (rng.random_range(0..2), rng.random_range(0..6));
            let x = random_point(&mut rng, 3, 3.0);
            let y = random_point(&mut rng, 3, 3.0);
            let dg = p.sample_gradient(i, s, &x).unwrap() - p.sample_gradient(i, s, &y).unwrap();
            assert!(dg.dot(&(&x - &y)) >= dg.norm_squared() / l - 1e-12, "{family:?}");
        }
    }
}

#[test]
fn averaged_gradient_deviation_bound() {
    // ‖(1/n) Σ ∇f_i(x_i) − ∇F(x̄)‖ ≤ (L/√n) ‖x − W∞x‖
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for family in FAMILIES {
        let n = 5;
        let p = ProblemSpec::new(family, n, 3, 4).generate().unwrap();
        let (l, _) = p.smoothness_constants();
        for _ in 0..100 {
            let xs: Vec<_> = (0..n).map(|_| random_point(&mut rng, 3, 4.0)).collect();
            let grads: Vec<_> = xs.iter().enumerate().map(|(i, x)| p.local_full_gradient(i, x).unwrap()).collect();
            let lhs = (mean_vector(&grads) - p.global_gradient(&mean_vector(&xs)).unwrap()).norm();
            let rhs = l / (n as f64).sqrt() * dispersion(&xs).sqrt();
            assert!(lhs <= rhs + 1e-10, "{family:?}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn reference_solve_is_idempotent() {
    for family in FAMILIES {
        let p = ProblemSpec::new(family, 4, 5, 10).generate().unwrap();
        let a = p.solve_reference().unwrap();
        let b = p.solve_reference().unwrap();
        assert!((a.x_star - b.x_star).norm() <= 1e-10);
        assert!(a.grad_norm_at_star <= 1e-12);
    }
}

#[test]
fn hessian_update_is_local() {
    // nodes 0 and 3 are not neighbors on a ring of five; after one
    // iteration node 0 has only heard from nodes 1 and 4
    let mut spec = ProblemSpec::new(Family::RidgeLeastSquares, 5, 3, 6);
    spec.seed = 8;
    let base = spec.generate().unwrap();
    let nodes: Vec<Vec<SampleCost>> = (0..5).map(|i| base.samples(i).to_vec()).collect();
    let mut altered = nodes.clone();
    altered[3] = ProblemSpec { seed: 99, ..spec.clone() }.generate().unwrap().samples(3).to_vec();
    let other = FiniteSumProblem::new(Family::RidgeLeastSquares, base.regularizer(), altered).unwrap();

    let w = metropolis_weights(&make_graph(&GraphKind::Ring, 5).unwrap()).unwrap();
    let mut cfg = EngineConfig::new(0.05, 4, vec![3; 5], 1);
    cfg.hessian = HessianStrategy::ClippedSecant { m1: 0.1, m2: 10.0 };
    cfg.init = InitMode::RandomPerNode { scale: 1.0 };
    let mut a = initialize(&base, &w, &cfg).unwrap();
    let mut b = initialize(&other, &w, &cfg).unwrap();
    step(&mut a, &base, &w, &cfg).unwrap();
    step(&mut b, &other, &w, &cfg).unwrap();
    assert_eq!(a.nodes[0].hessian.matrix(), b.nodes[0].hessian.matrix());
    assert_ne!(a.nodes[3].hessian.matrix(), b.nodes[3].hessian.matrix());
}

#[test]
fn hessian_bounds_hold_along_runs() {
    for (family, strategy) in [
        (Family::Quadratic, HessianStrategy::ClippedSecant { m1: 0.1, m2: 10.0 }),
        (Family::L2Logistic, HessianStrategy::ClippedSecant { m1: 0.5, m2: 2.0 }),
        (Family::RidgeLeastSquares, HessianStrategy::ScaledIdentity { scale: 0.7 }),
    ] {
        let p = ProblemSpec::new(family, 4, 3, 8).generate().unwrap();
        let r = p.solve_reference().unwrap();
        let w = metropolis_weights(&make_graph(&GraphKind::Ring, 4).unwrap()).unwrap();
        let mut cfg = EngineConfig::new(0.02, 5, vec![2; 4], 200);
        cfg.hessian = strategy.clone();
        cfg.init = InitMode::RandomPerNode { scale: 1.0 };
        cfg.log_hessian_spectrum = true;
        let out = engine::run(&p, &w, &cfg, &r).unwrap();
        let (m1, m2) = strategy.bounds();
        for node in &out.final_state.nodes {
            assert!(verify_assumption4(node.hessian.matrix(), m1, m2).unwrap());
        }
        for e in &out.transcript.entries {
            for s in e.hessian.as_ref().unwrap() {
                assert!(s.lambda_min >= m1 - 1e-10 && s.lambda_max <= m2 + 1e-10, "{family:?} k = {}", e.k);
            }
        }
    }
}

#[test]
fn seeded_runs_are_bit_identical() {
    let p = ProblemSpec::new(Family::L2Logistic, 4, 3, 10).generate().unwrap();
    let r = p.solve_reference().unwrap();
    let w = metropolis_weights(&make_graph(&GraphKind::Star, 4).unwrap()).unwrap();
    let mut cfg = EngineConfig::new(0.1, 6, vec![3; 4], 100);
    cfg.hessian = HessianStrategy::ClippedSecant { m1: 0.1, m2: 10.0 };
    cfg.record_states = true;
    cfg.seed = 31;
    let a = engine::run(&p, &w, &cfg, &r).unwrap();
    let b = engine::run(&p, &w, &cfg, &r).unwrap();
    assert_eq!(a.transcript, b.transcript);
    cfg.seed = 32;
    let c = engine::run(&p, &w, &cfg, &r).unwrap();
    assert_ne!(a.transcript, c.transcript);
}

#[test]
fn deterministic_ring_run_converges() {
    let mut spec = ProblemSpec::new(Family::Quadratic, 5, 4, 10);
    spec.seed = 6;
    let p = spec.generate().unwrap();
    let r = p.solve_reference().unwrap();
    let w = metropolis_weights(&make_graph(&GraphKind::Ring, 5).unwrap()).unwrap();
    let (l, _) = p.smoothness_constants();
    let mut cfg = EngineConfig::new(0.2 / l, 10, vec![10; 5], 20_000);
    cfg.stop_tolerance = Some(1e-10);
    let out = engine::run(&p, &w, &cfg, &r).unwrap();
    let last = out.metrics.last().unwrap();
    assert!(last.opt_gap_raw <= 1e-10 && last.consensus_err <= 1e-10);
    assert!(out.stopped_early);
}
