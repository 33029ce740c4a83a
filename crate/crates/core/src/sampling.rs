//! Mini-batch sampling and the SVRG-corrected local gradient estimator.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problems::FiniteSumProblem;

/// Independent per-node random stream derived from `(seed, node)`.
pub fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}

/// Uniform subset of `0..m` of size `b`, drawn without replacement by a
/// partial Fisher–Yates shuffle.
pub fn draw_batch<R: Rng + ?Sized>(rng: &mut R, m: usize, b: usize) -> Result<Vec<usize>> {
    if b == 0 || b > m {
        return Err(Error::BatchSize { batch: b, samples: m });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    for t in 0..b {
        let j = rng.random_range(t..m);
        idx.swap(t, j);
    }
    idx.truncate(b);
    Ok(idx)
}

/// `B = max_i (m_i − b_i) / ((m_i − 1) b_i)`; zero exactly when every node
/// uses its full sample set.
pub fn non_sampling_rate(m: &[usize], b: &[usize]) -> Result<f64> {
    if m.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} sample counts but {} batch sizes", m.len(), b.len())));
    }
    let mut rate = 0.0_f64;
    for (&mi, &bi) in m.iter().zip(b) {
        if bi == 0 || bi > mi {
            return Err(Error::BatchSize { batch: bi, samples: mi });
        }
        if bi < mi {
            rate = rate.max((mi - bi) as f64 / ((mi - 1) as f64 * bi as f64));
        }
    }
    Ok(rate)
}

fn fingerprint(v: &DVector<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v.iter() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Snapshot point `τ_i` and the stored full local gradient at it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgState {
    pub(crate) tau: DVector<f64>,
    full_grad_at_tau: DVector<f64>,
    tag: u64,
}

impl SvrgState {
    /// Takes a snapshot at `x` and evaluates `∇f_i(x)`.
    pub fn new(problem: &FiniteSumProblem, node: usize, x: &DVector<f64>) -> Result<Self> {
        let g = problem.local_full_gradient(node, x)?;
        Ok(Self::with_gradient(x.clone(), g))
    }

    /// Builds a snapshot from an already evaluated full gradient.
    pub fn with_gradient(tau: DVector<f64>, full_grad_at_tau: DVector<f64>) -> Self {
        let tag = fingerprint(&tau);
        SvrgState { tau, full_grad_at_tau, tag }
    }

    pub fn tau(&self) -> &DVector<f64> {
        &self.tau
    }

    pub fn full_grad_at_tau(&self) -> &DVector<f64> {
        &self.full_grad_at_tau
    }

    fn is_current(&self) -> bool {
        fingerprint(&self.tau) == self.tag
    }

    fn refresh(&mut self, problem: &FiniteSumProblem, node: usize, x: &DVector<f64>) {
        self.tau.copy_from(x);
        self.full_grad_at_tau = problem.local_full_gradient_unchecked(node, x);
        self.tag = fingerprint(&self.tau);
    }
}

/// Moves the snapshot to `x_new` when `(k+1) mod T = 0`. Returns whether a
/// refresh (and hence a full local gradient evaluation) happened.
pub fn advance_snapshot(
    k_plus_1: usize,
    period: usize,
    x_new: &DVector<f64>,
    state: &mut SvrgState,
    problem: &FiniteSumProblem,
    node: usize,
) -> Result<bool> {
    if k_plus_1 == 0 {
        return Err(Error::InvalidParameter("snapshot schedule starts at k + 1 = 1".into()));
    }
    if period == 0 {
        return Err(Error::InvalidParameter("snapshot period T must be positive".into()));
    }
    if k_plus_1.is_multiple_of(period) {
        state.refresh(problem, node, x_new);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// `v = (1/b) Σ_{l∈S} (∇f_{i,l}(x) − ∇f_{i,l}(τ)) + ∇f_i(τ)`.
///
/// A batch that covers every sample makes the correction cancel, so the
/// local full gradient at `x` is returned directly.
pub fn svrg_gradient(
    problem: &FiniteSumProblem,
    node: usize,
    x: &DVector<f64>,
    state: &SvrgState,
    batch: &[usize],
) -> Result<DVector<f64>> {
    if node >= problem.n() {
        return Err(Error::IndexOutOfRange(format!("node {node} (n = {})", problem.n())));
    }
    let m = problem.m(node);
    if batch.is_empty() || batch.len() > m {
        return Err(Error::BatchSize { batch: batch.len(), samples: m });
    }
    if let Some(&l) = batch.iter().find(|&&l| l >= m) {
        return Err(Error::IndexOutOfRange(format!("sample {l} on node {node} (m_i = {m})")));
    }
    if x.len() != problem.d() || state.tau.len() != problem.d() {
        return Err(Error::DimensionMismatch(format!("point dimension {} vs problem {}", x.len(), problem.d())));
    }
    if !state.is_current() {
        return Err(Error::StaleSnapshot { node });
    }
    Ok(svrg_gradient_unchecked(problem, node, x, state, batch))
}

pub(crate) fn svrg_gradient_unchecked(
    problem: &FiniteSumProblem,
    node: usize,
    x: &DVector<f64>,
    state: &SvrgState,
    batch: &[usize],
) -> DVector<f64> {
    if batch.len() == problem.m(node) {
        return problem.local_full_gradient_unchecked(node, x);
    }
    let mut corr = DVector::zeros(problem.d());
    for &l in batch {
        problem.add_sample_gradient(node, l, x, 1.0, &mut corr);
        problem.add_sample_gradient(node, l, &state.tau, -1.0, &mut corr);
    }
    corr /= batch.len() as f64;
    corr += &state.full_grad_at_tau;
    corr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Family, ProblemSpec};

    fn problem(m: usize) -> FiniteSumProblem {
        let mut spec = ProblemSpec::new(Family::Quadratic, 2, 3, m);
        spec.seed = 5;
        spec.generate().unwrap()
    }

    #[test]
    fn full_batch_is_everything() {
        let mut rng = node_rng(1, 0);
        for _ in 0..20 {
            let mut s = draw_batch(&mut rng, 7, 7).unwrap();
            s.sort();
            assert_eq!(s, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batch_is_distinct() {
        let mut rng = node_rng(2, 3);
        for _ in 0..200 {
            let mut s = draw_batch(&mut rng, 10, 4).unwrap();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 4);
            assert!(s.iter().all(|&l| l < 10));
        }
    }

    #[test]
    fn bad_batch_sizes() {
        let mut rng = node_rng(0, 0);
        assert!(draw_batch(&mut rng, 3, 0).is_err());
        assert!(draw_batch(&mut rng, 3, 4).is_err());
    }

    #[test]
    fn subset_frequencies_are_uniform() {
        let mut rng = node_rng(42, 0);
        let draws = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let mut s = draw_batch(&mut rng, 3, 2).unwrap();
            s.sort();
            let k = match (s[0], s[1]) {
                (0, 1) => 0,
                (0, 2) => 1,
                (1, 2) => 2,
                _ => unreachable!(),
            };
            counts[k] += 1;
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 2 degrees of freedom, 0.999 quantile
        assert!(chi2 < 13.82, "chi2 = {chi2}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn single_index_is_uniform() {
        let mut rng = node_rng(7, 1);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[draw_batch(&mut rng, 5, 1).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 50_000.0 - 0.2).abs() < 0.01);
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = node_rng(9, 2);
        let mut b = node_rng(9, 2);
        let mut c = node_rng(9, 3);
        let sa: Vec<_> = (0..10).map(|_| draw_batch(&mut a, 20, 3).unwrap()).collect();
        let sb: Vec<_> = (0..10).map(|_| draw_batch(&mut b, 20, 3).unwrap()).collect();
        let sc: Vec<_> = (0..10).map(|_| draw_batch(&mut c, 20, 3).unwrap()).collect();
        assert_eq!(sa, sb);
        assert_ne!(sa, sc);
    }

    #[test]
    fn rate_values() {
        assert_eq!(non_sampling_rate(&[5, 8], &[5, 8]).unwrap(), 0.0);
        assert!((non_sampling_rate(&[10], &[2]).unwrap() - 8.0 / 18.0).abs() < 1e-15);
        assert_eq!(non_sampling_rate(&[10], &[1]).unwrap(), 1.0);
        assert_eq!(non_sampling_rate(&[1], &[1]).unwrap(), 0.0);
        assert!(non_sampling_rate(&[4], &[5]).is_err());
        assert!(non_sampling_rate(&[4, 4], &[2]).is_err());
    }

    #[test]
    fn snapshot_point_gives_exact_gradient() {
        let p = problem(6);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let st = SvrgState::new(&p, 1, &x).unwrap();
        let full = p.local_full_gradient(1, &x).unwrap();
        for batch in [vec![0], vec![2, 5], vec![1, 3, 4]] {
            assert_eq!(svrg_gradient(&p, 1, &x, &st, &batch).unwrap(), full);
        }
    }

    #[test]
    fn full_batch_gives_exact_gradient() {
        let p = problem(6);
        let tau = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let st = SvrgState::new(&p, 0, &tau).unwrap();
        let v = svrg_gradient(&p, 0, &x, &st, &[5, 4, 3, 2, 1, 0]).unwrap();
        assert_eq!(v, p.local_full_gradient(0, &x).unwrap());
    }

    #[test]
    fn stale_snapshot_detected() {
        let p = problem(4);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let mut st = SvrgState::new(&p, 0, &x).unwrap();
        st.tau[0] += 1.0;
        assert!(matches!(svrg_gradient(&p, 0, &x, &st, &[0]), Err(Error::StaleSnapshot { node: 0 })));
    }

    #[test]
    fn snapshot_schedule() {
        let p = problem(4);
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let x1 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut st = SvrgState::new(&p, 0, &x0).unwrap();
        assert!(!advance_snapshot(5, 3, &x1, &mut st, &p, 0).unwrap());
        assert_eq!(st.tau(), &x0);
        assert!(advance_snapshot(6, 3, &x1, &mut st, &p, 0).unwrap());
        assert_eq!(st.tau(), &x1);
        assert_eq!(st.full_grad_at_tau(), &p.local_full_gradient(0, &x1).unwrap());
        assert!(advance_snapshot(1, 1, &x0, &mut st, &p, 0).unwrap());
        assert!(advance_snapshot(0, 1, &x0, &mut st, &p, 0).is_err());
    }
}
