//! Finite-sum local costs `f_i = (1/m_i) Σ_l f_{i,l}` spread over `n` nodes.
//!
//! The global objective is `F(x) = (1/n) Σ_i f_i(x)`. Every sample carries the
//! same ℓ2 regularizer `(λ/2)‖x‖²`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_centralized_gd, CentralizedConfig};
use crate::error::{Error, Result};

/// Gradient-norm threshold met by every [`ReferenceOptimum`].
pub const REFERENCE_GRAD_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITERS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    RidgeLeastSquares,
    L2Logistic,
}

/// One sample cost, before the shared regularizer is added.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleCost {
    /// `½ xᵀQx − cᵀx + offset`, `Q` symmetric positive semidefinite.
    Quadratic { q: DMatrix<f64>, c: DVector<f64>, offset: f64 },
    /// `½ (aᵀx − y)²`
    LeastSquares { a: DVector<f64>, y: f64 },
    /// `log(1 + exp(−y aᵀx))`, `y ∈ {−1, +1}`
    Logistic { a: DVector<f64>, y: f64 },
}

impl SampleCost {
    /// The quadratic sample `½ (aᵀx − b)²` written in `Q, c, offset` form.
    pub fn squared_residual(a: DVector<f64>, b: f64) -> Self {
        let q = &a * a.transpose();
        let c = &a * b;
        SampleCost::Quadratic { q, c, offset: 0.5 * b * b }
    }

    fn dim(&self) -> usize {
        match self {
            SampleCost::Quadratic { c, .. } => c.len(),
            SampleCost::LeastSquares { a, .. } | SampleCost::Logistic { a, .. } => a.len(),
        }
    }

    fn family(&self) -> Family {
        match self {
            SampleCost::Quadratic { .. } => Family::Quadratic,
            SampleCost::LeastSquares { .. } => Family::RidgeLeastSquares,
            SampleCost::Logistic { .. } => Family::L2Logistic,
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            SampleCost::Quadratic { q, c, offset } => 0.5 * x.dot(&(q * x)) - c.dot(x) + offset,
            SampleCost::LeastSquares { a, y } => {
                let r = a.dot(x) - y;
                0.5 * r * r
            }
            SampleCost::Logistic { a, y } => softplus(-y * a.dot(x)),
        }
    }

    /// `out += scale * ∇(sample)(x)`
    fn add_gradient(&self, x: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        match self {
            SampleCost::Quadratic { q, c, .. } => {
                let g = q * x - c;
                out.axpy(scale, &g, 1.0);
            }
            SampleCost::LeastSquares { a, y } => {
                let r = a.dot(x) - y;
                out.axpy(scale * r, a, 1.0);
            }
            SampleCost::Logistic { a, y } => {
                let z = y * a.dot(x);
                out.axpy(-scale * y * sigmoid(-z), a, 1.0);
            }
        }
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceOptimum {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub grad_norm_at_star: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    family: Family,
    d: usize,
    reg: f64,
    nodes: Vec<Vec<SampleCost>>,
    l: f64,
    mu: f64,
}

impl FiniteSumProblem {
    /// Validates the samples and computes `(L, μ)`.
    pub fn new(family: Family, reg: f64, nodes: Vec<Vec<SampleCost>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("problem needs at least one node".into()));
        }
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularizer must be a finite nonnegative number, got {reg}")));
        }
        let d = nodes
            .iter()
            .flatten()
            .next()
            .map(SampleCost::dim)
            .ok_or_else(|| Error::InvalidParameter("node 0 has no samples".into()))?;
        if d == 0 {
            return Err(Error::InvalidParameter("decision dimension must be positive".into()));
        }
        for (i, samples) in nodes.iter().enumerate() {
            if samples.is_empty() {
                return Err(Error::InvalidParameter(format!("node {i} has no samples")));
            }
            for (l, s) in samples.iter().enumerate() {
                if s.dim() != d {
                    return Err(Error::DimensionMismatch(format!("sample ({i}, {l}) has dimension {}, expected {d}", s.dim())));
                }
                if s.family() != family {
                    return Err(Error::InvalidParameter(format!("sample ({i}, {l}) is not of family {family:?}")));
                }
                match s {
                    SampleCost::Quadratic { q, .. } => {
                        if q.nrows() != d || q.ncols() != d {
                            return Err(Error::DimensionMismatch(format!("sample ({i}, {l}) has a {}x{} Q", q.nrows(), q.ncols())));
                        }
                        let asym = (q - q.transpose()).amax();
                        if asym > 1e-12 * (1.0 + q.amax()) {
                            return Err(Error::Asymmetric(asym));
                        }
                        let lo = SymmetricEigen::new(q.clone()).eigenvalues.min();
                        if lo < -1e-12 * (1.0 + q.amax()) {
                            return Err(Error::InvalidParameter(format!("sample ({i}, {l}) is not convex: λ_min(Q) = {lo}")));
                        }
                    }
                    SampleCost::Logistic { y, .. } if *y != 1.0 && *y != -1.0 => {
                        return Err(Error::InvalidParameter(format!("logistic label {y} at ({i}, {l}) is not ±1")));
                    }
                    _ => {}
                }
            }
        }
        let mut p = FiniteSumProblem { family, d, reg, nodes, l: 0.0, mu: 0.0 };
        let (l, mu) = p.compute_constants();
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("global objective is not strongly convex (μ = {mu})")));
        }
        p.l = l;
        p.mu = mu;
        Ok(p)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn regularizer(&self) -> f64 {
        self.reg
    }

    pub fn m(&self, i: usize) -> usize {
        self.nodes[i].len()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.nodes.iter().map(Vec::len).collect()
    }

    pub fn samples(&self, i: usize) -> &[SampleCost] {
        &self.nodes[i]
    }

    /// `(L, μ)`: per-sample smoothness and strong convexity of `F`.
    pub fn smoothness_constants(&self) -> (f64, f64) {
        (self.l, self.mu)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange(format!("node {i} (n = {})", self.n())));
        }
        Ok(())
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch(format!("point has dimension {}, expected {}", x.len(), self.d)));
        }
        Ok(())
    }

    fn check_sample(&self, i: usize, l: usize) -> Result<()> {
        self.check_node(i)?;
        if l >= self.m(i) {
            return Err(Error::IndexOutOfRange(format!("sample {l} on node {i} (m_i = {})", self.m(i))));
        }
        Ok(())
    }

    pub fn sample_cost(&self, i: usize, l: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_sample(i, l)?;
        self.check_point(x)?;
        Ok(self.nodes[i][l].value(x) + 0.5 * self.reg * x.norm_squared())
    }

    pub fn sample_gradient(&self, i: usize, l: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_sample(i, l)?;
        self.check_point(x)?;
        Ok(self.sample_gradient_unchecked(i, l, x))
    }

    pub(crate) fn sample_gradient_unchecked(&self, i: usize, l: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        self.add_sample_gradient(i, l, x, 1.0, &mut g);
        g
    }

    /// `out += scale * ∇f_{i,l}(x)` with no bounds checks.
    pub(crate) fn add_sample_gradient(&self, i: usize, l: usize, x: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        self.nodes[i][l].add_gradient(x, scale, out);
        if self.reg != 0.0 {
            out.axpy(scale * self.reg, x, 1.0);
        }
    }

    pub fn local_cost(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_node(i)?;
        self.check_point(x)?;
        Ok(self.local_cost_unchecked(i, x))
    }

    fn local_cost_unchecked(&self, i: usize, x: &DVector<f64>) -> f64 {
        let s: f64 = self.nodes[i].iter().map(|c| c.value(x)).sum();
        s / self.m(i) as f64 + 0.5 * self.reg * x.norm_squared()
    }

    /// `∇f_i(x)`: the mean of the sample gradients on node `i`.
    pub fn local_full_gradient(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_node(i)?;
        self.check_point(x)?;
        Ok(self.local_full_gradient_unchecked(i, x))
    }

    pub(crate) fn local_full_gradient_unchecked(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for c in &self.nodes[i] {
            c.add_gradient(x, 1.0, &mut g);
        }
        g /= self.m(i) as f64;
        if self.reg != 0.0 {
            g.axpy(self.reg, x, 1.0);
        }
        g
    }

    pub fn global_objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        let s: f64 = (0..self.n()).map(|i| self.local_cost_unchecked(i, x)).sum();
        Ok(s / self.n() as f64)
    }

    pub fn global_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut g = DVector::zeros(self.d);
        for i in 0..self.n() {
            g += self.local_full_gradient_unchecked(i, x);
        }
        Ok(g / self.n() as f64)
    }

    /// For quadratic families, `(A, b)` with `∇F(x) = A x − b`.
    pub fn quadratic_system(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        if self.family == Family::L2Logistic {
            return None;
        }
        let d = self.d;
        let n = self.n() as f64;
        let mut a = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        for samples in &self.nodes {
            let w = 1.0 / (n * samples.len() as f64);
            for s in samples {
                match s {
                    SampleCost::Quadratic { q, c, .. } => {
                        a += q * w;
                        b += c * w;
                    }
                    SampleCost::LeastSquares { a: feat, y } => {
                        a += feat * feat.transpose() * w;
                        b += feat * (y * w);
                    }
                    SampleCost::Logistic { .. } => unreachable!("family checked above"),
                }
            }
        }
        for k in 0..d {
            a[(k, k)] += self.reg;
        }
        Some((a, b))
    }

    fn compute_constants(&self) -> (f64, f64) {
        let max_sample_l = self
            .nodes
            .iter()
            .flatten()
            .map(|s| match s {
                SampleCost::Quadratic { q, .. } => SymmetricEigen::new(q.clone()).eigenvalues.max(),
                SampleCost::LeastSquares { a, .. } => a.norm_squared(),
                SampleCost::Logistic { a, .. } => a.norm_squared() / 4.0,
            })
            .fold(0.0, f64::max);
        let l = max_sample_l + self.reg;
        let mu = match self.quadratic_system() {
            Some((a, _)) => SymmetricEigen::new(a).eigenvalues.min(),
            None => self.reg,
        };
        (l, mu)
    }

    /// High-accuracy centralized minimizer of `F`.
    pub fn solve_reference(&self) -> Result<ReferenceOptimum> {
        let x = match self.quadratic_system() {
            Some((a, b)) => {
                let chol = a
                    .cholesky()
                    .ok_or_else(|| Error::NoConvergence("assembled Hessian is not positive definite".into()))?;
                let mut x = chol.solve(&b);
                // iterative refinement against the oracle gradient
                for _ in 0..5 {
                    let r = self.global_gradient(&x)?;
                    if r.norm() <= REFERENCE_GRAD_TOL {
                        break;
                    }
                    x -= chol.solve(&r);
                }
                x
            }
            None => {
                let cfg = CentralizedConfig {
                    alpha: 1.0 / self.l,
                    iterations: REFERENCE_MAX_ITERS,
                    grad_tol: Some(REFERENCE_GRAD_TOL),
                    record_history: false,
                };
                let run = run_centralized_gd(self, &cfg, &DVector::zeros(self.d))?;
                run.x
            }
        };
        let grad_norm = self.global_gradient(&x)?.norm();
        if !(grad_norm <= REFERENCE_GRAD_TOL) {
            return Err(Error::NoConvergence(format!("‖∇F(x*)‖ = {grad_norm:e} > {REFERENCE_GRAD_TOL:e}")));
        }
        Ok(ReferenceOptimum { f_star: self.global_objective(&x)?, x_star: x, grad_norm_at_star: grad_norm })
    }

    /// One CSV row per sample: `node,target,f0,...,f{d-1}`. Only the
    /// feature-based families are representable.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["node".to_string(), "target".to_string()];
        header.extend((0..self.d).map(|k| format!("f{k}")));
        wtr.write_record(&header)?;
        for (i, samples) in self.nodes.iter().enumerate() {
            for s in samples {
                let (a, y) = match s {
                    SampleCost::LeastSquares { a, y } | SampleCost::Logistic { a, y } => (a, y),
                    SampleCost::Quadratic { .. } => {
                        return Err(Error::Data("quadratic samples have no feature-row representation".into()))
                    }
                };
                let mut row = vec![i.to_string(), y.to_string()];
                row.extend(a.iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). Node ids must cover `0..n`.
    pub fn read_csv<R: Read>(input: R, family: Family, reg: f64) -> Result<Self> {
        if family == Family::Quadratic {
            return Err(Error::Data("quadratic samples have no feature-row representation".into()));
        }
        let mut rdr = csv::Reader::from_reader(input);
        let mut nodes: Vec<Vec<SampleCost>> = Vec::new();
        for (row_no, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Data(format!("row {}: missing column {k}", row_no + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("row {}: column {k}: {e}", row_no + 2)))
            };
            if rec.len() < 3 {
                return Err(Error::Data(format!("row {}: expected node, target and at least one feature", row_no + 2)));
            }
            let node: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("row {}: node id: {e}", row_no + 2)))?;
            let y = parse(1)?;
            let a = DVector::from_iterator(rec.len() - 2, (2..rec.len()).map(parse).collect::<Result<Vec<_>>>()?);
            if nodes.len() <= node {
                nodes.resize_with(node + 1, Vec::new);
            }
            nodes[node].push(match family {
                Family::RidgeLeastSquares => SampleCost::LeastSquares { a, y },
                _ => SampleCost::Logistic { a, y },
            });
        }
        FiniteSumProblem::new(family, reg, nodes)
    }
}

/// Parameters for synthetic problem generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub samples: Vec<usize>,
    pub seed: u64,
    pub regularizer: f64,
    /// Quadratic family: spectral radius bound of the perturbation `Q_l − I`.
    pub curvature_spread: f64,
    /// Scale of the node-specific part of the data; 0 makes every node
    /// share one data-generating model.
    pub heterogeneity: f64,
    /// Scale of the linear term / labels. For the quadratic family 0 gives
    /// the homogeneous instance with `x* = 0`.
    pub target_scale: f64,
    pub feature_scale: f64,
}

impl ProblemSpec {
    pub fn new(family: Family, n: usize, d: usize, m: usize) -> Self {
        ProblemSpec {
            family,
            n,
            d,
            samples: vec![m; n],
            seed: 0,
            regularizer: if family == Family::Quadratic { 0.0 } else { 0.1 },
            curvature_spread: 0.5,
            heterogeneity: 1.0,
            target_scale: 1.0,
            feature_scale: 1.0,
        }
    }

    pub fn generate(&self) -> Result<FiniteSumProblem> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("n and d must be positive".into()));
        }
        if self.samples.len() != self.n {
            return Err(Error::DimensionMismatch(format!("{} sample counts for {} nodes", self.samples.len(), self.n)));
        }
        if self.samples.contains(&0) {
            return Err(Error::InvalidParameter("every node needs at least one sample".into()));
        }
        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let gauss = |rng: &mut ChaCha8Rng, len: usize| DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shared = gauss(&mut rng, d);
        let mut nodes = Vec::with_capacity(self.n);
        for &m in &self.samples {
            let center = &shared + gauss(&mut rng, d) * self.heterogeneity;
            let mut samples = Vec::with_capacity(m);
            for _ in 0..m {
                let s = match self.family {
                    Family::Quadratic => {
                        let raw = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let sym = (&raw + raw.transpose()) * 0.5;
                        let radius = SymmetricEigen::new(sym.clone()).eigenvalues.amax();
                        let scale = if radius > 0.0 { self.curvature_spread * rng.random::<f64>() / radius } else { 0.0 };
                        let q = DMatrix::identity(d, d) + sym * scale;
                        let c = (&center + gauss(&mut rng, d) * 0.1) * self.target_scale;
                        SampleCost::Quadratic { q, c, offset: 0.0 }
                    }
                    Family::RidgeLeastSquares => {
                        let a = gauss(&mut rng, d) * self.feature_scale;
                        let noise: f64 = rng.sample(StandardNormal);
                        let y = self.target_scale * (a.dot(&center) + 0.1 * noise);
                        SampleCost::LeastSquares { a, y }
                    }
                    Family::L2Logistic => {
                        let a = gauss(&mut rng, d) * self.feature_scale;
                        let noise: f64 = rng.sample(StandardNormal);
                        let y = if a.dot(&center) + 0.5 * noise >= 0.0 { 1.0 } else { -1.0 };
                        SampleCost::Logistic { a, y }
                    }
                };
                samples.push(s);
            }
            nodes.push(samples);
        }
        FiniteSumProblem::new(self.family, self.regularizer, nodes)
    }
}
