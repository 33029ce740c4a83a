//! Network graphs and symmetric doubly stochastic mixing matrices.
//!
//! Nodes are indexed from 0. Self-loops are implicit: every node is its own
//! neighbor and the diagonal weight is derived from the off-diagonal ones.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used by every mixing-matrix check.
pub const VALIDATION_TOL: f64 = 1e-12;

/// Retry budget when sampling a connected Erdős–Rényi graph.
pub const ER_MAX_RETRIES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Complete,
    Star,
    ErdosRenyi { p: f64, seed: u64 },
    Grid { rows: usize, cols: usize },
}

/// Undirected simple graph. Edges are stored once as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    connected: bool,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) has an endpoint outside 0..{n}")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}; self-loops are implicit")));
            }
            let e = if a < b { (a, b) } else { (b, a) };
            if !set.insert(e) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
        }
        let mut g = Graph { n, edges: set, connected: false };
        g.connected = g.compute_connected();
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let e = if a < b { (a, b) } else { (b, a) };
        self.edges.contains(&e)
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    fn compute_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch(format!("permutation of length {} for {} nodes", perm.len(), self.n)));
        }
        Graph::from_edges(self.n, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}

/// Builds a connected graph of the requested family.
pub fn make_graph(kind: &GraphKind, n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!("need n >= 2 nodes, got {n}")));
    }
    let g = match *kind {
        GraphKind::Ring => {
            let edges: BTreeSet<_> = (0..n)
                .map(|i| {
                    let j = (i + 1) % n;
                    (i.min(j), i.max(j))
                })
                .collect();
            Graph::from_edges(n, edges)?
        }
        GraphKind::Complete => {
            Graph::from_edges(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))?
        }
        GraphKind::Star => Graph::from_edges(n, (1..n).map(|j| (0, j)))?,
        GraphKind::Grid { rows, cols } => {
            if rows * cols != n {
                return Err(Error::InvalidGraph(format!("grid {rows}x{cols} does not have {n} nodes")));
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let id = r * cols + c;
                    if c + 1 < cols {
                        edges.push((id, id + 1));
                    }
                    if r + 1 < rows {
                        edges.push((id, id + cols));
                    }
                }
            }
            Graph::from_edges(n, edges)?
        }
        GraphKind::ErdosRenyi { p, seed } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidGraph(format!("edge probability {p} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut found = None;
            for _ in 0..ER_MAX_RETRIES {
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                let g = Graph::from_edges(n, edges)?;
                if g.is_connected() {
                    found = Some(g);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::DisconnectedTopology(format!(
                    "no connected Erdos-Renyi sample with n={n}, p={p} after {ER_MAX_RETRIES} draws"
                ))
            })?
        }
    };
    if !g.is_connected() {
        return Err(Error::DisconnectedTopology(format!("{kind:?} with n={n}")));
    }
    Ok(g)
}

/// A validated mixing matrix together with the graph it was built on.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    sigma: f64,
    graph: Graph,
}

impl MixingMatrix {
    /// Validates `w` against `graph` and computes its spectral gap.
    pub fn new(w: DMatrix<f64>, graph: Graph) -> Result<Self> {
        let sigma = spectral_gap_checked(&w, Some(&graph))?;
        Ok(MixingMatrix { w, sigma, graph })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// The lazy variant `(I + W) / 2`, which has no negative eigenvalues.
    pub fn lazy(&self) -> Result<MixingMatrix> {
        let n = self.n();
        let w = (DMatrix::identity(n, n) + &self.w) * 0.5;
        MixingMatrix::new(w, self.graph.clone())
    }

    /// Dense CSV, one row of `W` per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.n() {
            wtr.write_record(self.w.row(i).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// diagonal fills each row to one.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::DisconnectedTopology("metropolis weights need a connected graph".into()));
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in g.edges() {
        let wij = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = wij;
        w[(b, a)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::new(w, g.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption3Report {
    pub clauses: Vec<Clause>,
}

impl Assumption3Report {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Clause> {
        self.clauses.iter().find(|c| !c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

pub const CLAUSE_SQUARE: &str = "shape";
pub const CLAUSE_NONNEGATIVE: &str = "nonnegativity";
pub const CLAUSE_SYMMETRIC: &str = "symmetry";
pub const CLAUSE_DOUBLY_STOCHASTIC: &str = "double stochasticity";
pub const CLAUSE_SUPPORT: &str = "support pattern";
pub const CLAUSE_NULL_SPACE: &str = "null space of I - W is span(1)";

/// Checks every clause of the mixing-matrix assumption. When `graph` is
/// `None` the support clause only checks that the diagonal is positive,
/// since the neighbor sets are then defined by the nonzeros of `w`.
pub fn validate_assumption3(w: &DMatrix<f64>, graph: Option<&Graph>) -> Assumption3Report {
    let mut clauses = Vec::new();
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        clauses.push(Clause {
            name: CLAUSE_SQUARE,
            passed: false,
            detail: format!("expected a non-empty square matrix, got {}x{}", w.nrows(), w.ncols()),
        });
        return Assumption3Report { clauses };
    }

    let min_entry = w.iter().copied().fold(f64::INFINITY, f64::min);
    clauses.push(Clause {
        name: CLAUSE_NONNEGATIVE,
        passed: min_entry >= 0.0,
        detail: format!("min entry {min_entry:e}"),
    });

    let asym = (w - w.transpose()).amax();
    clauses.push(Clause { name: CLAUSE_SYMMETRIC, passed: asym == 0.0, detail: format!("max |W - W^T| = {asym:e}") });

    let row_dev = w.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let col_dev = w.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    let dev = row_dev.max(col_dev);
    clauses.push(Clause {
        name: CLAUSE_DOUBLY_STOCHASTIC,
        passed: dev <= VALIDATION_TOL,
        detail: format!("max |row or column sum - 1| = {dev:e}"),
    });

    let support = match graph {
        Some(g) if g.n() != n => Clause {
            name: CLAUSE_SUPPORT,
            passed: false,
            detail: format!("graph has {} nodes, matrix is {n}x{n}", g.n()),
        },
        Some(g) => {
            let mut bad = None;
            'outer: for i in 0..n {
                for j in 0..n {
                    let neighbor = i == j || g.has_edge(i, j);
                    if neighbor != (w[(i, j)] != 0.0) {
                        bad = Some((i, j, neighbor));
                        break 'outer;
                    }
                }
            }
            match bad {
                None => Clause { name: CLAUSE_SUPPORT, passed: true, detail: "nonzeros match neighbor sets".into() },
                Some((i, j, neighbor)) => Clause {
                    name: CLAUSE_SUPPORT,
                    passed: false,
                    detail: if neighbor {
                        format!("w[{i},{j}] = 0 but {j} is a neighbor of {i}")
                    } else {
                        format!("w[{i},{j}] = {} but {j} is not a neighbor of {i}", w[(i, j)])
                    },
                },
            }
        }
        None => {
            let zero_diag = (0..n).find(|&i| w[(i, i)] == 0.0);
            Clause {
                name: CLAUSE_SUPPORT,
                passed: zero_diag.is_none(),
                detail: match zero_diag {
                    None => "neighbor sets taken from the nonzeros of W".into(),
                    Some(i) => format!("w[{i},{i}] = 0 but every node is its own neighbor"),
                },
            }
        }
    };
    clauses.push(support);

    // Eigenvalue 1 must be simple. Symmetrize so the check stays meaningful
    // even when the symmetry clause already failed.
    let sym = (w + w.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let near_one = eig.iter().filter(|&&l| (l - 1.0).abs() <= VALIDATION_TOL).count();
    let ones = DVector::from_element(n, 1.0);
    let fixes_ones = (w * &ones - &ones).amax() <= VALIDATION_TOL;
    clauses.push(Clause {
        name: CLAUSE_NULL_SPACE,
        passed: near_one == 1 && fixes_ones,
        detail: format!(
            "eigenvalue 1 multiplicity {near_one}; second largest eigenvalue {}",
            eig.get(1).copied().unwrap_or(f64::NAN)
        ),
    });

    Assumption3Report { clauses }
}

/// `‖W − (1/n)11ᵀ‖₂` after validating the matrix.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<f64> {
    spectral_gap_checked(w, None)
}

fn spectral_gap_checked(w: &DMatrix<f64>, graph: Option<&Graph>) -> Result<f64> {
    let report = validate_assumption3(w, graph);
    if let Some(c) = report.first_failure() {
        return Err(Error::MixingMatrix { clause: c.name, detail: c.detail.clone() });
    }
    let n = w.nrows();
    let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    let sigma = SymmetricEigen::new(centered).eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    if sigma >= 1.0 {
        return Err(Error::MixingMatrix { clause: CLAUSE_NULL_SPACE, detail: format!("sigma = {sigma} >= 1") });
    }
    Ok(sigma)
}
