//! TOML experiment configuration.
//!
//! ```toml
//! [problem]
//! family = "quadratic"        # quadratic | ridge_least_squares | l2_logistic
//! n = 4
//! d = 5
//! samples = 20                # one count for every node, or a list
//!
//! [topology]
//! kind = "ring"               # ring | complete | star | erdos_renyi | grid
//!
//! [algorithm]
//! alpha = "auto"              # or a number
//! period = "auto"             # or an integer
//! batch = 2                   # one size for every node, or a list
//!
//! [run]
//! iterations = 1000
//! ```
//!
//! Every table except `[problem]` and `[topology]` is optional, and unknown
//! keys are rejected. See the README for the full key list.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::TheoryParams;
use crate::engine::{EngineConfig, InitMode};
use crate::error::{Error, Result};
use crate::hessian::{HessianStrategy, DEFAULT_M1, DEFAULT_M2};
use crate::problems::{Family, FiniteSumProblem, ProblemSpec, ReferenceOptimum};
use crate::sampling::non_sampling_rate;
use crate::topology::{make_graph, metropolis_weights, GraphKind, MixingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AutoTag {
    Auto,
}

/// A parameter that is either given or resolved from the step-size and period bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    #[serde(with = "auto_tag")]
    Auto,
    Value(T),
}

mod auto_tag {
    use super::AutoTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        AutoTag::Auto.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoTag::deserialize(d).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    All(usize),
    Each(Vec<usize>),
}

impl PerNode {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<usize>> {
        match self {
            PerNode::All(v) => Ok(vec![*v; n]),
            PerNode::Each(vs) if vs.len() == n => Ok(vs.clone()),
            PerNode::Each(vs) => Err(Error::Config(format!("{what} lists {} values for {n} nodes", vs.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: Family,
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_samples")]
    pub samples: PerNode,
    #[serde(default)]
    pub seed: u64,
    pub regularizer: Option<f64>,
    pub curvature_spread: Option<f64>,
    pub heterogeneity: Option<f64>,
    pub target_scale: Option<f64>,
    pub feature_scale: Option<f64>,
    /// CSV sample file (`node,target,f0,...`) replacing the synthetic data.
    pub data: Option<PathBuf>,
}

fn default_d() -> usize {
    5
}

fn default_samples() -> PerNode {
    PerNode::All(20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Metropolis,
    /// `(I + W)/2` on top of Metropolis weights.
    LazyMetropolis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Star,
    ErdosRenyi,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Edge probability for `erdos_renyi`.
    pub p: Option<f64>,
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    #[serde(default)]
    pub weights: WeightScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    #[default]
    Identity,
    ScaledIdentity,
    ClippedSecant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Zeros,
    Random,
    RandomPerNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "auto")]
    pub alpha: AutoOr<f64>,
    #[serde(default = "auto")]
    pub period: AutoOr<usize>,
    #[serde(default = "default_batch")]
    pub batch: PerNode,
    #[serde(default)]
    pub hessian: HessianKind,
    /// Multiplier for `scaled_identity`.
    pub scale: Option<f64>,
    #[serde(default = "default_m1")]
    pub m1: f64,
    #[serde(default = "default_m2")]
    pub m2: f64,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default = "one")]
    pub init_scale: f64,
}

fn auto<T>() -> AutoOr<T> {
    AutoOr::Auto
}

fn default_batch() -> PerNode {
    PerNode::All(1)
}

fn default_m1() -> f64 {
    DEFAULT_M1
}

fn default_m2() -> f64 {
    DEFAULT_M2
}

fn one() -> f64 {
    1.0
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            alpha: AutoOr::Auto,
            period: AutoOr::Auto,
            batch: default_batch(),
            hessian: HessianKind::Identity,
            scale: None,
            m1: DEFAULT_M1,
            m2: DEFAULT_M2,
            init: InitKind::Zeros,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "one_usize")]
    pub replications: usize,
    /// Algorithm seeds; defaults to `seed, seed + 1, ...`.
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict_gate: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "one_usize")]
    pub threads: usize,
    pub stop_tolerance: Option<f64>,
    #[serde(default)]
    pub log_hessian: bool,
}

fn default_iterations() -> usize {
    1000
}

fn one_usize() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: default_iterations(),
            replications: 1,
            seeds: None,
            seed: 0,
            strict_gate: false,
            output_dir: default_output(),
            threads: 1,
            stop_tolerance: None,
            log_hessian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Parses and validates a TOML document. Syntax and type errors carry the
/// offending line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(locate(text, &e)))?;
    cfg.validate()?;
    Ok(cfg)
}

fn locate(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
            format!("line {line}, column {col}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.n == 0 || p.d == 0 {
            return Err(Error::Config("problem.n and problem.d must be positive".into()));
        }
        let samples = p.samples.expand(p.n, "problem.samples")?;
        let batch = self.algorithm.batch.expand(p.n, "algorithm.batch")?;
        if p.data.is_none() {
            for (i, (&b, &m)) in batch.iter().zip(&samples).enumerate() {
                if m == 0 {
                    return Err(Error::Config(format!("node {i} has no samples")));
                }
                if b == 0 || b > m {
                    return Err(Error::Config(format!("node {i}: batch size {b} must lie in [1, m_i = {m}]")));
                }
            }
        }
        let a = &self.algorithm;
        if !(a.m1 > 0.0 && a.m1 <= a.m2 && a.m2.is_finite()) {
            return Err(Error::Config(format!("need 0 < m1 <= m2 < inf, got m1 = {}, m2 = {}", a.m1, a.m2)));
        }
        match (a.hessian, a.scale) {
            (HessianKind::ScaledIdentity, None) => {
                return Err(Error::Config("hessian = \"scaled_identity\" requires algorithm.scale".into()))
            }
            (HessianKind::ScaledIdentity, Some(c)) if !(c >= a.m1 && c <= a.m2) => {
                return Err(Error::Config(format!("scale {c} lies outside [m1, m2] = [{}, {}]", a.m1, a.m2)))
            }
            (HessianKind::ScaledIdentity, _) => {}
            (_, Some(_)) => return Err(Error::Config("algorithm.scale only applies to scaled_identity".into())),
            _ => {}
        }
        if let AutoOr::Value(alpha) = a.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
            }
        }
        if a.period == AutoOr::Value(0) {
            return Err(Error::Config("period must be positive".into()));
        }
        let r = &self.run;
        if r.replications == 0 || r.threads == 0 {
            return Err(Error::Config("run.replications and run.threads must be positive".into()));
        }
        if let Some(seeds) = &r.seeds {
            if seeds.len() != r.replications {
                return Err(Error::Config(format!("{} seeds for {} replications", seeds.len(), r.replications)));
            }
        }
        if self.topology.kind == TopologyKind::ErdosRenyi && self.topology.p.is_none() {
            return Err(Error::Config("erdos_renyi topology requires p".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => (0..self.run.replications as u64).map(|r| self.run.seed + r).collect(),
        }
    }

    pub fn hessian_strategy(&self) -> HessianStrategy {
        let a = &self.algorithm;
        match a.hessian {
            HessianKind::Identity => HessianStrategy::Identity,
            HessianKind::ScaledIdentity => HessianStrategy::ScaledIdentity { scale: a.scale.unwrap_or(1.0) },
            HessianKind::ClippedSecant => HessianStrategy::ClippedSecant { m1: a.m1, m2: a.m2 },
        }
    }

    pub fn graph_kind(&self) -> Result<GraphKind> {
        let t = &self.topology;
        Ok(match t.kind {
            TopologyKind::Ring => GraphKind::Ring,
            TopologyKind::Complete => GraphKind::Complete,
            TopologyKind::Star => GraphKind::Star,
            TopologyKind::ErdosRenyi => GraphKind::ErdosRenyi {
                p: t.p.ok_or_else(|| Error::Config("erdos_renyi topology requires p".into()))?,
                seed: t.seed.unwrap_or(self.problem.seed),
            },
            TopologyKind::Grid => {
                let rows = t.rows.ok_or_else(|| Error::Config("grid topology requires rows".into()))?;
                GraphKind::Grid { rows, cols: t.cols.unwrap_or(self.problem.n / rows.max(1)) }
            }
        })
    }

    pub fn build_mixing(&self) -> Result<MixingMatrix> {
        let w = metropolis_weights(&make_graph(&self.graph_kind()?, self.problem.n)?)?;
        match self.topology.weights {
            WeightScheme::Metropolis => Ok(w),
            WeightScheme::LazyMetropolis => w.lazy(),
        }
    }

    pub fn build_problem(&self) -> Result<FiniteSumProblem> {
        let p = &self.problem;
        if let Some(path) = &p.data {
            let file = std::fs::File::open(path)?;
            let reg = p.regularizer.unwrap_or(0.1);
            let problem = FiniteSumProblem::read_csv(file, p.family, reg)?;
            if problem.n() != p.n || problem.d() != p.d {
                return Err(Error::Config(format!(
                    "data file holds n = {}, d = {} but the config says n = {}, d = {}",
                    problem.n(),
                    problem.d(),
                    p.n,
                    p.d
                )));
            }
            return Ok(problem);
        }
        let mut spec = ProblemSpec::new(p.family, p.n, p.d, 1);
        spec.samples = p.samples.expand(p.n, "problem.samples")?;
        spec.seed = p.seed;
        if let Some(v) = p.regularizer {
            spec.regularizer = v;
        }
        if let Some(v) = p.curvature_spread {
            spec.curvature_spread = v;
        }
        if let Some(v) = p.heterogeneity {
            spec.heterogeneity = v;
        }
        if let Some(v) = p.target_scale {
            spec.target_scale = v;
        }
        if let Some(v) = p.feature_scale {
            spec.feature_scale = v;
        }
        spec.generate()
    }

    /// Builds everything a run needs, resolving `"auto"` parameters.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let problem = self.build_problem()?;
        let w = self.build_mixing()?;
        let batch = self.algorithm.batch.expand(problem.n(), "algorithm.batch")?;
        for (i, &b) in batch.iter().enumerate() {
            if b == 0 || b > problem.m(i) {
                return Err(Error::Config(format!("node {i}: batch size {b} must lie in [1, m_i = {}]", problem.m(i))));
            }
        }
        let strategy = self.hessian_strategy();
        let (m1, m2) = strategy.bounds();
        let (l, mu) = problem.smoothness_constants();
        let b_rate = non_sampling_rate(&problem.sample_counts(), &batch)?;
        let alpha = match self.algorithm.alpha {
            AutoOr::Value(a) => a,
            AutoOr::Auto => TheoryParams::new(1.0, 1.0, b_rate, l, mu, w.sigma(), m1, m2)?.max_step_size(),
        };
        let period = match self.algorithm.period {
            AutoOr::Value(t) => t,
            AutoOr::Auto => {
                let t = TheoryParams::new(alpha, 1.0, b_rate, l, mu, w.sigma(), m1, m2)?.min_period_ceil();
                usize::try_from(t).map_err(|_| Error::Config(format!("resolved period {t} does not fit in usize")))?
            }
        };
        let params = TheoryParams::new(alpha, period as f64, b_rate, l, mu, w.sigma(), m1, m2)?;
        let scale = self.algorithm.init_scale;
        let init = match self.algorithm.init {
            InitKind::Zeros => InitMode::Zeros,
            InitKind::Random => InitMode::Random { scale },
            InitKind::RandomPerNode => InitMode::RandomPerNode { scale },
        };
        let engine = EngineConfig {
            alpha,
            period,
            batch_sizes: batch,
            hessian: strategy,
            init,
            seed: self.run.seed,
            iterations: self.run.iterations,
            stop_tolerance: self.run.stop_tolerance,
            threads: self.run.threads,
            strict_gate: self.run.strict_gate,
            record_states: false,
            log_hessian_spectrum: self.run.log_hessian,
            check_hessian: true,
        };
        let reference = problem.solve_reference()?;
        Ok(Resolved { problem, mixing: w, reference, engine, params, seeds: self.seeds() })
    }
}

/// A config with its problem, topology and parameters materialized.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: FiniteSumProblem,
    pub mixing: MixingMatrix,
    pub reference: ReferenceOptimum,
    /// Engine settings with the seed of the first replication.
    pub engine: EngineConfig,
    pub params: TheoryParams,
    pub seeds: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
family = "quadratic"
n = 4

[topology]
kind = "ring"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.problem.d, 5);
        assert_eq!(cfg.algorithm.alpha, AutoOr::Auto);
        assert_eq!(cfg.algorithm.batch, PerNode::All(1));
        assert_eq!(cfg.run.replications, 1);
        assert_eq!(cfg.topology.weights, WeightScheme::Metropolis);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.engine.batch_sizes, vec![1; 4]);
        assert!(r.params.alpha > 0.0);
        assert_eq!(r.engine.period as u64, r.params.min_period_ceil());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[run]\niterations = 5\nbogus = 1\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line 11"), "{err}");
    }

    #[test]
    fn type_errors_carry_line() {
        let text = MINIMAL.replace("n = 4", "n = \"four\"");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn batch_larger_than_samples() {
        let text = format!("{MINIMAL}\n[algorithm]\nbatch = 30\n");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("n = 4", "n = 2\nsamples = [3, 5]") + "\n[algorithm]\nbatch = [3, 4]\n";
        parse_config(&text).unwrap();
        let text = text.replace("batch = [3, 4]", "batch = [4, 4]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn auto_step_size_reference_value() {
        // σ = 0, L = μ = 1, M1 = M2 = 1: the 2-node complete graph with a
        // single identity-curvature sample per node
        let text = r#"
[problem]
family = "quadratic"
n = 2
d = 2
samples = 1
curvature_spread = 0.0

[topology]
kind = "complete"

[algorithm]
alpha = "auto"
"#;
        let r = parse_config(text).unwrap().resolve().unwrap();
        assert_eq!(r.mixing.sigma(), 0.0);
        let (l, mu) = r.problem.smoothness_constants();
        assert!((l - 1.0).abs() < 1e-15 && (mu - 1.0).abs() < 1e-15);
        assert!((r.params.alpha - 0.005).abs() < 1e-15);
    }

    #[test]
    fn explicit_values_and_lists() {
        let text = format!(
            "{MINIMAL}\n[algorithm]\nalpha = 0.01\nperiod = 50\nhessian = \"clipped_secant\"\n\n[run]\nreplications = 2\nseeds = [7, 9]\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.algorithm.alpha, AutoOr::Value(0.01));
        assert_eq!(cfg.algorithm.period, AutoOr::Value(50));
        assert_eq!(cfg.seeds(), vec![7, 9]);
        let r = cfg.resolve().unwrap();
        assert_eq!((r.params.m1, r.params.m2), (DEFAULT_M1, DEFAULT_M2));
    }

    #[test]
    fn scale_must_sit_inside_bounds() {
        let text = format!("{MINIMAL}\n[algorithm]\nhessian = \"scaled_identity\"\nscale = 20.0\n");
        assert!(parse_config(&text).is_err());
        let text = text.replace("20.0", "2.0");
        assert_eq!(parse_config(&text).unwrap().hessian_strategy(), HessianStrategy::ScaledIdentity { scale: 2.0 });
    }

    #[test]
    fn bad_auto_string() {
        let text = format!("{MINIMAL}\n[algorithm]\nalpha = \"fast\"\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn seed_list_length_checked() {
        let text = format!("{MINIMAL}\n[run]\nreplications = 3\nseeds = [1]\n");
        assert!(parse_config(&text).is_err());
    }
}
