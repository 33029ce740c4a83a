//! Experiment driver: runs resolved configs and writes metric CSVs,
//! certificate reports and metadata.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{check_theorem1, evaluate_certificate, Certificate, GateReport, MetricContext, MetricsRecord};
use crate::baselines::{run_dgd, run_gradient_tracking, BaselineConfig};
use crate::config::{ExperimentConfig, Resolved};
use crate::engine::{self, EngineConfig};
use crate::error::{Error, Result};
use crate::hessian::HessianStrategy;
use crate::topology::{validate_assumption3, Assumption3Report};

/// Relative output directories are resolved against this variable when set.
pub const OUTPUT_ROOT_ENV: &str = "VRDQN_OUTPUT_ROOT";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const HESSIAN_FILE: &str = "hessian_spectrum.csv";

pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

pub fn metrics_file_for_seed(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Column-wise mean over replications, truncated to the shortest stream.
/// Gradient counts are seed independent and taken from the first stream.
pub fn average_metrics(streams: &[Vec<MetricsRecord>]) -> Vec<MetricsRecord> {
    let Some(first) = streams.first() else { return Vec::new() };
    let len = streams.iter().map(Vec::len).min().unwrap_or(0);
    let r = streams.len() as f64;
    (0..len)
        .map(|k| {
            let mean = |f: fn(&MetricsRecord) -> f64| streams.iter().map(|s| f(&s[k])).sum::<f64>() / r;
            MetricsRecord {
                k: first[k].k,
                consensus_err: mean(|m| m.consensus_err),
                opt_gap_raw: mean(|m| m.opt_gap_raw),
                opt_gap_scaled: mean(|m| m.opt_gap_scaled),
                tracking_err: mean(|m| m.tracking_err),
                u_inf_q: mean(|m| m.u_inf_q),
                grad_evals_cumulative: first[k].grad_evals_cumulative,
            }
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedEcho {
    pub alpha: f64,
    pub period: usize,
    pub batch_sizes: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub non_sampling_rate: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma: f64,
    pub m1: f64,
    pub m2: f64,
    pub hessian: HessianStrategy,
    pub seeds: Vec<u64>,
    pub f_star: f64,
    pub reference_grad_norm: f64,
}

impl ResolvedEcho {
    fn new(r: &Resolved) -> Self {
        ResolvedEcho {
            alpha: r.engine.alpha,
            period: r.engine.period,
            batch_sizes: r.engine.batch_sizes.clone(),
            sample_counts: r.problem.sample_counts(),
            non_sampling_rate: r.params.b_rate,
            l: r.params.l,
            mu: r.params.mu,
            sigma: r.params.sigma,
            m1: r.params.m1,
            m2: r.params.m2,
            hessian: r.engine.hessian.clone(),
            seeds: r.seeds.clone(),
            f_star: r.reference.f_star,
            reference_grad_norm: r.reference.grad_norm_at_star,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub max_tracking_defect: f64,
    pub final_opt_gap: f64,
    pub final_consensus_err: f64,
    pub metrics_file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub library_version: &'static str,
    pub config: ExperimentConfig,
    pub resolved: ResolvedEcho,
    pub gate: GateReport,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub gate: GateReport,
    pub certificate: Certificate,
    pub runs: Vec<RunSummary>,
    /// `metrics.csv` contents: the single run, or the replication average.
    pub metrics: Vec<MetricsRecord>,
}

fn engine_for_seed(base: &EngineConfig, seed: u64) -> EngineConfig {
    EngineConfig { seed, ..base.clone() }
}

fn write_hessian_csv(path: &Path, out: &engine::RunOutput) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wtr.write_record(["k", "node", "lambda_min", "lambda_max"])?;
    for e in &out.transcript.entries {
        for s in e.hessian.iter().flatten() {
            wtr.write_record([e.k.to_string(), s.node.to_string(), s.lambda_min.to_string(), s.lambda_max.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Resolves `cfg`, applies the gate and executes every replication. In
/// strict mode a failed gate returns [`Error::GateFailed`] before anything
/// runs or is written.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path) -> Result<ExperimentReport> {
    let resolved = cfg.resolve()?;
    let gate = check_theorem1(&resolved.params);
    if cfg.run.strict_gate && !gate.passed {
        return Err(Error::GateFailed(gate.summary()));
    }
    let certificate = evaluate_certificate(&resolved.params);
    fs::create_dir_all(output_dir)?;

    let outputs: Vec<(u64, engine::RunOutput)> = resolved
        .seeds
        .par_iter()
        .map(|&seed| {
            let ec = engine_for_seed(&resolved.engine, seed);
            engine::run(&resolved.problem, &resolved.mixing, &ec, &resolved.reference).map(|o| (seed, o))
        })
        .collect::<Result<_>>()?;

    let replicated = outputs.len() > 1;
    let mut runs = Vec::with_capacity(outputs.len());
    for (seed, out) in &outputs {
        let file = if replicated { metrics_file_for_seed(*seed) } else { METRICS_FILE.to_string() };
        write_metrics_csv(&output_dir.join(&file), &out.metrics)?;
        if cfg.run.log_hessian {
            let name = if replicated { format!("hessian_spectrum_seed{seed}.csv") } else { HESSIAN_FILE.to_string() };
            write_hessian_csv(&output_dir.join(name), out)?;
        }
        let last = out.metrics.last().expect("a run records at least k = 0");
        runs.push(RunSummary {
            seed: *seed,
            iterations_run: last.k,
            stopped_early: out.stopped_early,
            max_tracking_defect: out.max_tracking_defect,
            final_opt_gap: last.opt_gap_raw,
            final_consensus_err: last.consensus_err,
            metrics_file: file,
        });
    }
    let metrics = if replicated {
        let streams: Vec<Vec<MetricsRecord>> = outputs.iter().map(|(_, o)| o.metrics.clone()).collect();
        let avg = average_metrics(&streams);
        write_metrics_csv(&output_dir.join(METRICS_FILE), &avg)?;
        avg
    } else {
        outputs.into_iter().next().map(|(_, o)| o.metrics).unwrap_or_default()
    };

    write_json(&output_dir.join(CERTIFICATE_FILE), &certificate)?;
    let meta = Metadata {
        library_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        resolved: ResolvedEcho::new(&resolved),
        gate: gate.clone(),
        runs: runs.clone(),
    };
    write_json(&output_dir.join(METADATA_FILE), &meta)?;
    Ok(ExperimentReport { output_dir: output_dir.to_path_buf(), gate, certificate, runs, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The configured engine.
    Framework,
    /// The engine with `H = I`.
    GtSvrg,
    Dgd,
    GradientTracking,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Framework, Method::GtSvrg, Method::Dgd, Method::GradientTracking];

    pub fn name(self) -> &'static str {
        match self {
            Method::Framework => "framework",
            Method::GtSvrg => "gt_svrg",
            Method::Dgd => "dgd",
            Method::GradientTracking => "gradient_tracking",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected framework, gt_svrg, dgd or gradient_tracking)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub k: usize,
    pub consensus_err: f64,
    pub opt_gap_raw: f64,
    pub opt_gap_scaled: f64,
    pub tracking_err: f64,
    pub u_inf_q: f64,
    pub grad_evals_cumulative: u64,
}

impl CompareRow {
    fn new(method: Method, r: &MetricsRecord) -> Self {
        CompareRow {
            method,
            k: r.k,
            consensus_err: r.consensus_err,
            opt_gap_raw: r.opt_gap_raw,
            opt_gap_scaled: r.opt_gap_scaled,
            tracking_err: r.tracking_err,
            u_inf_q: r.u_inf_q,
            grad_evals_cumulative: r.grad_evals_cumulative,
        }
    }
}

/// Metric stream of one method on the first configured seed.
pub fn run_method(method: Method, resolved: &Resolved) -> Result<Vec<MetricsRecord>> {
    let seed = resolved.seeds.first().copied().unwrap_or(resolved.engine.seed);
    let ec = engine_for_seed(&resolved.engine, seed);
    let ctx = MetricContext { reference: resolved.reference.clone(), sigma: resolved.mixing.sigma(), q: resolved.params.q() };
    let baseline = BaselineConfig {
        alpha: ec.alpha,
        iterations: ec.iterations,
        init: ec.init.clone(),
        seed,
        stop_tolerance: ec.stop_tolerance,
        record_states: false,
    };
    let (p, w) = (&resolved.problem, &resolved.mixing);
    Ok(match method {
        Method::Framework => engine::run(p, w, &ec, &resolved.reference)?.metrics,
        Method::GtSvrg => {
            let ec = EngineConfig { hessian: HessianStrategy::Identity, ..ec };
            engine::run(p, w, &ec, &resolved.reference)?.metrics
        }
        Method::Dgd => run_dgd(p, w, &baseline, &ctx)?.metrics,
        Method::GradientTracking => run_gradient_tracking(p, w, &baseline, &ctx)?.metrics,
    })
}

/// Runs each method and writes one long-format CSV with a `method` column.
pub fn compare(methods: &[Method], cfg: &ExperimentConfig, output_dir: &Path) -> Result<Vec<CompareRow>> {
    if methods.is_empty() {
        return Err(Error::Config("compare needs at least one method".into()));
    }
    let resolved = cfg.resolve()?;
    let gate = check_theorem1(&resolved.params);
    if cfg.run.strict_gate && !gate.passed {
        return Err(Error::GateFailed(gate.summary()));
    }
    let streams: Vec<Vec<MetricsRecord>> = methods.par_iter().map(|&m| run_method(m, &resolved)).collect::<Result<_>>()?;
    let rows: Vec<CompareRow> = methods
        .iter()
        .zip(&streams)
        .flat_map(|(&m, s)| s.iter().map(move |r| CompareRow::new(m, r)))
        .collect();
    fs::create_dir_all(output_dir)?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(output_dir.join(COMPARE_FILE))?));
    for r in &rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub d: usize,
    pub sample_counts: Vec<usize>,
    pub edges: usize,
    pub assumption3: Assumption3Report,
    pub sigma: f64,
    pub l: f64,
    pub mu: f64,
    pub f_star: f64,
    pub reference_grad_norm: f64,
    pub gate: GateReport,
    pub passed: bool,
}

/// Topology and problem checks without running the algorithm.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let resolved = cfg.resolve()?;
    let w = &resolved.mixing;
    let assumption3 = validate_assumption3(w.weights(), Some(w.graph()));
    let gate = check_theorem1(&resolved.params);
    Ok(ValidationReport {
        n: resolved.problem.n(),
        d: resolved.problem.d(),
        sample_counts: resolved.problem.sample_counts(),
        edges: w.graph().edge_count(),
        passed: assumption3.passed(),
        assumption3,
        sigma: w.sigma(),
        l: resolved.params.l,
        mu: resolved.params.mu,
        f_star: resolved.reference.f_star,
        reference_grad_norm: resolved.reference.grad_norm_at_star,
        gate,
    })
}

/// Certificate for the parameters a config resolves to.
pub fn certify(cfg: &ExperimentConfig) -> Result<Certificate> {
    Ok(evaluate_certificate(&cfg.resolve()?.params))
}
