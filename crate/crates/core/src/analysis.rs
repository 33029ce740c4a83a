//! Error vector `u^k`, parameter gates and numerical rate certificates.
//!
//! The rate argument bounds the per-iteration growth of
//! `u^k = (consensus error, scaled optimality gap, scaled tracking error)`
//! by nonnegative 3×3 matrices `J` and `H`. A configuration is certified when
//!
//! 1. `J z ≤ (1 − ζα̃/2) z` entrywise,
//! 2. `det(I − J) ≥ (1 − σ²)² ζ α̃ / 6`,
//! 3. `(I − J)⁻¹ H q ≤ 0.8 q` entrywise,
//! 4. `28/(ζ(1−σ²)²) · exp(−ζα̃T/2) + 0.8 ≤ 0.9`,
//!
//! which together give `‖u^{(t+1)T}‖∞^q ≤ 0.9 ‖u^{tT}‖∞^q` per epoch.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{FiniteSumProblem, ReferenceOptimum};

/// Every numeric constant of the rate argument, in one place.
pub mod constants {
    /// `α ≤ (1−σ²)² μ M1 / (200 L² M2²)`
    pub const STEP_DENOMINATOR: f64 = 200.0;
    /// `B ≤ min{1, ζ(1−σ²)²/γ²} / 160`
    pub const SAMPLING_DENOMINATOR: f64 = 160.0;
    /// `T ≥ 2 ln(280 / (ζ(1−σ²)²)) / (ζ α̃)`
    pub const PERIOD_LOG_NUMERATOR: f64 = 280.0;
    /// `β = 16 B`
    pub const BETA_PER_RATE: f64 = 16.0;
    /// `c = 0.162 (1−σ²) α̃ ζ + 2.01 β`
    pub const C_STEP: f64 = 0.162;
    pub const C_BETA: f64 = 2.01;

    /// Diagonal contraction `1 − 0.99 (1−σ²) / 2` of rows 1 and 3.
    pub const J_MIX_DIAG: f64 = 0.99;
    pub const J12: f64 = 0.011;
    pub const J13: f64 = 0.02;
    pub const J21: f64 = 4.1;
    /// `J22 = 1 − 0.96 ζ α̃`
    pub const J22: f64 = 0.96;
    pub const J23: f64 = 0.51;
    pub const J31: f64 = 33.0;

    pub const H_ROW1: f64 = 0.01;
    pub const H_ROW2: f64 = 0.03;
    pub const H_ROW3: f64 = 2.03;

    /// `z2 = 10/ζ + 1.2 γ² z3 / (ζ(1−σ²))`, `z3 = 200 (ζ+β) / (ζ(1−σ²))`
    pub const Z2_CONST: f64 = 10.0;
    pub const Z2_GAMMA: f64 = 1.2;
    pub const Z3_SCALE: f64 = 200.0;
    /// `q = [1; 10; 200 (ζ+β) / (1−σ²)]`
    pub const Q2: f64 = 10.0;
    pub const Q3_SCALE: f64 = 200.0;

    pub const DET_DIVISOR: f64 = 6.0;
    pub const SPECTRAL_BOUND: f64 = 0.8;
    pub const EPOCH_FACTOR_NUMERATOR: f64 = 28.0;
    pub const EPOCH_RATE: f64 = 0.9;
}

use constants::*;

/// Weighted infinity norm `max_i |a_i| / w_i`.
pub fn weighted_inf_norm(a: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(w).map(|(a, w)| a.abs() / w).fold(0.0, f64::max)
}

fn check_constants(l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> Result<()> {
    if !(l > 0.0 && mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < μ <= L < inf, got μ = {mu}, L = {l}")));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidParameter(format!("need σ in [0, 1), got {sigma}")));
    }
    if !(m1 > 0.0 && m1 <= m2 && m2.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < M1 <= M2 < inf, got M1 = {m1}, M2 = {m2}")));
    }
    Ok(())
}

/// Largest admissible constant step size.
pub fn max_step_size(l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> Result<f64> {
    check_constants(l, mu, sigma, m1, m2)?;
    let gap = 1.0 - sigma * sigma;
    Ok(gap * gap * mu * m1 / (STEP_DENOMINATOR * l * l * m2 * m2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    pub alpha: f64,
    pub period: f64,
    pub b_rate: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma: f64,
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    pub kappa_f: f64,
    pub kappa_h: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub alpha_tilde: f64,
    pub beta: f64,
    pub c: f64,
}

impl TheoryParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(alpha: f64, period: f64, b_rate: f64, l: f64, mu: f64, sigma: f64, m1: f64, m2: f64) -> Result<Self> {
        check_constants(l, mu, sigma, m1, m2)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {alpha}")));
        }
        if !(period >= 1.0) {
            return Err(Error::InvalidParameter(format!("period must be at least 1, got {period}")));
        }
        if !(b_rate >= 0.0 && b_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-sampling rate must be nonnegative, got {b_rate}")));
        }
        Ok(TheoryParams { alpha, period, b_rate, l, mu, sigma, m1, m2 })
    }

    /// `1 − σ²`
    pub fn mixing_gap(&self) -> f64 {
        1.0 - self.sigma * self.sigma
    }

    pub fn kappa_f(&self) -> f64 {
        self.l / self.mu
    }

    pub fn kappa_h(&self) -> f64 {
        self.m2 / self.m1
    }

    /// `ζ = (μ/L)² (M1/M2)²`
    pub fn zeta(&self) -> f64 {
        let r = (self.mu / self.l) * (self.m1 / self.m2);
        r * r
    }

    /// `γ = 1 − M1/M2`
    pub fn gamma(&self) -> f64 {
        1.0 - self.m1 / self.m2
    }

    /// `α̃ = M2² L² α / (M1 μ)`
    pub fn alpha_tilde(&self) -> f64 {
        self.m2 * self.m2 * self.l * self.l / (self.m1 * self.mu) * self.alpha
    }

    pub fn beta(&self) -> f64 {
        BETA_PER_RATE * self.b_rate
    }

    pub fn c(&self) -> f64 {
        C_STEP * self.mixing_gap() * self.alpha_tilde() * self.zeta() + C_BETA * self.beta()
    }

    pub fn derived(&self) -> DerivedParams {
        DerivedParams {
            kappa_f: self.kappa_f(),
            kappa_h: self.kappa_h(),
            zeta: self.zeta(),
            gamma: self.gamma(),
            alpha_tilde: self.alpha_tilde(),
            beta: self.beta(),
            c: self.c(),
        }
    }

    pub fn max_step_size(&self) -> f64 {
        let g = self.mixing_gap();
        g * g * self.mu * self.m1 / (STEP_DENOMINATOR * self.l * self.l * self.m2 * self.m2)
    }

    /// `min{1, ζ(1−σ²)²/γ²} / 160`, with the ratio taken as `+∞` when `γ = 0`.
    pub fn max_sampling_rate(&self) -> f64 {
        let g = self.mixing_gap();
        let gamma = self.gamma();
        let ratio = if gamma == 0.0 { f64::INFINITY } else { self.zeta() * g * g / (gamma * gamma) };
        ratio.min(1.0) / SAMPLING_DENOMINATOR
    }

    /// Real-valued lower bound on the snapshot period.
    pub fn min_period(&self) -> f64 {
        let g = self.mixing_gap();
        let zeta = self.zeta();
        2.0 * (PERIOD_LOG_NUMERATOR / (zeta * g * g)).ln() / (zeta * self.alpha_tilde())
    }

    /// Smallest integer period meeting [`min_period`](Self::min_period).
    pub fn min_period_ceil(&self) -> u64 {
        self.min_period().ceil() as u64
    }

    /// `q = [1; 10; 200 (ζ+β)/(1−σ²)]`
    pub fn q(&self) -> Vector3<f64> {
        Vector3::new(1.0, Q2, Q3_SCALE * (self.zeta() + self.beta()) / self.mixing_gap())
    }

    /// `z = [1; z2; z3]`
    pub fn z(&self) -> Vector3<f64> {
        let g = self.mixing_gap();
        let zeta = self.zeta();
        let gamma = self.gamma();
        let z3 = Z3_SCALE * (zeta + self.beta()) / (zeta * g);
        let z2 = Z2_CONST / zeta + Z2_GAMMA * gamma * gamma * z3 / (zeta * g);
        Vector3::new(1.0, z2, z3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    /// `"<="` or `">="`
    pub relation: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub step_size: Condition,
    pub sampling_rate: Condition,
    pub period: Condition,
    pub passed: bool,
}

impl GateReport {
    pub fn failures(&self) -> Vec<&Condition> {
        [&self.step_size, &self.sampling_rate, &self.period].into_iter().filter(|c| !c.passed).collect()
    }

    pub fn summary(&self) -> String {
        let fails: Vec<String> = self
            .failures()
            .iter()
            .map(|c| format!("{} = {:e} violates {} {:e}", c.name, c.value, c.relation, c.bound))
            .collect();
        if fails.is_empty() {
            "all conditions hold".into()
        } else {
            fails.join("; ")
        }
    }
}

/// Checks the step-size, sampling-rate and period conditions for linear
/// convergence.
pub fn check_theorem1(p: &TheoryParams) -> GateReport {
    let a_max = p.max_step_size();
    let b_max = p.max_sampling_rate();
    let t_min = p.min_period();
    let step_size = Condition { name: "alpha", value: p.alpha, bound: a_max, relation: "<=", passed: p.alpha <= a_max };
    let sampling_rate =
        Condition { name: "B", value: p.b_rate, bound: b_max, relation: "<=", passed: p.b_rate <= b_max };
    let period = Condition { name: "T", value: p.period, bound: t_min, relation: ">=", passed: p.period >= t_min };
    let passed = step_size.passed && sampling_rate.passed && period.passed;
    GateReport { step_size, sampling_rate, period, passed }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionSystem {
    pub j: Matrix3<f64>,
    /// `I − J`, assembled entry by entry so the small diagonal gaps carry no
    /// cancellation error.
    pub i_minus_j: Matrix3<f64>,
    pub h: Matrix3<f64>,
    pub z: Vector3<f64>,
    pub q: Vector3<f64>,
}

/// Builds `J`, `H`, `z` and `q` for the given parameters.
pub fn contraction_matrices(p: &TheoryParams) -> ContractionSystem {
    let g = p.mixing_gap();
    let zeta = p.zeta();
    let gamma2 = p.gamma() * p.gamma();
    let at = p.alpha_tilde();
    let beta = p.beta();
    let c = p.c();

    let mix = J_MIX_DIAG * g / 2.0;
    let j12 = J12 * g * zeta * at * gamma2;
    let j13 = J13 * zeta * at;
    let j21 = J21 * at;
    let j22_gap = J22 * zeta * at;
    let j23 = J23 * at * gamma2 / g;

    let j = Matrix3::new(
        1.0 - mix, j12, j13, //
        j21, 1.0 - j22_gap, j23, //
        J31, c, 1.0 - mix,
    );
    let i_minus_j = Matrix3::new(
        mix, -j12, -j13, //
        -j21, j22_gap, -j23, //
        -J31, -c, mix,
    );
    let h1 = H_ROW1 * at * beta * gamma2 * g;
    let h2 = H_ROW2 * at * zeta * g * g;
    let h3 = H_ROW3 * beta;
    let h = Matrix3::new(
        h1, h1, 0.0, //
        h2, h2, 0.0, //
        h3, h3, 0.0,
    );
    ContractionSystem { j, i_minus_j, h, z: p.z(), q: p.q() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Value minus bound; nonpositive when the check holds.
    pub margin: f64,
    pub violated_entry: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub params: TheoryParams,
    pub derived: DerivedParams,
    pub gate: GateReport,
    pub checks: Vec<CheckResult>,
    /// `‖J‖∞^z`
    pub j_weighted_norm: f64,
    pub det_i_minus_j: f64,
    pub det_bound: f64,
    /// `‖(I − J)⁻¹ H‖∞^q`, an upper bound on its spectral radius.
    pub resolvent_weighted_norm: f64,
    pub epoch_factor: f64,
    pub passed: bool,
}

pub const CHECK_J_CONTRACTION: &str = "J z <= (1 - zeta*alpha_tilde/2) z";
pub const CHECK_DETERMINANT: &str = "det(I - J) >= (1-sigma^2)^2 zeta alpha_tilde / 6";
pub const CHECK_RESOLVENT: &str = "(I - J)^-1 H q <= 0.8 q";
pub const CHECK_EPOCH: &str = "28/(zeta(1-sigma^2)^2) exp(-zeta alpha_tilde T / 2) + 0.8 <= 0.9";

/// Evaluates all four certificate checks regardless of the gate outcome.
pub fn evaluate_certificate(p: &TheoryParams) -> Certificate {
    let sys = contraction_matrices(p);
    let g = p.mixing_gap();
    let zeta = p.zeta();
    let at = p.alpha_tilde();
    let shrink = zeta * at / 2.0;

    // (J − I) z + (ζα̃/2) z ≤ 0, row by row
    let lhs = -(sys.i_minus_j * sys.z) + sys.z * shrink;
    let (row, worst) = argmax(lhs.iter().zip(sys.z.iter()).map(|(v, z)| v / z));
    let j_norm = (0..3).map(|i| (sys.j.row(i) * sys.z)[0] / sys.z[i]).fold(0.0, f64::max);
    let check1 = CheckResult {
        name: CHECK_J_CONTRACTION,
        passed: lhs.iter().all(|&v| v <= 0.0),
        margin: worst,
        violated_entry: (worst > 0.0).then(|| format!("row {}: (J z)_i / z_i exceeds 1 - {shrink:e}", row + 1)),
    };

    let det = sys.i_minus_j.determinant();
    let det_bound = g * g * zeta * at / DET_DIVISOR;
    let check2 = CheckResult {
        name: CHECK_DETERMINANT,
        passed: det >= det_bound,
        margin: det_bound - det,
        violated_entry: (det < det_bound).then(|| format!("det = {det:e} < {det_bound:e}")),
    };

    let hq = sys.h * sys.q;
    let (check3, resolvent_norm) = match sys.i_minus_j.lu().solve(&hq) {
        Some(y) => {
            let ratios: Vec<f64> = y.iter().zip(sys.q.iter()).map(|(y, q)| y / q).collect();
            let (row, worst) = argmax(ratios.iter().copied());
            let ok = y.iter().zip(sys.q.iter()).all(|(y, q)| *y <= SPECTRAL_BOUND * q);
            (
                CheckResult {
                    name: CHECK_RESOLVENT,
                    passed: ok,
                    margin: worst - SPECTRAL_BOUND,
                    violated_entry: (!ok).then(|| format!("row {}: ratio {worst:e} > {SPECTRAL_BOUND}", row + 1)),
                },
                worst.max(0.0),
            )
        }
        None => (
            CheckResult {
                name: CHECK_RESOLVENT,
                passed: false,
                margin: f64::INFINITY,
                violated_entry: Some("I - J is singular".into()),
            },
            f64::INFINITY,
        ),
    };

    let epoch_factor = EPOCH_FACTOR_NUMERATOR / (zeta * g * g) * (-zeta * at * p.period / 2.0).exp() + SPECTRAL_BOUND;
    let check4 = CheckResult {
        name: CHECK_EPOCH,
        passed: epoch_factor <= EPOCH_RATE,
        margin: epoch_factor - EPOCH_RATE,
        violated_entry: (epoch_factor > EPOCH_RATE).then(|| format!("epoch factor {epoch_factor} > {EPOCH_RATE}")),
    };

    let checks = vec![check1, check2, check3, check4];
    let passed = checks.iter().all(|c| c.passed);
    Certificate {
        params: *p,
        derived: p.derived(),
        gate: check_theorem1(p),
        checks,
        j_weighted_norm: j_norm,
        det_i_minus_j: det,
        det_bound,
        resolvent_weighted_norm: resolvent_norm,
        epoch_factor,
        passed,
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values.enumerate().fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

/// Certificate for a gate-passing configuration. A failing check under a
/// passing gate is a discrepancy between the implementation and the rate
/// argument and is returned as an error.
pub fn certify_rate(p: &TheoryParams) -> Result<Certificate> {
    let gate = check_theorem1(p);
    if !gate.passed {
        return Err(Error::GateFailed(gate.summary()));
    }
    let cert = evaluate_certificate(p);
    if let Some(c) = cert.checks.iter().find(|c| !c.passed) {
        return Err(Error::TheoryDiscrepancy {
            check: c.name,
            detail: c.violated_entry.clone().unwrap_or_default(),
        });
    }
    Ok(cert)
}

/// Realized (single trajectory) value of `u^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorVector {
    /// `‖x − W∞x‖²`
    pub consensus_err: f64,
    /// `F(x̄) − F*`
    pub opt_gap_raw: f64,
    /// `(2n/L)(F(x̄) − F*)`
    pub opt_gap_scaled: f64,
    /// `((1−σ²)/L²) ‖g − W∞g‖²`
    pub tracking_err: f64,
}

impl ErrorVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.consensus_err, self.opt_gap_scaled, self.tracking_err]
    }
}

pub fn mean_vector(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(vs[0].len());
    for v in vs {
        m += v;
    }
    m / vs.len() as f64
}

/// Sum of squared deviations from the network average, `‖v − W∞v‖²`.
pub fn dispersion(vs: &[DVector<f64>]) -> f64 {
    let m = mean_vector(vs);
    vs.iter().map(|v| (v - &m).norm_squared()).sum()
}

/// `u^k` from stacked iterates `xs` and trackers `gs`. The optimality gap is
/// clamped at zero since `F*` is the true minimum up to rounding.
pub fn error_vector(
    xs: &[DVector<f64>],
    gs: &[DVector<f64>],
    problem: &FiniteSumProblem,
    reference: &ReferenceOptimum,
    sigma: f64,
) -> Result<ErrorVector> {
    let n = problem.n();
    if xs.len() != n || gs.len() != n {
        return Err(Error::DimensionMismatch(format!("{} iterates and {} trackers for {n} nodes", xs.len(), gs.len())));
    }
    let (l, _) = problem.smoothness_constants();
    let xbar = mean_vector(xs);
    let gap = (problem.global_objective(&xbar)? - reference.f_star).max(0.0);
    Ok(ErrorVector {
        consensus_err: dispersion(xs),
        opt_gap_raw: gap,
        opt_gap_scaled: 2.0 * n as f64 / l * gap,
        tracking_err: (1.0 - sigma * sigma) / (l * l) * dispersion(gs),
    })
}

/// One row of the metric stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub k: usize,
    pub consensus_err: f64,
    pub opt_gap_raw: f64,
    pub opt_gap_scaled: f64,
    pub tracking_err: f64,
    pub u_inf_q: f64,
    pub grad_evals_cumulative: u64,
}

impl MetricsRecord {
    pub fn u(&self) -> [f64; 3] {
        [self.consensus_err, self.opt_gap_scaled, self.tracking_err]
    }
}

/// Everything needed to turn network states into [`MetricsRecord`]s.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub reference: ReferenceOptimum,
    pub sigma: f64,
    pub q: Vector3<f64>,
}

impl MetricContext {
    pub fn record(
        &self,
        problem: &FiniteSumProblem,
        k: usize,
        xs: &[DVector<f64>],
        gs: &[DVector<f64>],
        grad_evals: u64,
    ) -> Result<MetricsRecord> {
        let u = error_vector(xs, gs, problem, &self.reference, self.sigma)?;
        Ok(MetricsRecord {
            k,
            consensus_err: u.consensus_err,
            opt_gap_raw: u.opt_gap_raw,
            opt_gap_scaled: u.opt_gap_scaled,
            tracking_err: u.tracking_err,
            u_inf_q: weighted_inf_norm(&u.as_array(), self.q.as_slice()),
            grad_evals_cumulative: grad_evals,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EpochRatio {
    Ratio(f64),
    /// Both ends of the epoch are exactly zero.
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub ratios: Vec<EpochRatio>,
    /// Epoch indices whose ratio exceeds the threshold.
    pub flagged: Vec<usize>,
    pub threshold: f64,
}

/// `‖u^{(t+1)T}‖∞^q / ‖u^{tT}‖∞^q` for every complete epoch in `stream`,
/// where `stream[k]` is `u^k`.
pub fn epoch_contraction(stream: &[[f64; 3]], period: usize, q: &[f64; 3], threshold: f64) -> Result<EpochReport> {
    if period == 0 {
        return Err(Error::InvalidParameter("period must be positive".into()));
    }
    if stream.len() < 2 * period + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least two epochs (2T + 1 = {} records), got {}",
            2 * period + 1,
            stream.len()
        )));
    }
    let norms: Vec<f64> = stream.iter().step_by(period).map(|u| weighted_inf_norm(u, q)).collect();
    let ratios: Vec<EpochRatio> = norms
        .windows(2)
        .map(|w| {
            if w[0] == 0.0 && w[1] == 0.0 {
                EpochRatio::Converged
            } else {
                EpochRatio::Ratio(w[1] / w[0])
            }
        })
        .collect();
    let flagged = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, EpochRatio::Ratio(v) if !(*v <= threshold)))
        .map(|(t, _)| t)
        .collect();
    Ok(EpochReport { ratios, flagged, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha_tilde: f64, period: f64) -> TheoryParams {
        // L = μ = M1 = M2 = 1 makes α̃ = α and ζ = 1
        TheoryParams::new(alpha_tilde, period, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn step_size_examples() {
        assert!((max_step_size(1.0, 1.0, 0.0, 1.0, 1.0).unwrap() - 0.005).abs() < 1e-18);
        let base = max_step_size(4.0, 0.5, 0.3, 0.2, 1.0).unwrap();
        let doubled = max_step_size(4.0, 0.5, 0.3, 0.2, 2.0).unwrap();
        assert!((base / doubled - 4.0).abs() < 1e-12);
        let near_one = max_step_size(1.0, 1.0, 0.999_999, 1.0, 1.0).unwrap();
        assert!(near_one < 1e-13);
        assert!(max_step_size(1.0, 2.0, 0.0, 1.0, 1.0).is_err());
        assert!(max_step_size(1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn period_floor_example() {
        let p = params(1.0 / 200.0, 1.0);
        let t = p.min_period();
        assert!((t - 400.0 * 280f64.ln()).abs() < 1e-9);
        assert_eq!(p.min_period_ceil(), 2254);
    }

    #[test]
    fn gate_examples() {
        let p = params(1.0 / 200.0, 2254.0);
        let gate = check_theorem1(&p);
        assert!(gate.passed, "{}", gate.summary());
        assert_eq!(gate.sampling_rate.bound, 1.0 / 160.0);

        let bad = params(2.0 / 200.0, 1e9);
        let gate = check_theorem1(&bad);
        assert!(!gate.step_size.passed);
        assert!(gate.period.passed);

        let short = params(1.0 / 200.0, 2253.0);
        assert!(!check_theorem1(&short).period.passed);
    }

    #[test]
    fn sampling_bound_with_curvature_spread() {
        let p = TheoryParams::new(1e-6, 1e9, 0.0, 1.0, 0.5, 0.5, 1.0, 2.0).unwrap();
        let g = 0.75;
        let expect = (p.zeta() * g * g / 0.25f64).min(1.0) / 160.0;
        assert!((p.max_sampling_rate() - expect).abs() < 1e-18);
    }

    #[test]
    fn entries_as_defined() {
        let p = TheoryParams::new(1e-5, 1e9, 1e-4, 2.0, 0.5, 0.4, 0.5, 2.0).unwrap();
        let s = contraction_matrices(&p);
        let (zeta, at, g) = (p.zeta(), p.alpha_tilde(), p.mixing_gap());
        assert_eq!(s.j[(0, 2)], 0.02 * zeta * at);
        assert_eq!(s.j[(2, 0)], 33.0);
        assert_eq!(s.j[(2, 1)], p.c());
        assert!((s.j[(0, 0)] - (1.0 - 0.99 * g / 2.0)).abs() < 1e-15);
        assert_eq!(s.h[(2, 0)], 2.03 * p.beta());
        assert_eq!(s.h.column(2).amax(), 0.0);
        let recon = s.j + s.i_minus_j;
        assert!((recon - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn deterministic_h_rows() {
        let p = TheoryParams::new(1e-5, 1e9, 0.0, 2.0, 0.5, 0.4, 0.5, 2.0).unwrap();
        let s = contraction_matrices(&p);
        assert!(s.h.row(0).iter().all(|&v| v == 0.0));
        assert!(s.h.row(2).iter().all(|&v| v == 0.0));
        assert!(s.h[(1, 0)] > 0.0);
    }

    #[test]
    fn certificate_at_reference_point() {
        let cert = certify_rate(&params(1.0 / 200.0, 2254.0)).unwrap();
        assert!(cert.passed);
        assert!(cert.epoch_factor <= 0.9);
        assert!(cert.j_weighted_norm <= 1.0 - 1.0 / 400.0);
    }

    #[test]
    fn short_period_fails_epoch_check() {
        let cert = evaluate_certificate(&params(1.0 / 200.0, 2000.0));
        assert!(cert.checks[0].passed && cert.checks[1].passed && cert.checks[2].passed);
        assert!(!cert.checks[3].passed);
        assert!(matches!(certify_rate(&params(1.0 / 200.0, 2000.0)), Err(Error::GateFailed(_))));
    }

    #[test]
    fn weighted_norm_example() {
        assert_eq!(weighted_inf_norm(&[2.0, 3.0, 0.0], &[1.0, 3.0, 1.0]), 2.0);
    }

    #[test]
    fn geometric_stream_ratios() {
        let u0 = [1.0, 2.0, 3.0];
        let stream: Vec<[f64; 3]> = (0..=50).map(|k| u0.map(|v| v * 0.99f64.powi(k))).collect();
        let rep = epoch_contraction(&stream, 10, &[1.0, 10.0, 5.0], 0.9).unwrap();
        assert_eq!(rep.ratios.len(), 5);
        for r in &rep.ratios {
            match r {
                EpochRatio::Ratio(v) => assert!((v - 0.99f64.powi(10)).abs() < 1e-12),
                _ => panic!(),
            }
        }
        assert_eq!(rep.flagged, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stationary_stream_is_converged() {
        let stream = vec![[0.0; 3]; 21];
        let rep = epoch_contraction(&stream, 10, &[1.0, 1.0, 1.0], 0.9).unwrap();
        assert_eq!(rep.ratios, vec![EpochRatio::Converged; 2]);
        assert!(rep.flagged.is_empty());
        assert!(epoch_contraction(&stream[..20], 10, &[1.0; 3], 0.9).is_err());
    }
}
