//! Local Hessian-inverse approximations with enforced eigenvalue bounds
//! `M1·I ⪯ H ⪯ M2·I`.
//!
//! A strategy only ever sees its own node's iterates `x_i` and tracked
//! gradients `g_i`. New constructions plug in by implementing
//! [`HessianApprox`]; the engine checks every produced matrix against the
//! strategy's bounds.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance of [`verify_assumption4`].
pub const BOUND_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

pub const DEFAULT_M1: f64 = 0.1;
pub const DEFAULT_M2: f64 = 10.0;

pub trait HessianApprox: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// `(M1, M2)` this strategy guarantees.
    fn bounds(&self) -> (f64, f64);

    /// Seeds the strategy with the node's initial pair `(x⁰, g⁰)`.
    fn reset(&mut self, x: &DVector<f64>, g: &DVector<f64>);

    /// Builds `H` from the node's newest `(x, g)`.
    fn update(&mut self, x: &DVector<f64>, g: &DVector<f64>) -> &DMatrix<f64>;

    fn matrix(&self) -> &DMatrix<f64>;

    /// `H g`
    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        self.matrix() * g
    }

    fn box_clone(&self) -> Box<dyn HessianApprox>;
}

impl Clone for Box<dyn HessianApprox> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    h: DMatrix<f64>,
}

impl Identity {
    pub fn new(d: usize) -> Self {
        Identity { h: DMatrix::identity(d, d) }
    }
}

impl HessianApprox for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn bounds(&self) -> (f64, f64) {
        (1.0, 1.0)
    }

    fn reset(&mut self, _x: &DVector<f64>, _g: &DVector<f64>) {}

    fn update(&mut self, _x: &DVector<f64>, _g: &DVector<f64>) -> &DMatrix<f64> {
        &self.h
    }

    fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        g.clone()
    }

    fn box_clone(&self) -> Box<dyn HessianApprox> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledIdentity {
    scale: f64,
    h: DMatrix<f64>,
}

impl ScaledIdentity {
    pub fn new(d: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scaled identity needs a positive finite scale, got {scale}")));
        }
        Ok(ScaledIdentity { scale, h: DMatrix::identity(d, d) * scale })
    }
}

impl HessianApprox for ScaledIdentity {
    fn name(&self) -> &'static str {
        "scaled_identity"
    }

    fn bounds(&self) -> (f64, f64) {
        (self.scale, self.scale)
    }

    fn reset(&mut self, _x: &DVector<f64>, _g: &DVector<f64>) {}

    fn update(&mut self, _x: &DVector<f64>, _g: &DVector<f64>) -> &DMatrix<f64> {
        &self.h
    }

    fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        g * self.scale
    }

    fn box_clone(&self) -> Box<dyn HessianApprox> {
        Box::new(self.clone())
    }
}

/// Inverse-BFGS secant update from consecutive `(x_i, g_i)` pairs, followed
/// by eigenvalue clipping into `[M1, M2]`. Pairs with `sᵀy` not safely
/// positive leave `H` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedSecant {
    m1: f64,
    m2: f64,
    h: DMatrix<f64>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
}

impl ClippedSecant {
    /// Relative curvature threshold `sᵀy > ε ‖s‖ ‖y‖`.
    pub const CURVATURE_EPS: f64 = 1e-8;

    pub fn new(d: usize, m1: f64, m2: f64) -> Result<Self> {
        check_bounds(m1, m2)?;
        let h = initial_matrix(d, m1, m2);
        Ok(ClippedSecant { m1, m2, h, prev: None })
    }
}

fn initial_matrix(d: usize, m1: f64, m2: f64) -> DMatrix<f64> {
    DMatrix::identity(d, d) * 1.0_f64.clamp(m1, m2)
}

impl HessianApprox for ClippedSecant {
    fn name(&self) -> &'static str {
        "clipped_secant"
    }

    fn bounds(&self) -> (f64, f64) {
        (self.m1, self.m2)
    }

    fn reset(&mut self, x: &DVector<f64>, g: &DVector<f64>) {
        self.h = initial_matrix(x.len(), self.m1, self.m2);
        self.prev = Some((x.clone(), g.clone()));
    }

    fn update(&mut self, x: &DVector<f64>, g: &DVector<f64>) -> &DMatrix<f64> {
        if let Some((px, pg)) = &self.prev {
            let s = x - px;
            let y = g - pg;
            let sy = s.dot(&y);
            if sy > Self::CURVATURE_EPS * s.norm() * y.norm() && sy > 0.0 {
                let rho = 1.0 / sy;
                let d = x.len();
                let v = DMatrix::identity(d, d) - (&y * s.transpose()) * rho;
                let cand = v.transpose() * &self.h * &v + (&s * s.transpose()) * rho;
                let cand = (&cand + cand.transpose()) * 0.5;
                if let Ok(h) = eigenvalue_clip(&cand, self.m1, self.m2) {
                    self.h = h;
                }
            }
        }
        self.prev = Some((x.clone(), g.clone()));
        &self.h
    }

    fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn box_clone(&self) -> Box<dyn HessianApprox> {
        Box::new(self.clone())
    }
}

/// Strategy selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum HessianStrategy {
    Identity,
    ScaledIdentity { scale: f64 },
    ClippedSecant { m1: f64, m2: f64 },
}

impl HessianStrategy {
    pub fn build(&self, d: usize) -> Result<Box<dyn HessianApprox>> {
        Ok(match *self {
            HessianStrategy::Identity => Box::new(Identity::new(d)),
            HessianStrategy::ScaledIdentity { scale } => Box::new(ScaledIdentity::new(d, scale)?),
            HessianStrategy::ClippedSecant { m1, m2 } => Box::new(ClippedSecant::new(d, m1, m2)?),
        })
    }

    /// Tightest `(M1, M2)` the strategy guarantees.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            HessianStrategy::Identity => (1.0, 1.0),
            HessianStrategy::ScaledIdentity { scale } => (scale, scale),
            HessianStrategy::ClippedSecant { m1, m2 } => (m1, m2),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, HessianStrategy::Identity)
    }
}

fn check_bounds(m1: f64, m2: f64) -> Result<()> {
    if !(m1 > 0.0 && m1 <= m2 && m2.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < M1 <= M2 < inf, got M1 = {m1}, M2 = {m2}")));
    }
    Ok(())
}

fn check_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", h.nrows(), h.ncols())));
    }
    let asym = (h - h.transpose()).amax();
    if asym > SYMMETRY_TOL * (1.0 + h.amax()) {
        return Err(Error::Asymmetric(asym));
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(h: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_symmetric(h)?;
    let e = SymmetricEigen::new(h.clone()).eigenvalues;
    Ok((e.min(), e.max()))
}

/// Projects the spectrum of a symmetric matrix into `[m1, m2]`, keeping its
/// eigenvectors. Matrices already inside the bounds come back unchanged.
pub fn eigenvalue_clip(h: &DMatrix<f64>, m1: f64, m2: f64) -> Result<DMatrix<f64>> {
    check_bounds(m1, m2)?;
    check_symmetric(h)?;
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().all(|&l| l >= m1 && l <= m2) {
        return Ok(h.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.clamp(m1, m2));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// `λ_min(H) ≥ M1 − tol` and `λ_max(H) ≤ M2 + tol`.
pub fn verify_assumption4(h: &DMatrix<f64>, m1: f64, m2: f64) -> Result<bool> {
    let (lo, hi) = eigen_range(h)?;
    Ok(lo >= m1 - BOUND_TOL && hi <= m2 + BOUND_TOL)
}
