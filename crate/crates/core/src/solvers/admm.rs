use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SparseCode;
use crate::asdn::soft_threshold;
use crate::dictionary::Dictionary;
use crate::error::{invalid, Result};

/// Fixed-parameter ADMM settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// ℓ1 weight λ.
    pub lambda: f64,
    /// Penalty ρ.
    pub rho: f64,
    /// Relaxation weight in `(0, 2]`.
    pub relax: f64,
    /// Dual step τ.
    pub tau: f64,
    pub max_iters: usize,
    /// Threshold on `max(‖α − z‖, ρ‖z − z_prev‖)`.
    pub tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            rho: 1.0,
            relax: 1.0,
            tau: 1.0,
            max_iters: 1000,
            tol: 1e-8,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("{} must be nonnegative", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", format!("{} must be positive", self.rho)));
        }
        if !(self.relax > 0.0 && self.relax <= 2.0) {
            return Err(invalid("relax", format!("{} not in (0, 2]", self.relax)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("{} must be positive", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol", format!("{} must be nonnegative", self.tol)));
        }
        Ok(())
    }
}

/// State after one ADMM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmIterate {
    /// Regularized least-squares solve `(DᵀD + ρI)⁻¹(Dᵀx + ρz − ρu)`.
    pub solve: DVector<f64>,
    pub alpha: DVector<f64>,
    /// Shrinkage input `α + u_prev`.
    pub pre_activation: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
}

/// The sparsity node: `relax · (DᵀD + ρI)⁻¹(Dᵀx + ρ(z − u)) + (1 − relax) · z`.
/// Returns the solve and the blended α.
pub(crate) fn sparsity_update(
    dict: &Dictionary,
    dtx: &DVector<f64>,
    rho: f64,
    relax: f64,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let rhs = dtx + (z - u) * rho;
    let solve = dict.solve_regularized(rho, &rhs)?;
    let alpha = &solve * relax + z * (1.0 - relax);
    Ok((solve, alpha))
}

/// One full ADMM iteration with threshold `eta` and dual step `tau`.
pub(crate) fn admm_step(
    dict: &Dictionary,
    dtx: &DVector<f64>,
    (rho, eta, tau, relax): (f64, f64, f64, f64),
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<AdmmIterate> {
    let (solve, alpha) = sparsity_update(dict, dtx, rho, relax, z, u)?;
    let pre_activation = &alpha + u;
    let z_next = soft_threshold(&pre_activation, eta);
    let u_next = u + (&alpha - &z_next) * tau;
    Ok(AdmmIterate {
        solve,
        alpha,
        pre_activation,
        z: z_next,
        u: u_next,
    })
}

/// Exactly `n` iterations from `z = u = 0`, ignoring the stopping rule.
pub fn admm_iterates(
    dict: &Dictionary,
    x: &DVector<f64>,
    cfg: &AdmmConfig,
    n: usize,
) -> Result<Vec<AdmmIterate>> {
    cfg.validate()?;
    let dtx = dict.correlate(x)?;
    let params = (cfg.rho, cfg.lambda / cfg.rho, cfg.tau, cfg.relax);
    let mut z = DVector::zeros(dict.len());
    let mut u = DVector::zeros(dict.len());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let it = admm_step(dict, &dtx, params, &z, &u)?;
        z = it.z.clone();
        u = it.u.clone();
        out.push(it);
    }
    Ok(out)
}

/// Lasso by ADMM with fixed `(λ, ρ, relax, τ)`. Returns the thresholded
/// variable `z`, which is exactly sparse.
pub fn admm_fixed(dict: &Dictionary, x: &DVector<f64>, cfg: &AdmmConfig) -> Result<SparseCode> {
    cfg.validate()?;
    let dtx = dict.correlate(x)?;
    let params = (cfg.rho, cfg.lambda / cfg.rho, cfg.tau, cfg.relax);
    let mut z = DVector::zeros(dict.len());
    let mut u = DVector::zeros(dict.len());
    for _ in 0..cfg.max_iters {
        let it = admm_step(dict, &dtx, params, &z, &u)?;
        let primal = (&it.alpha - &it.z).norm();
        let dual = cfg.rho * (&it.z - &z).norm();
        z = it.z;
        u = it.u;
        if primal.max(dual) <= cfg.tol {
            break;
        }
    }
    Ok(SparseCode::new(z))
}
