use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{lasso_objective, SparseCode};
use crate::asdn::soft_threshold;
use crate::dictionary::Dictionary;
use crate::error::{invalid, Result};

/// Settings for [`fista`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective-change threshold.
    pub tol: f64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iters: 1000,
            tol: 1e-8,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("{} must be nonnegative", self.lambda)));
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

/// Accelerated proximal gradient on `½‖x − Dα‖² + λ‖α‖₁` with step `1/L`,
/// `L` the power-iteration estimate of the largest eigenvalue of `DᵀD`.
///
/// Whenever an accelerated step would raise the objective, momentum is
/// reset and a plain proximal-gradient step is taken from the last iterate
/// instead, so the objective never increases. Stops when
/// `|F_t − F_{t−1}| ≤ tol · max(1, F_{t−1})`.
pub fn fista(dict: &Dictionary, x: &DVector<f64>, cfg: &FistaConfig) -> Result<SparseCode> {
    cfg.validate()?;
    let dtx = dict.correlate(x)?;
    let gram = dict.cache().gram();
    let mut lip = dict.cache().lipschitz();
    let m = dict.len();
    if lip == 0.0 {
        return Ok(SparseCode::zeros(m));
    }
    let lambda = cfg.lambda;
    let objective = |a: &DVector<f64>| lasso_objective(dict, x, a, lambda);
    let prox_step = |from: &DVector<f64>, lip: f64| {
        let grad = gram * from - &dtx;
        soft_threshold(&(from - grad / lip), lambda / lip)
    };

    let mut a = DVector::zeros(m);
    let mut y = a.clone();
    let mut t = 1.0f64;
    let mut f_old = objective(&a);
    for _ in 0..cfg.max_iters {
        let mut a_new = prox_step(&y, lip);
        let mut f_new = objective(&a_new);
        if f_new > f_old {
            t = 1.0;
            loop {
                a_new = prox_step(&a, lip);
                f_new = objective(&a_new);
                if f_new <= f_old {
                    break;
                }
                // The power-iteration estimate undershot the true constant.
                lip *= 1.5;
            }
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &a_new + (&a_new - &a) * ((t - 1.0) / t_new);
        a = a_new;
        t = t_new;
        let done = (f_new - f_old).abs() <= cfg.tol * f_old.max(1.0);
        f_old = f_new;
        if done {
            break;
        }
    }
    Ok(SparseCode::new(a))
}
