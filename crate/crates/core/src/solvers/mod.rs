//! Baseline sparse coders over a [`Dictionary`].
//!
//! Two families: greedy pursuits parameterized by a sparsity level `K`
//! ([`omp`], [`sp`], [`romp`], [`gomp`], [`samp`]) and ℓ1 solvers of
//! `½‖x − Dα‖² + λ‖α‖₁` parameterized by `λ` ([`fista`], [`admm_fixed`]).
//!
//! Whenever candidate atoms tie on correlation magnitude the lowest atom
//! index wins.

pub(crate) mod admm;
mod fista;
mod greedy;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use admm::{admm_fixed, admm_iterates, AdmmConfig, AdmmIterate};
pub use fista::{fista, FistaConfig};
pub use greedy::{gomp, gomp_path, omp, omp_path, romp, samp, sp, PursuitPath, GREEDY_TOL};

use crate::dictionary::Dictionary;

/// A coefficient vector together with its exact nonzero pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    coeffs: DVector<f64>,
    support: Vec<usize>,
}

impl SparseCode {
    /// Wraps `coeffs`; the support is every index holding a nonzero.
    pub fn new(coeffs: DVector<f64>) -> Self {
        let support = coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self { coeffs, support }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            coeffs: DVector::zeros(len),
            support: Vec::new(),
        }
    }

    /// Scatters `values` onto the atoms listed in `atoms`.
    pub(crate) fn from_support(len: usize, atoms: &[usize], values: &DVector<f64>) -> Self {
        let mut coeffs = DVector::zeros(len);
        for (&j, &v) in atoms.iter().zip(values.iter()) {
            coeffs[j] = v;
        }
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    /// Ascending indices of the nonzero coefficients.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// `½‖x − Dα‖² + λ‖α‖₁`.
pub fn lasso_objective(dict: &Dictionary, x: &DVector<f64>, coeffs: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (x - dict.synthesize(coeffs)).norm_squared() + lambda * coeffs.lp_norm(1)
}
