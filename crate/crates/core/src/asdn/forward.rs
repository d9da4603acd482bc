use nalgebra::DVector;

use super::NetParams;
use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::solvers::admm::{admm_step, sparsity_update};
use crate::solvers::SparseCode;

/// Everything the backward pass needs from a forward evaluation.
///
/// Stage `n` (1-based) is stored at index `n − 1`; `alpha_seq` and
/// `solve_seq` carry one extra trailing entry for the output node.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub alpha_seq: Vec<DVector<f64>>,
    pub z_seq: Vec<DVector<f64>>,
    pub u_seq: Vec<DVector<f64>>,
    /// Shrinkage inputs `v⁽ⁿ⁾ = α⁽ⁿ⁾ + u⁽ⁿ⁻¹⁾`.
    pub pre_activation_seq: Vec<DVector<f64>>,
    /// Unblended solves `(DᵀD + ρ⁽ⁿ⁾I)⁻¹(Dᵀx + ρ⁽ⁿ⁾(z⁽ⁿ⁻¹⁾ − u⁽ⁿ⁻¹⁾))`.
    pub solve_seq: Vec<DVector<f64>>,
}

impl StageTrace {
    pub fn n_stages(&self) -> usize {
        self.z_seq.len()
    }

    /// The network output `α⁽ᴺ⁺¹⁾`.
    pub fn output(&self) -> &DVector<f64> {
        self.alpha_seq.last().expect("trace has an output node")
    }
}

/// Runs the `N` stages and the output node on pixel `x`.
pub fn forward(dict: &Dictionary, x: &DVector<f64>, params: &NetParams) -> Result<(SparseCode, StageTrace)> {
    params.validate()?;
    let dtx = dict.correlate(x)?;
    let n = params.n_stages();
    let m = dict.len();
    let mut trace = StageTrace {
        alpha_seq: Vec::with_capacity(n + 1),
        z_seq: Vec::with_capacity(n),
        u_seq: Vec::with_capacity(n),
        pre_activation_seq: Vec::with_capacity(n),
        solve_seq: Vec::with_capacity(n + 1),
    };
    let mut z = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for s in 0..n {
        let stage = (params.rho[s], params.eta[s], params.tau[s], params.relax);
        let it = admm_step(dict, &dtx, stage, &z, &u)?;
        z = it.z.clone();
        u = it.u.clone();
        trace.solve_seq.push(it.solve);
        trace.alpha_seq.push(it.alpha);
        trace.pre_activation_seq.push(it.pre_activation);
        trace.z_seq.push(it.z);
        trace.u_seq.push(it.u);
    }
    let (solve, alpha) = sparsity_update(dict, &dtx, params.rho[n], params.relax, &z, &u)?;
    trace.solve_seq.push(solve);
    trace.alpha_seq.push(alpha.clone());
    Ok((SparseCode::new(alpha), trace))
}

/// Smallest distance `||v⁽ⁿ⁾_j| − η⁽ⁿ⁾|` over all stages and entries: how
/// far the evaluation point sits from a shrinkage kink.
pub fn kink_margin(params: &NetParams, trace: &StageTrace) -> f64 {
    trace
        .pre_activation_seq
        .iter()
        .zip(&params.eta)
        .flat_map(|(v, &eta)| v.iter().map(move |x| (x.abs() - eta).abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Recomputes `z⁽ⁿ⁾` from the stored shrinkage inputs.
#[cfg(test)]
fn recompute_z(params: &NetParams, trace: &StageTrace) -> Vec<DVector<f64>> {
    trace
        .pre_activation_seq
        .iter()
        .zip(&params.eta)
        .map(|(v, &eta)| super::soft_threshold(v, eta))
        .collect()
}
