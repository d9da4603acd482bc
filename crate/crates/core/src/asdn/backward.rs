use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::loss::{class_residuals, loss, loss_grad};
use super::{NetParams, StageTrace};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Gradients of the loss with respect to every learnable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub d_rho: Vec<f64>,
    pub d_eta: Vec<f64>,
    pub d_tau: Vec<f64>,
    pub loss_value: f64,
}

impl ParamGrads {
    pub fn zeros(n_stages: usize) -> Self {
        Self {
            d_rho: vec![0.0; n_stages + 1],
            d_eta: vec![0.0; n_stages],
            d_tau: vec![0.0; n_stages],
            loss_value: 0.0,
        }
    }

    /// Adds `other` entry by entry.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        let pairs = [
            (&mut self.d_rho, &other.d_rho),
            (&mut self.d_eta, &other.d_eta),
            (&mut self.d_tau, &other.d_tau),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.loss_value += other.loss_value;
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.d_rho.iter_mut().chain(&mut self.d_eta).chain(&mut self.d_tau) {
            *v *= k;
        }
        self.loss_value *= k;
    }

    pub fn is_finite(&self) -> bool {
        self.d_rho
            .iter()
            .chain(&self.d_eta)
            .chain(&self.d_tau)
            .all(|v| v.is_finite())
            && self.loss_value.is_finite()
    }
}

/// Adjoint of one sparsity node
/// `α = relax · w + (1 − relax) · z_prev`, `w = M⁻¹(Dᵀx + ρ(z_prev − u_prev))`,
/// `M = DᵀD + ρI`.
///
/// Given `ḡ = ∂E/∂α`, one solve `q = M⁻¹(relax · ḡ)` yields
/// `∂E/∂ρ = qᵀ((z_prev − u_prev) − w)` (from `dM⁻¹/dρ = −M⁻²`),
/// `∂E/∂z_prev = ρq + (1 − relax)ḡ` and `∂E/∂u_prev = −ρq`.
struct SparsityAdjoint {
    d_rho: f64,
    d_z_prev: DVector<f64>,
    d_u_prev: DVector<f64>,
}

fn sparsity_adjoint(
    dict: &Dictionary,
    rho: f64,
    relax: f64,
    g_alpha: &DVector<f64>,
    solve: &DVector<f64>,
    z_prev: Option<&DVector<f64>>,
    u_prev: Option<&DVector<f64>>,
) -> Result<SparsityAdjoint> {
    let q = dict.solve_regularized(rho, &(g_alpha * relax))?;
    let mut diff = -solve;
    if let Some(z) = z_prev {
        diff += z;
    }
    if let Some(u) = u_prev {
        diff -= u;
    }
    Ok(SparsityAdjoint {
        d_rho: q.dot(&diff),
        d_z_prev: &q * rho + g_alpha * (1.0 - relax),
        d_u_prev: -(&q * rho),
    })
}

/// Reverse pass over the stage graph for pixel `x` with 0-based class
/// `target`, from the output node back to stage 1.
///
/// Within stage `n` the multiplier node is visited first, then the
/// shrinkage node, then the sparsity node. The shrinkage derivative uses
/// `∂S/∂v = 1{|v| > η}` and `∂S/∂η = −sign(v)·1{|v| > η}`, taking 0 on the
/// kink itself.
pub fn backward(
    dict: &Dictionary,
    x: &DVector<f64>,
    target: usize,
    params: &NetParams,
    trace: &StageTrace,
) -> Result<ParamGrads> {
    let n = params.n_stages();
    if trace.n_stages() != n
        || trace.alpha_seq.len() != n + 1
        || trace.solve_seq.len() != n + 1
        || trace.u_seq.len() != n
        || trace.pre_activation_seq.len() != n
    {
        return Err(Error::Dimension(format!(
            "trace has {} stages, params have {n}",
            trace.n_stages()
        )));
    }
    if target >= dict.classes() {
        return Err(Error::Dimension(format!(
            "target class index {target} out of range for {} classes",
            dict.classes()
        )));
    }
    let m = dict.len();
    let relax = params.relax;
    let output = trace.output();
    let residuals = class_residuals(dict, output, x)?;
    let g_r = loss_grad(&residuals, target);

    // ∂r_i/∂α_i = −D_iᵀ(x − D_i α_i), nonzero only on class i's block.
    let mut g_alpha = DVector::zeros(m);
    for c in 0..dict.classes() {
        let range = dict.class_range(c);
        let block = dict.atoms().columns(range.start, range.len());
        let resid = x - block * output.rows(range.start, range.len());
        let g = block.tr_mul(&resid) * (-g_r[c]);
        g_alpha.rows_mut(range.start, range.len()).copy_from(&g);
    }

    let mut grads = ParamGrads::zeros(n);
    grads.loss_value = loss(&residuals, target);

    let out = sparsity_adjoint(
        dict,
        params.rho[n],
        relax,
        &g_alpha,
        &trace.solve_seq[n],
        Some(&trace.z_seq[n - 1]),
        Some(&trace.u_seq[n - 1]),
    )?;
    grads.d_rho[n] = out.d_rho;
    let mut g_z = out.d_z_prev;
    let mut g_u = out.d_u_prev;

    for s in (0..n).rev() {
        let alpha = &trace.alpha_seq[s];
        let z = &trace.z_seq[s];
        let v = &trace.pre_activation_seq[s];
        let (eta, tau) = (params.eta[s], params.tau[s]);

        // Multiplier node: u = u_prev + τ(α − z).
        grads.d_tau[s] = g_u.dot(&(alpha - z));
        let mut g_alpha = &g_u * tau;
        g_z -= &g_u * tau;
        let mut g_u_prev = g_u;

        // Shrinkage node: z = S(α + u_prev, η).
        let mut d_eta = 0.0;
        let mut g_v = DVector::zeros(m);
        for j in 0..m {
            if v[j].abs() > eta {
                g_v[j] = g_z[j];
                d_eta -= g_z[j] * v[j].signum();
            }
        }
        grads.d_eta[s] = d_eta;
        g_alpha += &g_v;
        g_u_prev += &g_v;

        // Sparsity node.
        let (z_prev, u_prev) = if s == 0 {
            (None, None)
        } else {
            (Some(&trace.z_seq[s - 1]), Some(&trace.u_seq[s - 1]))
        };
        let adj = sparsity_adjoint(
            dict,
            params.rho[s],
            relax,
            &g_alpha,
            &trace.solve_seq[s],
            z_prev,
            u_prev,
        )?;
        grads.d_rho[s] = adj.d_rho;
        g_z = adj.d_z_prev;
        g_u = g_u_prev + adj.d_u_prev;
    }
    Ok(grads)
}
