//! The adaptive sparse deep network: ADMM for the lasso unrolled into a
//! fixed number of stages, each stage carrying its own penalty `ρ⁽ⁿ⁾`,
//! shrinkage threshold `η⁽ⁿ⁾` and dual step `τ⁽ⁿ⁾`.
//!
//! Stage `n` evaluates, from `z⁽ⁿ⁻¹⁾` and `u⁽ⁿ⁻¹⁾` (both zero at `n = 1`):
//!
//! ```text
//! α⁽ⁿ⁾ = relax · (DᵀD + ρ⁽ⁿ⁾I)⁻¹(Dᵀx + ρ⁽ⁿ⁾z⁽ⁿ⁻¹⁾ − ρ⁽ⁿ⁾u⁽ⁿ⁻¹⁾) + (1 − relax) · z⁽ⁿ⁻¹⁾
//! z⁽ⁿ⁾ = S(α⁽ⁿ⁾ + u⁽ⁿ⁻¹⁾, η⁽ⁿ⁾)
//! u⁽ⁿ⁾ = u⁽ⁿ⁻¹⁾ + τ⁽ⁿ⁾(α⁽ⁿ⁾ − z⁽ⁿ⁾)
//! ```
//!
//! After `N` stages one more sparsity node with its own `ρ⁽ᴺ⁺¹⁾` produces the
//! output code `α⁽ᴺ⁺¹⁾`, which feeds the class residuals and the softmax loss.

mod backward;
mod forward;
mod gradcheck;
mod loss;
mod train;

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use backward::{backward, ParamGrads};
pub use forward::{forward, kink_margin, StageTrace};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, ParamKind};
pub use loss::{class_residuals, loss, loss_grad, softmax_neg};
pub use train::{mean_loss, train, TrainConfig, TrainOutcome};

use crate::error::{invalid, Result};

/// Lower bound enforced on every `ρ⁽ⁿ⁾`.
pub const RHO_FLOOR: f64 = 1e-6;
/// Lower bound enforced on every `τ⁽ⁿ⁾`.
pub const TAU_FLOOR: f64 = 1e-6;
/// Default unrolled depth.
pub const DEFAULT_STAGES: usize = 9;

/// Entrywise `sign(v)·max(|v| − η, 0)`.
pub fn soft_threshold(v: &DVector<f64>, eta: f64) -> DVector<f64> {
    v.map(|x| {
        if x > eta {
            x - eta
        } else if x < -eta {
            x + eta
        } else {
            0.0
        }
    })
}

/// Per-stage learnable parameters plus the fixed relaxation weight.
///
/// `rho` has one entry per stage plus one for the output node; `eta` and
/// `tau` have one entry per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
    pub relax: f64,
}

impl NetParams {
    /// Every stage set to the same `(ρ, η, τ)`.
    pub fn uniform(n_stages: usize, rho: f64, eta: f64, tau: f64, relax: f64) -> Self {
        Self {
            rho: vec![rho; n_stages + 1],
            eta: vec![eta; n_stages],
            tau: vec![tau; n_stages],
            relax,
        }
    }

    /// `ρ = 1, η = 0.1, τ = 1, relax = 1` at every stage.
    pub fn with_stages(n_stages: usize) -> Self {
        Self::uniform(n_stages, 1.0, 0.1, 1.0, 1.0)
    }

    pub fn n_stages(&self) -> usize {
        self.eta.len()
    }

    /// Total number of learnable scalars, `3N + 1`.
    pub fn n_learnable(&self) -> usize {
        self.rho.len() + self.eta.len() + self.tau.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.eta.len();
        if n == 0 {
            return Err(invalid("n_stages", "must be at least 1"));
        }
        if self.rho.len() != n + 1 || self.tau.len() != n {
            return Err(invalid(
                "params",
                format!(
                    "expected {} rho, {n} eta, {n} tau; got {}, {}, {}",
                    n + 1,
                    self.rho.len(),
                    self.eta.len(),
                    self.tau.len()
                ),
            ));
        }
        if !(self.relax > 0.0 && self.relax <= 2.0) {
            return Err(invalid("relax", format!("{} not in (0, 2]", self.relax)));
        }
        if let Some(r) = self.rho.iter().find(|r| !(r.is_finite() && **r >= RHO_FLOOR)) {
            return Err(invalid("rho", format!("{r} below floor {RHO_FLOOR}")));
        }
        if let Some(e) = self.eta.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(invalid("eta", format!("{e} must be nonnegative")));
        }
        if let Some(t) = self.tau.iter().find(|t| !(t.is_finite() && **t >= TAU_FLOOR)) {
            return Err(invalid("tau", format!("{t} below floor {TAU_FLOOR}")));
        }
        Ok(())
    }

    /// Clamps every parameter onto its floor.
    pub fn project(&mut self, rho_floor: f64, tau_floor: f64) {
        for r in &mut self.rho {
            *r = r.max(rho_floor);
        }
        for e in &mut self.eta {
            *e = e.max(0.0);
        }
        for t in &mut self.tau {
            *t = t.max(tau_floor);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Default for NetParams {
    fn default() -> Self {
        Self::with_stages(DEFAULT_STAGES)
    }
}

#[derive(Serialize, Deserialize)]
struct NetParamsDoc {
    n_stages: usize,
    relax: f64,
    rho: Vec<f64>,
    eta: Vec<f64>,
    tau: Vec<f64>,
}

impl Serialize for NetParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetParamsDoc {
            n_stages: self.n_stages(),
            relax: self.relax,
            rho: self.rho.clone(),
            eta: self.eta.clone(),
            tau: self.tau.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = NetParamsDoc::deserialize(d)?;
        if doc.eta.len() != doc.n_stages {
            return Err(serde::de::Error::custom(format!(
                "n_stages is {} but eta has {} entries",
                doc.n_stages,
                doc.eta.len()
            )));
        }
        let params = NetParams {
            rho: doc.rho,
            eta: doc.eta,
            tau: doc.tau,
            relax: doc.relax,
        };
        params.validate().map_err(serde::de::Error::custom)?;
        Ok(params)
    }
}
