use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::forward::{forward, kink_margin};
use super::loss::{class_residuals, loss};
use super::NetParams;
use crate::dictionary::Dictionary;
use crate::error::{invalid, Result};

/// Analytic and numeric gradients both below this magnitude are reported
/// as a zero-gradient entry rather than a relative error.
pub const ZERO_GRADIENT: f64 = 1e-12;

/// Smallest denominator of the relative error. A central difference at step
/// `h` carries roundoff of order `ε·|E|/h`, about `1e-10` at `h = 1e-6`, so
/// gradients below this size are effectively compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Rho,
    Eta,
    Tau,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Rho => "rho",
            ParamKind::Eta => "eta",
            ParamKind::Tau => "tau",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub kind: ParamKind,
    /// 1-based stage; `N + 1` is the output node's `ρ`.
    pub stage: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, MAGNITUDE_FLOOR)`,
    /// or 0 for a zero-gradient entry.
    pub rel_error: f64,
    pub zero_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of entries flagged as zero-gradient.
    pub zero_gradients: usize,
    /// Distance of the evaluation point from the nearest shrinkage kink.
    pub kink_margin: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn all_zero(&self) -> bool {
        self.zero_gradients == self.entries.len()
    }
}

/// Compares [`backward`] against central differences with step `step` on
/// every learnable parameter.
pub fn grad_check(
    dict: &Dictionary,
    x: &DVector<f64>,
    target: usize,
    params: &NetParams,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("step", format!("{step} must be positive")));
    }
    let (_, trace) = forward(dict, x, params)?;
    let grads = backward(dict, x, target, params, &trace)?;
    let eval = |p: &NetParams| -> Result<f64> {
        let (code, _) = forward(dict, x, p)?;
        Ok(loss(&class_residuals(dict, code.coeffs(), x)?, target))
    };

    let n = params.n_stages();
    let mut entries = Vec::with_capacity(params.n_learnable());
    let mut probe = |kind: ParamKind, idx: usize, analytic: f64| -> Result<()> {
        let mut hi = params.clone();
        let mut lo = params.clone();
        let (h, l) = match kind {
            ParamKind::Rho => (&mut hi.rho[idx], &mut lo.rho[idx]),
            ParamKind::Eta => (&mut hi.eta[idx], &mut lo.eta[idx]),
            ParamKind::Tau => (&mut hi.tau[idx], &mut lo.tau[idx]),
        };
        *h += step;
        *l -= step;
        let numeric = (eval(&hi)? - eval(&lo)?) / (2.0 * step);
        let scale = analytic.abs().max(numeric.abs());
        let zero_gradient = scale < ZERO_GRADIENT;
        let rel_error = if zero_gradient {
            0.0
        } else {
            (analytic - numeric).abs() / scale.max(MAGNITUDE_FLOOR)
        };
        entries.push(GradCheckEntry {
            kind,
            stage: idx + 1,
            analytic,
            numeric,
            rel_error,
            zero_gradient,
        });
        Ok(())
    };
    for s in 0..=n {
        probe(ParamKind::Rho, s, grads.d_rho[s])?;
    }
    for s in 0..n {
        probe(ParamKind::Eta, s, grads.d_eta[s])?;
    }
    for s in 0..n {
        probe(ParamKind::Tau, s, grads.d_tau[s])?;
    }

    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let max_abs_error = entries
        .iter()
        .map(|e| (e.analytic - e.numeric).abs())
        .fold(0.0, f64::max);
    let zero_gradients = entries.iter().filter(|e| e.zero_gradient).count();
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        max_abs_error,
        zero_gradients,
        kink_margin: kink_margin(params, &trace),
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_matrix, gaussian_vector, normalize_columns};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (Dictionary, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = gaussian_matrix(&mut rng, 20, 40);
        normalize_columns(&mut a);
        let labels: Vec<usize> = (0..40).map(|j| 1 + j / 20).collect();
        let x = gaussian_vector(&mut rng, 20);
        (Dictionary::assemble(&a, &labels).unwrap(), x)
    }

    fn kink_free(seed: u64, params: &NetParams) -> (Dictionary, DVector<f64>) {
        (seed..)
            .map(instance)
            .find(|(d, x)| {
                let (_, trace) = forward(d, x, params).unwrap();
                kink_margin(params, &trace) >= 1e-4
            })
            .unwrap()
    }

    #[test]
    fn small_step_beats_large_step() {
        let p = NetParams::uniform(5, 1.0, 0.05, 1.0, 1.0);
        let (d, x) = kink_free(0, &p);
        let fine = grad_check(&d, &x, 0, &p, 1e-6).unwrap();
        let coarse = grad_check(&d, &x, 0, &p, 1e-2).unwrap();
        assert!(fine.max_rel_error <= 1e-5, "{}", fine.max_rel_error);
        assert!(coarse.max_rel_error > fine.max_rel_error);
        assert_eq!(fine.entries.len(), p.n_learnable());
    }

    #[test]
    fn zero_signal_reports_zero_gradients() {
        let (d, _) = instance(1);
        let p = NetParams::with_stages(3);
        let r = grad_check(&d, &DVector::zeros(20), 1, &p, 1e-6).unwrap();
        assert!(r.all_zero());
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let (d, x) = instance(2);
        let p = NetParams::with_stages(2);
        assert!(grad_check(&d, &x, 0, &p, 0.0).is_err());
        assert!(grad_check(&d, &x, 0, &p, f64::NAN).is_err());
    }
}
