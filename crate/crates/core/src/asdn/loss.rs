use nalgebra::DVector;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// `r_i = ½‖x − D_i α_i‖²` for every class, where `α_i` is the block of
/// `coeffs` on class `i`'s atoms.
pub fn class_residuals(dict: &Dictionary, coeffs: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    dict.check_signal(x)?;
    if coeffs.len() != dict.len() {
        return Err(Error::Dimension(format!(
            "code has {} entries, dictionary has {} atoms",
            coeffs.len(),
            dict.len()
        )));
    }
    Ok(DVector::from_fn(dict.classes(), |c, _| {
        let range = dict.class_range(c);
        let block = dict.atoms().columns(range.start, range.len());
        let fit = block * coeffs.rows(range.start, range.len());
        0.5 * (x - fit).norm_squared()
    }))
}

/// `softmax(−r)` with max-shift stabilization.
pub fn softmax_neg(residuals: &DVector<f64>) -> DVector<f64> {
    let shift = residuals.min();
    let e = residuals.map(|r| (shift - r).exp());
    let total = e.sum();
    e / total
}

/// Cross-entropy of `softmax(−r)` against the one-hot target class
/// (0-based index).
pub fn loss(residuals: &DVector<f64>, target: usize) -> f64 {
    let shift = residuals.min();
    let log_sum = residuals.iter().map(|r| (shift - r).exp()).sum::<f64>().ln();
    ((residuals[target] - shift) + log_sum).max(0.0)
}

/// `∂E/∂r = y − softmax(−r)`.
pub fn loss_grad(residuals: &DVector<f64>, target: usize) -> DVector<f64> {
    let mut g = -softmax_neg(residuals);
    g[target] += 1.0;
    g
}
