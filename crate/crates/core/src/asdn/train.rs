use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{backward, ParamGrads};
use super::forward::forward;
use super::loss::{class_residuals, loss};
use super::{NetParams, RHO_FLOOR, TAU_FLOOR};
use crate::dictionary::Dictionary;
use crate::error::{invalid, Error, Result};
use crate::rng::SplitShuffler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: NetParams,
    pub rho_floor: f64,
    pub tau_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            init: NetParams::default(),
            rho_floor: RHO_FLOOR,
            tau_floor: TAU_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("{} must be nonnegative", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if !(self.rho_floor > 0.0) || !(self.tau_floor > 0.0) {
            return Err(invalid("floors", "rho_floor and tau_floor must be positive"));
        }
        self.init.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean training loss before the first update, then after each epoch
    /// (`epochs + 1` entries).
    pub loss_history: Vec<f64>,
}

fn check_labels(dict: &Dictionary, pixels: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != pixels.ncols() {
        return Err(Error::Dimension(format!(
            "{} labels for {} pixels",
            labels.len(),
            pixels.ncols()
        )));
    }
    if pixels.nrows() != dict.dim() {
        return Err(Error::Dimension(format!(
            "pixels have {} bands, dictionary has {}",
            pixels.nrows(),
            dict.dim()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l == 0 || l > dict.classes()) {
        return Err(invalid("labels", format!("label {l} outside 1..={}", dict.classes())));
    }
    Ok(())
}

fn pixel_grads(dict: &Dictionary, x: &DVector<f64>, label: usize, params: &NetParams) -> Result<ParamGrads> {
    let (_, trace) = forward(dict, x, params)?;
    backward(dict, x, label - 1, params, &trace)
}

/// Mean loss over the columns of `pixels` (labels 1-based).
pub fn mean_loss(dict: &Dictionary, pixels: &DMatrix<f64>, labels: &[usize], params: &NetParams) -> Result<f64> {
    check_labels(dict, pixels, labels)?;
    if labels.is_empty() {
        return Err(Error::Empty("no pixels to evaluate"));
    }
    dict.cache().prefactor(&params.rho)?;
    let losses = (0..labels.len())
        .into_par_iter()
        .map(|j| {
            let x = pixels.column(j).into_owned();
            let (code, _) = forward(dict, &x, params)?;
            Ok(loss(&class_residuals(dict, code.coeffs(), &x)?, labels[j] - 1))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / labels.len() as f64)
}

/// Projected minibatch gradient descent on the per-stage parameters.
///
/// Each epoch reshuffles the pixels with the seeded generator, then for each
/// batch averages per-pixel gradients (summed in batch order, so the result
/// does not depend on the thread count), takes a step of size
/// `learning_rate` and clamps the parameters onto their floors.
pub fn train(dict: &Dictionary, pixels: &DMatrix<f64>, labels: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_labels(dict, pixels, labels)?;
    if labels.is_empty() {
        return Err(Error::Empty("no training pixels"));
    }
    let mut params = cfg.init.clone();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial = mean_loss(dict, pixels, labels, &params)?;
    if !initial.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial });
    }
    history.push(initial);

    let mut shuffler = SplitShuffler::new(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffler.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            dict.cache().prefactor(&params.rho)?;
            let per_pixel = batch
                .par_iter()
                .map(|&j| pixel_grads(dict, &pixels.column(j).into_owned(), labels[j], &params))
                .collect::<Result<Vec<_>>>()?;
            let mut total = ParamGrads::zeros(params.n_stages());
            for g in &per_pixel {
                total.accumulate(g);
            }
            total.scale(1.0 / batch.len() as f64);
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total.loss_value });
            }
            let lr = cfg.learning_rate;
            for (p, g) in params.rho.iter_mut().zip(&total.d_rho) {
                *p -= lr * g;
            }
            for (p, g) in params.eta.iter_mut().zip(&total.d_eta) {
                *p -= lr * g;
            }
            for (p, g) in params.tau.iter_mut().zip(&total.d_tau) {
                *p -= lr * g;
            }
            params.project(cfg.rho_floor, cfg.tau_floor);
        }
        let mean = mean_loss(dict, pixels, labels, &params)?;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
