use std::cmp::Ordering;

use nalgebra::DVector;

use super::SparseCode;
use crate::dictionary::{least_squares_on_support, Dictionary};
use crate::error::{invalid, Result};

/// Relative residual (`‖r‖ ≤ GREEDY_TOL · ‖x‖`) at which the pursuits stop.
pub const GREEDY_TOL: f64 = 1e-10;

const SP_MAX_ITERS: usize = 100;
const SAMP_MAX_ITERS: usize = 1000;

/// A pursuit run: the final code, the atoms in the order they were chosen,
/// and the residual norm after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PursuitPath {
    pub code: SparseCode,
    pub selections: Vec<usize>,
    pub residual_norms: Vec<f64>,
}

/// Fit on `support`, returning the coefficients and the residual.
fn refit(dict: &Dictionary, x: &DVector<f64>, support: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let coef = least_squares_on_support(dict, support, x.as_view());
    let mut r = x.clone();
    for (&j, &c) in support.iter().zip(coef.iter()) {
        r.axpy(-c, &dict.atoms().column(j), 1.0);
    }
    (coef, r)
}

/// Descending by magnitude, ascending by index on ties.
fn by_magnitude(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// The `k` indices of largest nonzero magnitude, skipping `excluded`.
fn top_k(values: &[f64], k: usize, excluded: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len())
        .filter(|&j| !excluded[j] && values[j] != 0.0)
        .collect();
    idx.sort_by(by_magnitude(values));
    idx.truncate(k);
    idx
}

fn check_k(dict: &Dictionary, k: usize) -> Result<()> {
    let bound = dict.dim().min(dict.len());
    if k == 0 || k > bound {
        return Err(invalid("K", format!("{k} not in 1..={bound}")));
    }
    Ok(())
}

/// Orthogonal matching pursuit with at most `k` atoms.
pub fn omp(dict: &Dictionary, x: &DVector<f64>, k: usize) -> Result<SparseCode> {
    Ok(omp_path(dict, x, k)?.code)
}

pub fn omp_path(dict: &Dictionary, x: &DVector<f64>, k: usize) -> Result<PursuitPath> {
    check_k(dict, k)?;
    dict.check_signal(x)?;
    Ok(generalized_pursuit(dict, x, k, 1, k))
}

/// Generalized OMP: `s` atoms per iteration for `⌈k/s⌉` iterations, the
/// last one trimmed so that at most `k` atoms are chosen.
pub fn gomp(dict: &Dictionary, x: &DVector<f64>, k: usize, s: usize) -> Result<SparseCode> {
    Ok(gomp_path(dict, x, k, s)?.code)
}

pub fn gomp_path(dict: &Dictionary, x: &DVector<f64>, k: usize, s: usize) -> Result<PursuitPath> {
    check_k(dict, k)?;
    if s == 0 {
        return Err(invalid("S", "must be at least 1"));
    }
    let iterations = k.div_ceil(s);
    if s * iterations > dict.len() {
        return Err(invalid(
            "S",
            format!("{s} atoms x {iterations} iterations exceeds {} atoms", dict.len()),
        ));
    }
    dict.check_signal(x)?;
    Ok(generalized_pursuit(dict, x, iterations, s, k))
}

fn generalized_pursuit(
    dict: &Dictionary,
    x: &DVector<f64>,
    iterations: usize,
    per_iter: usize,
    max_atoms: usize,
) -> PursuitPath {
    let m = dict.len();
    let stop = GREEDY_TOL * x.norm();
    let mut chosen = vec![false; m];
    let mut support = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut r = x.clone();
    let mut residual_norms = Vec::new();
    for _ in 0..iterations {
        if r.norm() <= stop {
            break;
        }
        let corr = dict.atoms().tr_mul(&r);
        let picks = top_k(corr.as_slice(), per_iter.min(max_atoms - support.len()), &chosen);
        if picks.is_empty() {
            break;
        }
        for &j in &picks {
            chosen[j] = true;
            support.push(j);
        }
        (coef, r) = refit(dict, x, &support);
        residual_norms.push(r.norm());
    }
    PursuitPath {
        code: SparseCode::from_support(m, &support, &coef),
        selections: support,
        residual_norms,
    }
}

/// Subspace pursuit keeping exactly `k` atoms.
pub fn sp(dict: &Dictionary, x: &DVector<f64>, k: usize) -> Result<SparseCode> {
    check_k(dict, k)?;
    dict.check_signal(x)?;
    let m = dict.len();
    if x.norm() == 0.0 {
        return Ok(SparseCode::zeros(m));
    }
    let stop = GREEDY_TOL * x.norm();

    let mut support = top_k(dict.correlate(x)?.as_slice(), k, &vec![false; m]);
    support.sort_unstable();
    let (mut coef, mut r) = refit(dict, x, &support);

    for _ in 0..SP_MAX_ITERS {
        if r.norm() <= stop {
            break;
        }
        let mut member = vec![false; m];
        for &j in &support {
            member[j] = true;
        }
        let corr = dict.atoms().tr_mul(&r);
        let mut expanded = support.clone();
        expanded.extend(top_k(corr.as_slice(), k, &member));
        expanded.sort_unstable();
        let (wide, _) = refit(dict, x, &expanded);

        let mut order: Vec<usize> = (0..expanded.len()).collect();
        order.sort_by(by_magnitude(wide.as_slice()));
        let mut pruned: Vec<usize> = order.iter().take(k).map(|&i| expanded[i]).collect();
        pruned.sort_unstable();

        let (c, r_new) = refit(dict, x, &pruned);
        if r_new.norm() >= r.norm() {
            break;
        }
        support = pruned;
        coef = c;
        r = r_new;
    }
    Ok(SparseCode::from_support(m, &support, &coef))
}

/// Regularized OMP: each iteration adds the maximal-energy group of
/// comparable correlations (largest over smallest at most 2) among the `k`
/// largest, until the support holds `2k` atoms or the residual vanishes.
pub fn romp(dict: &Dictionary, x: &DVector<f64>, k: usize) -> Result<SparseCode> {
    check_k(dict, k)?;
    dict.check_signal(x)?;
    let m = dict.len();
    let cap = (2 * k).min(dict.dim()).min(m);
    let stop = GREEDY_TOL * x.norm();
    let mut chosen = vec![false; m];
    let mut support: Vec<usize> = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut r = x.clone();

    while support.len() < cap && r.norm() > stop {
        let corr = dict.atoms().tr_mul(&r);
        let cand = top_k(corr.as_slice(), k, &chosen);
        if cand.is_empty() {
            break;
        }
        let mags: Vec<f64> = cand.iter().map(|&j| corr[j].abs()).collect();
        let group = comparable_group(&mags);
        let room = cap - support.len();
        for &i in group.iter().take(room) {
            chosen[cand[i]] = true;
            support.push(cand[i]);
        }
        let (c, r_new) = refit(dict, x, &support);
        let stalled = r_new.norm() >= r.norm();
        coef = c;
        r = r_new;
        if stalled {
            break;
        }
    }
    Ok(SparseCode::from_support(m, &support, &coef))
}

/// Positions (into `mags`, sorted descending) of the maximal-energy run with
/// `mags[first] <= 2 * mags[last]`.
fn comparable_group(mags: &[f64]) -> Vec<usize> {
    let mut best = (0, 1, f64::NEG_INFINITY);
    for start in 0..mags.len() {
        let mut end = start;
        let mut energy = 0.0;
        while end < mags.len() && mags[start] <= 2.0 * mags[end] {
            energy += mags[end] * mags[end];
            end += 1;
        }
        if energy > best.2 {
            best = (start, end, energy);
        }
    }
    (best.0..best.1).collect()
}

/// Sparsity-adaptive matching pursuit: subspace pursuit whose working size
/// grows by `step` whenever an iteration fails to shrink the residual.
/// Stops once `‖r‖ ≤ tol` (absolute) or the size would exceed
/// `min(L, M) / 2`.
pub fn samp(dict: &Dictionary, x: &DVector<f64>, step: usize, tol: f64) -> Result<SparseCode> {
    if step == 0 {
        return Err(invalid("step", "must be at least 1"));
    }
    if !(tol >= 0.0) {
        return Err(invalid("tol", format!("{tol} must be nonnegative")));
    }
    dict.check_signal(x)?;
    let m = dict.len();
    let limit = (dict.dim().min(m) / 2).max(1);
    let mut support: Vec<usize> = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut r = x.clone();
    let mut size = step;

    for _ in 0..SAMP_MAX_ITERS {
        if r.norm() <= tol || size > limit {
            break;
        }
        let mut member = vec![false; m];
        for &j in &support {
            member[j] = true;
        }
        let corr = dict.atoms().tr_mul(&r);
        let mut candidates = support.clone();
        candidates.extend(top_k(corr.as_slice(), size, &member));
        candidates.sort_unstable();
        let (wide, _) = refit(dict, x, &candidates);

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(by_magnitude(wide.as_slice()));
        let mut trial: Vec<usize> = order.iter().take(size).map(|&i| candidates[i]).collect();
        trial.sort_unstable();
        let (c, r_new) = refit(dict, x, &trial);

        if r_new.norm() <= tol || r_new.norm() < r.norm() {
            support = trial;
            coef = c;
            r = r_new;
        } else {
            size += step;
        }
    }
    Ok(SparseCode::from_support(m, &support, &coef))
}
