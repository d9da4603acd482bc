//! Residual-based classification, accuracy metrics and parameter sweeps.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asdn::{class_residuals, forward, NetParams};
use crate::dataset::{extract_pixels, make_split, make_split_counts, LabeledCube, Split};
use crate::dictionary::Dictionary;
use crate::error::{invalid, Error, Result};
use crate::solvers::{self, AdmmConfig, FistaConfig, SparseCode};

/// Assigns `x` to the class (1-based) whose sub-dictionary reconstructs it
/// best, `argmin_i ‖x − D_i α_i‖₂`. Ties go to the lowest class.
pub fn src_decide(dict: &Dictionary, coeffs: &DVector<f64>, x: &DVector<f64>) -> Result<usize> {
    let r = class_residuals(dict, coeffs, x)?;
    Ok(argmin(r.as_slice()) + 1)
}

/// First index of the smallest value.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Confusion matrix (rows are ground truth, columns predictions) and the
/// derived accuracies. All accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class_acc: Vec<f64>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Classes (1-based) with no test pixels; they count as accuracy 0 in
    /// `aa`.
    pub empty_classes: Vec<usize>,
}

impl ClassificationReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Table-style CSV in percent: one row per class, then OA, AA, kappa.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (c, acc) in self.per_class_acc.iter().enumerate() {
            writeln!(out, "class_{},{:.4}", c + 1, acc * 100.0).unwrap();
        }
        writeln!(out, "oa,{:.4}", self.oa * 100.0).unwrap();
        writeln!(out, "aa,{:.4}", self.aa * 100.0).unwrap();
        writeln!(out, "kappa,{:.4}", self.kappa * 100.0).unwrap();
        out
    }
}

/// Builds the report for 1-based labels in `1..=classes`.
pub fn evaluate(pred: &[usize], truth: &[usize], classes: usize) -> Result<ClassificationReport> {
    if pred.is_empty() {
        return Err(Error::Empty("no predictions to evaluate"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&l) = pred.iter().chain(truth).find(|&&l| l == 0 || l > classes) {
        return Err(invalid("labels", format!("label {l} outside 1..={classes}")));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t - 1][p - 1] += 1;
    }
    Ok(report_from_confusion(confusion))
}

pub fn report_from_confusion(confusion: Vec<Vec<u64>>) -> ClassificationReport {
    let classes = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let n = total as f64;
    let row_sums: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..classes).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let diag: u64 = (0..classes).map(|i| confusion[i][i]).sum();

    let mut empty_classes = Vec::new();
    let per_class_acc: Vec<f64> = (0..classes)
        .map(|i| {
            if row_sums[i] == 0 {
                empty_classes.push(i + 1);
                0.0
            } else {
                confusion[i][i] as f64 / row_sums[i] as f64
            }
        })
        .collect();
    let oa = diag as f64 / n;
    let aa = per_class_acc.iter().sum::<f64>() / classes as f64;
    let chance: f64 = row_sums
        .iter()
        .zip(&col_sums)
        .map(|(&r, &c)| r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    // With a single class in both truth and prediction, agreement is
    // perfect and chance agreement is 1.
    let kappa = if chance < 1.0 { (oa - chance) / (1.0 - chance) } else { 1.0 };
    ClassificationReport {
        confusion,
        per_class_acc,
        oa,
        aa,
        kappa,
        empty_classes,
    }
}

/// A sparse coder and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum SolverSpec {
    Omp { k: usize },
    Sp { k: usize },
    Romp { k: usize },
    Gomp { k: usize, s: usize },
    Samp { step: usize, tol: f64 },
    Fista(FistaConfig),
    AdmmFixed(AdmmConfig),
    Asdn(NetParams),
}

impl SolverSpec {
    pub const NAMES: [&'static str; 8] = ["omp", "sp", "romp", "gomp", "samp", "fista", "admm_fixed", "asdn"];

    /// The named solver with its default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "omp" => SolverSpec::Omp { k: 9 },
            "sp" => SolverSpec::Sp { k: 9 },
            "romp" => SolverSpec::Romp { k: 9 },
            "gomp" => SolverSpec::Gomp { k: 9, s: 2 },
            "samp" => SolverSpec::Samp { step: 1, tol: 1e-10 },
            "fista" => SolverSpec::Fista(FistaConfig::default()),
            "admm_fixed" | "admm" => SolverSpec::AdmmFixed(AdmmConfig::default()),
            "asdn" => SolverSpec::Asdn(NetParams::default()),
            other => return Err(Error::UnknownSolver(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverSpec::Omp { .. } => "omp",
            SolverSpec::Sp { .. } => "sp",
            SolverSpec::Romp { .. } => "romp",
            SolverSpec::Gomp { .. } => "gomp",
            SolverSpec::Samp { .. } => "samp",
            SolverSpec::Fista(_) => "fista",
            SolverSpec::AdmmFixed(_) => "admm_fixed",
            SolverSpec::Asdn(_) => "asdn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SolverSpec::Omp { k } | SolverSpec::Sp { k } | SolverSpec::Romp { k } if *k == 0 => {
                Err(invalid("K", "must be at least 1"))
            }
            SolverSpec::Gomp { k, s } if *k == 0 || *s == 0 => Err(invalid("K/S", "must be at least 1")),
            SolverSpec::Samp { step, tol } if *step == 0 || !(*tol >= 0.0) => {
                Err(invalid("step/tol", "step must be at least 1 and tol nonnegative"))
            }
            SolverSpec::Fista(cfg) => cfg.validate(),
            SolverSpec::AdmmFixed(cfg) => cfg.validate(),
            SolverSpec::Asdn(p) => p.validate(),
            _ => Ok(()),
        }
    }

    /// Codes one pixel.
    pub fn code(&self, dict: &Dictionary, x: &DVector<f64>) -> Result<SparseCode> {
        match self {
            SolverSpec::Omp { k } => solvers::omp(dict, x, *k),
            SolverSpec::Sp { k } => solvers::sp(dict, x, *k),
            SolverSpec::Romp { k } => solvers::romp(dict, x, *k),
            SolverSpec::Gomp { k, s } => solvers::gomp(dict, x, *k, *s),
            SolverSpec::Samp { step, tol } => solvers::samp(dict, x, *step, *tol),
            SolverSpec::Fista(cfg) => solvers::fista(dict, x, cfg),
            SolverSpec::AdmmFixed(cfg) => solvers::admm_fixed(dict, x, cfg),
            SolverSpec::Asdn(p) => Ok(forward(dict, x, p)?.0),
        }
    }

    /// A copy with `param` set to `value`.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(invalid("grid", format!("{param} needs positive integers, got {value}")))
            }
        };
        let mut out = self.clone();
        match (&mut out, param) {
            (
                SolverSpec::Omp { k } | SolverSpec::Sp { k } | SolverSpec::Romp { k } | SolverSpec::Gomp { k, .. },
                SweepParam::K,
            ) => *k = as_count()?,
            (SolverSpec::Gomp { s, .. }, SweepParam::S) => *s = as_count()?,
            (SolverSpec::Samp { step, .. }, SweepParam::Step) => *step = as_count()?,
            (SolverSpec::Fista(cfg), SweepParam::Lambda) => cfg.lambda = value,
            (SolverSpec::AdmmFixed(cfg), SweepParam::Lambda) => cfg.lambda = value,
            (SolverSpec::AdmmFixed(cfg), SweepParam::Rho) => cfg.rho = value,
            (spec, param) => {
                return Err(invalid("param", format!("`{param}` does not apply to {}", spec.name())))
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Codes and classifies every column of `pixels`, preserving column order.
pub fn classify_testset(dict: &Dictionary, pixels: &DMatrix<f64>, solver: &SolverSpec) -> Result<Vec<usize>> {
    if pixels.ncols() == 0 {
        return Err(Error::Empty("no test pixels"));
    }
    if pixels.nrows() != dict.dim() {
        return Err(Error::Dimension(format!(
            "pixels have {} bands, dictionary has {}",
            pixels.nrows(),
            dict.dim()
        )));
    }
    solver.validate()?;
    match solver {
        SolverSpec::Asdn(p) => dict.cache().prefactor(&p.rho)?,
        SolverSpec::AdmmFixed(cfg) => dict.cache().prefactor(&[cfg.rho])?,
        _ => {}
    }
    (0..pixels.ncols())
        .into_par_iter()
        .map(|j| {
            let x = pixels.column(j).into_owned();
            let code = solver.code(dict, &x)?;
            src_decide(dict, code.coeffs(), &x)
        })
        .collect()
}

/// How a cube is split and prepared for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitProtocol {
    pub dict_frac: f64,
    pub train_frac: f64,
    /// Explicit `(dictionary, train)` counts per class; overrides the
    /// fractions when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<(usize, usize)>>,
    pub normalize: bool,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        // Roughly one training pixel for every ten test pixels.
        Self {
            dict_frac: 0.01,
            train_frac: 0.09,
            counts: None,
            normalize: true,
        }
    }
}

/// A split materialized into a dictionary and pixel matrices.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub split: Split,
    pub dictionary: Dictionary,
    pub train: DMatrix<f64>,
    pub train_labels: Vec<usize>,
    pub test: DMatrix<f64>,
    pub test_labels: Vec<usize>,
    pub test_ids: Vec<usize>,
}

pub fn prepare(cube: &LabeledCube, split: Split, normalize: bool) -> Result<PreparedSplit> {
    let (atoms, atom_labels) = extract_pixels(cube, &split.dictionary(), normalize)?;
    let dictionary = Dictionary::assemble_with_classes(&atoms, &atom_labels, cube.classes())?;
    let (train, train_labels) = extract_pixels(cube, &split.train(), normalize)?;
    let test_ids = split.test();
    let (test, test_labels) = extract_pixels(cube, &test_ids, normalize)?;
    Ok(PreparedSplit {
        split,
        dictionary,
        train,
        train_labels,
        test,
        test_labels,
        test_ids,
    })
}

pub fn prepare_with_seed(cube: &LabeledCube, protocol: &SplitProtocol, seed: u64) -> Result<PreparedSplit> {
    let split = match &protocol.counts {
        Some(counts) => make_split_counts(cube, counts, seed)?,
        None => make_split(cube, protocol.dict_frac, protocol.train_frac, seed)?,
    };
    prepare(cube, split, protocol.normalize)
}

/// The solver parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "S")]
    S,
    #[serde(rename = "step")]
    Step,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "rho")]
    Rho,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::K => "K",
            SweepParam::S => "S",
            SweepParam::Step => "step",
            SweepParam::Lambda => "lambda",
            SweepParam::Rho => "rho",
        })
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "K" | "k" => SweepParam::K,
            "S" | "s" => SweepParam::S,
            "step" => SweepParam::Step,
            "lambda" => SweepParam::Lambda,
            "rho" => SweepParam::Rho,
            other => return Err(invalid("param", format!("unknown sweep parameter `{other}`"))),
        })
    }
}

/// Mean and (population) standard deviation of each metric at one grid
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub aa_mean: f64,
    pub aa_std: f64,
    pub kappa_mean: f64,
    pub kappa_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub solver: SolverSpec,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub seeds: Vec<u64>,
}

impl SweepResult {
    /// Plot-ready CSV, metrics in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                p.value,
                p.oa_mean * 100.0,
                p.oa_std * 100.0,
                p.aa_mean * 100.0,
                p.aa_std * 100.0,
                p.kappa_mean * 100.0,
                p.kappa_std * 100.0
            )
            .unwrap();
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// For every grid value, redraws the split with seeds
/// `base_seed..base_seed + runs`, classifies the test pixels and averages
/// OA, AA and kappa over the runs.
pub fn sweep(
    cube: &LabeledCube,
    protocol: &SplitProtocol,
    solver: &SolverSpec,
    param: SweepParam,
    grid: &[f64],
    runs: usize,
    base_seed: u64,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    let specs = grid
        .iter()
        .map(|&v| solver.with_param(param, v))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..runs as u64).map(|r| base_seed + r).collect();
    let prepared = seeds
        .iter()
        .map(|&s| prepare_with_seed(cube, protocol, s))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(grid.len());
    for (&value, spec) in grid.iter().zip(&specs) {
        let annotate = |e: Error| Error::Sweep {
            param: param.to_string(),
            value,
            source: Box::new(e),
        };
        let mut oa = Vec::with_capacity(runs);
        let mut aa = Vec::with_capacity(runs);
        let mut kappa = Vec::with_capacity(runs);
        for p in &prepared {
            let pred = classify_testset(&p.dictionary, &p.test, spec).map_err(annotate)?;
            let report = evaluate(&pred, &p.test_labels, cube.classes()).map_err(annotate)?;
            oa.push(report.oa);
            aa.push(report.aa);
            kappa.push(report.kappa);
        }
        let (oa_mean, oa_std) = mean_std(&oa);
        let (aa_mean, aa_std) = mean_std(&aa);
        let (kappa_mean, kappa_std) = mean_std(&kappa);
        points.push(SweepPoint {
            value,
            oa_mean,
            oa_std,
            aa_mean,
            aa_std,
            kappa_mean,
            kappa_std,
        });
    }
    Ok(SweepResult {
        param,
        solver: solver.clone(),
        grid: grid.to_vec(),
        points,
        seeds,
    })
}
