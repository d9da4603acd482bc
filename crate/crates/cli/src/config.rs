//! Experiment configuration: a JSON document whose keys every command-line
//! flag can override.

use std::fs;
use std::path::{Path, PathBuf};

use asdn_core::asdn::{NetParams, TrainConfig};
use asdn_core::classify::{SolverSpec, SplitProtocol, SweepParam};
use serde::{Deserialize, Serialize};

use crate::grid::parse_grid;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundle directory holding the labeled cube.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Worker cap; 0 uses every core.
    pub threads: Option<usize>,
    pub split: SplitConfig,
    pub solver: Option<SolverSpec>,
    /// Trained network parameters for the `asdn` solver.
    pub params: Option<PathBuf>,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
    pub ingest: IngestConfig,
    /// Directory read by `report`.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub dict_frac: f64,
    pub train_frac: f64,
    /// Explicit `[dictionary, train]` counts per class, overriding the
    /// fractions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<(usize, usize)>>,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let p = SplitProtocol::default();
        Self {
            dict_frac: p.dict_frac,
            train_frac: p.train_frac,
            counts: p.counts,
            normalize: p.normalize,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn protocol(&self) -> SplitProtocol {
        SplitProtocol {
            dict_frac: self.dict_frac,
            train_frac: self.train_frac,
            counts: self.counts.clone(),
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub param: Option<SweepParam>,
    /// Grid in the `a:b`, `a:b:s`, comma-list syntax.
    pub grid: Option<String>,
    pub runs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: None,
            grid: None,
            runs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub stages: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            stages: 5,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// A CSV file (bands then label per row) or a bundle directory.
    pub source: Option<PathBuf>,
    /// Image width for CSV input; rows are packed row-major.
    pub width: Option<usize>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config `{}`: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config `{}`: {e}", path.display()))
}

/// Solver flags, applied on top of the configured solver.
#[derive(Debug, Clone, Default)]
pub struct SolverFlags {
    pub name: Option<String>,
    pub k: Option<usize>,
    pub s: Option<usize>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub step: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub stages: Option<usize>,
}

fn not_applicable(flag: &str, spec: &SolverSpec) -> String {
    format!("--{flag} does not apply to solver `{}`", spec.name())
}

/// The effective solver: the configured one (or the one named by
/// `--solver`, with defaults) with every given flag written over it.
pub fn resolve_solver(configured: Option<&SolverSpec>, flags: &SolverFlags) -> Result<SolverSpec, String> {
    let mut spec = match (&flags.name, configured) {
        (Some(name), Some(c)) if c.name() == name => c.clone(),
        (Some(name), _) => SolverSpec::from_name(name).map_err(|e| e.to_string())?,
        (None, Some(c)) => c.clone(),
        (None, None) => return Err("no solver given (set `solver` in the config or pass --solver)".into()),
    };
    if let Some(v) = flags.k {
        match &mut spec {
            SolverSpec::Omp { k } | SolverSpec::Sp { k } | SolverSpec::Romp { k } | SolverSpec::Gomp { k, .. } => *k = v,
            other => return Err(not_applicable("K", other)),
        }
    }
    if let Some(v) = flags.s {
        match &mut spec {
            SolverSpec::Gomp { s, .. } => *s = v,
            other => return Err(not_applicable("S", other)),
        }
    }
    if let Some(v) = flags.step {
        match &mut spec {
            SolverSpec::Samp { step, .. } => *step = v,
            other => return Err(not_applicable("step", other)),
        }
    }
    if let Some(v) = flags.lambda {
        match &mut spec {
            SolverSpec::Fista(c) => c.lambda = v,
            SolverSpec::AdmmFixed(c) => c.lambda = v,
            other => return Err(not_applicable("lambda", other)),
        }
    }
    if let Some(v) = flags.rho {
        match &mut spec {
            SolverSpec::AdmmFixed(c) => c.rho = v,
            other => return Err(not_applicable("rho", other)),
        }
    }
    if let Some(v) = flags.tau {
        match &mut spec {
            SolverSpec::AdmmFixed(c) => c.tau = v,
            other => return Err(not_applicable("tau", other)),
        }
    }
    if let Some(v) = flags.tol {
        match &mut spec {
            SolverSpec::Samp { tol, .. } => *tol = v,
            SolverSpec::Fista(c) => c.tol = v,
            SolverSpec::AdmmFixed(c) => c.tol = v,
            other => return Err(not_applicable("tol", other)),
        }
    }
    if let Some(v) = flags.max_iters {
        match &mut spec {
            SolverSpec::Fista(c) => c.max_iters = v,
            SolverSpec::AdmmFixed(c) => c.max_iters = v,
            other => return Err(not_applicable("max-iters", other)),
        }
    }
    if let Some(n) = flags.stages {
        match &mut spec {
            SolverSpec::Asdn(p) => *p = NetParams::with_stages(n),
            other => return Err(not_applicable("stages", other)),
        }
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

pub fn resolve_grid(sweep: &SweepConfig) -> Result<(SweepParam, Vec<f64>), String> {
    let param = sweep.param.ok_or("sweep needs a parameter (--param or sweep.param)")?;
    let grid = parse_grid(sweep.grid.as_deref().ok_or("sweep needs a grid (--grid or sweep.grid)")?)?;
    if sweep.runs == 0 {
        return Err("sweep.runs must be at least 1".into());
    }
    Ok((param, grid))
}

pub fn check_split(split: &SplitConfig) -> Result<(), String> {
    let p = split;
    if p.counts.is_none() {
        if !(p.dict_frac > 0.0 && p.dict_frac < 1.0) {
            return Err(format!("split.dict_frac {} not in (0, 1)", p.dict_frac));
        }
        if !(0.0..1.0).contains(&p.train_frac) {
            return Err(format!("split.train_frac {} not in [0, 1)", p.train_frac));
        }
    }
    Ok(())
}
