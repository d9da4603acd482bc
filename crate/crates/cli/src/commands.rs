//! Subcommand bodies. Each one merges its flags into the configuration,
//! validates everything, and only then creates the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use asdn_core::asdn::{forward, grad_check, kink_margin, train, NetParams};
use asdn_core::classify::{classify_testset, evaluate, prepare_with_seed, sweep, SolverSpec, SweepResult};
use asdn_core::dataset::{load_bundle, make_split, make_split_counts, read_csv, save_bundle, BUNDLE_FILES};
use asdn_core::synthetic::random_problem;
use asdn_core::ClassificationReport;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, ExperimentConfig, SolverFlags};
use crate::manifest::{hash_file, InputRecord, Manifest};
use crate::{Cli, Command, DataArgs, Failure, GradcheckArgs, IngestArgs, SolverArgs, SweepArgs, TrainArgs};

const DEFAULT_OUT: &str = "out";
/// Gradient checks are only meaningful away from the shrinkage kinks.
const KINK_MARGIN: f64 = 1e-4;
const MAX_INSTANCE_TRIES: u64 = 1000;

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => config::load(path).map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let mut ctx = Context {
        inputs: Vec::new(),
        config_path: cli.config,
    };
    match cli.command {
        Command::Ingest(args) => ingest(cfg, args, &mut ctx),
        Command::Split(data) => split(cfg, data, &mut ctx),
        Command::Train { data, train } => train_cmd(cfg, data, train, &mut ctx),
        Command::Eval { data, solver } => eval(cfg, data, solver, &mut ctx),
        Command::Sweep { data, solver, sweep } => sweep_cmd(cfg, data, solver, sweep, &mut ctx),
        Command::Gradcheck(args) => gradcheck(cfg, args, &mut ctx),
        Command::Report { input } => report(cfg, input, &mut ctx),
    }
}

struct Context {
    inputs: Vec<InputRecord>,
    config_path: Option<PathBuf>,
}

impl Context {
    fn hash(&mut self, path: &Path) -> Result<(), Failure> {
        let rec = hash_file(path).map_err(|e| Failure::Runtime(format!("cannot read `{}`: {e}", path.display())))?;
        self.inputs.push(rec);
        Ok(())
    }

    fn hash_bundle(&mut self, dir: &Path) -> Result<(), Failure> {
        for name in BUNDLE_FILES {
            self.hash(&dir.join(name))?;
        }
        Ok(())
    }

    /// Writes `manifest.json` last, listing `outputs`.
    fn finish(
        mut self,
        out: &Path,
        command: &'static str,
        cfg: &ExperimentConfig,
        seeds: Value,
        mut outputs: Vec<&str>,
    ) -> Result<(), Failure> {
        if let Some(p) = self.config_path.take() {
            self.hash(&p)?;
        }
        outputs.push("manifest.json");
        let manifest = Manifest {
            tool: "asdn",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(cfg).map_err(|e| Failure::Runtime(e.to_string()))?,
            seeds,
            inputs: self.inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        write_json(&out.join("manifest.json"), &manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write `{}`: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read `{}`: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("`{}`: {e}", path.display()))
}

/// Creates the output directory and applies the thread cap. Called once
/// validation has passed.
fn prepare_run(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("cannot create `{}`: {e}", out.display())))?;
    Ok(out)
}

fn apply_data(cfg: &mut ExperimentConfig, args: DataArgs) -> Result<PathBuf, Failure> {
    if args.data.is_some() {
        cfg.data = args.data;
    }
    if let Some(v) = args.dict_frac {
        cfg.split.dict_frac = v;
    }
    if let Some(v) = args.train_frac {
        cfg.split.train_frac = v;
    }
    if let Some(v) = args.seed {
        cfg.split.seed = v;
    }
    if args.no_normalize {
        cfg.split.normalize = false;
    }
    config::check_split(&cfg.split).map_err(Failure::Config)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Failure::Config("no data bundle (--data or `data`)".into()))?;
    if !data.is_dir() {
        return Err(Failure::Config(format!("data bundle `{}` is not a directory", data.display())));
    }
    Ok(data)
}

fn apply_solver(cfg: &mut ExperimentConfig, args: SolverArgs) -> Result<SolverSpec, Failure> {
    let flags = SolverFlags {
        name: args.solver,
        k: args.k,
        s: args.s,
        lambda: args.lambda,
        rho: args.rho,
        tau: args.tau,
        step: args.step,
        tol: args.tol,
        max_iters: args.max_iters,
        stages: args.stages,
    };
    if args.params.is_some() {
        cfg.params = args.params;
    }
    let mut spec = config::resolve_solver(cfg.solver.as_ref(), &flags).map_err(Failure::Config)?;
    if let Some(path) = &cfg.params {
        if !matches!(spec, SolverSpec::Asdn(_)) {
            return Err(Failure::Config(format!("--params applies to asdn, not `{}`", spec.name())));
        }
        if flags.stages.is_some() {
            return Err(Failure::Config("--stages and --params are mutually exclusive".into()));
        }
        let params: NetParams = read_json(path).map_err(Failure::Config)?;
        spec = SolverSpec::Asdn(params);
    }
    cfg.solver = Some(spec.clone());
    Ok(spec)
}

fn ingest(mut cfg: ExperimentConfig, args: IngestArgs, ctx: &mut Context) -> Result<(), Failure> {
    if args.source.is_some() {
        cfg.ingest.source = args.source;
    }
    if args.width.is_some() {
        cfg.ingest.width = args.width;
    }
    let source = cfg
        .ingest
        .source
        .clone()
        .ok_or_else(|| Failure::Config("no source (--source or `ingest.source`)".into()))?;
    if !source.exists() {
        return Err(Failure::Config(format!("source `{}` does not exist", source.display())));
    }
    if cfg.ingest.width == Some(0) {
        return Err(Failure::Config("width must be positive".into()));
    }
    let out = prepare_run(&cfg)?;
    let cube = if source.is_dir() {
        ctx.hash_bundle(&source)?;
        load_bundle(&source)?
    } else {
        ctx.hash(&source)?;
        let file = fs::File::open(&source)
            .map_err(|e| Failure::Runtime(format!("cannot open `{}`: {e}", source.display())))?;
        read_csv(file, cfg.ingest.width)?
    };
    save_bundle(&cube, &out)?;
    let summary = json!({
        "height": cube.height(),
        "width": cube.width(),
        "bands": cube.bands(),
        "classes": cube.classes(),
        "class_counts": cube.class_counts(),
    });
    println!("{summary}");
    let mut outputs = BUNDLE_FILES.to_vec();
    outputs.sort();
    std::mem::take(ctx).finish(&out, "ingest", &cfg, json!({}), outputs)
}

impl Default for Context {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            config_path: None,
        }
    }
}

fn split(mut cfg: ExperimentConfig, data: DataArgs, ctx: &mut Context) -> Result<(), Failure> {
    let dir = apply_data(&mut cfg, data)?;
    let out = prepare_run(&cfg)?;
    ctx.hash_bundle(&dir)?;
    let cube = load_bundle(&dir)?;
    let s = match &cfg.split.counts {
        Some(counts) => make_split_counts(&cube, counts, cfg.split.seed)?,
        None => make_split(&cube, cfg.split.dict_frac, cfg.split.train_frac, cfg.split.seed)?,
    };
    let sizes = json!({
        "dictionary": s.dictionary_ids.iter().map(Vec::len).collect::<Vec<_>>(),
        "train": s.train_ids.iter().map(Vec::len).collect::<Vec<_>>(),
        "test": s.test_ids.iter().map(Vec::len).collect::<Vec<_>>(),
    });
    println!("{sizes}");
    write_json(&out.join("split.json"), &json!({ "sizes": sizes, "split": s }))?;
    let seeds = json!({ "split": cfg.split.seed });
    std::mem::take(ctx).finish(&out, "split", &cfg, seeds, vec!["split.json"])
}

fn train_cmd(mut cfg: ExperimentConfig, data: DataArgs, args: TrainArgs, ctx: &mut Context) -> Result<(), Failure> {
    let dir = apply_data(&mut cfg, data)?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.train_seed {
        cfg.train.seed = v;
    }
    if let Some(n) = args.stages {
        if n == 0 {
            return Err(Failure::Config("--stages must be at least 1".into()));
        }
        cfg.train.init = NetParams::with_stages(n);
    }
    cfg.train.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = prepare_run(&cfg)?;
    ctx.hash_bundle(&dir)?;
    let cube = load_bundle(&dir)?;
    let p = prepare_with_seed(&cube, &cfg.split.protocol(), cfg.split.seed)?;
    let outcome = train(&p.dictionary, &p.train, &p.train_labels, &cfg.train)?;
    write_json(&out.join("params.json"), &outcome.params)?;
    write_json(
        &out.join("train.json"),
        &json!({
            "loss_history": outcome.loss_history,
            "train_pixels": p.train.ncols(),
            "dictionary_atoms": p.dictionary.len(),
        }),
    )?;
    let first = outcome.loss_history[0];
    let last = outcome.loss_history[outcome.loss_history.len() - 1];
    println!("{}", json!({ "initial_loss": first, "final_loss": last }));
    let seeds = json!({ "split": cfg.split.seed, "train": cfg.train.seed });
    std::mem::take(ctx).finish(&out, "train", &cfg, seeds, vec!["params.json", "train.json"])
}

/// The `report.json` document written by `eval`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub solver: SolverSpec,
    pub split_seed: u64,
    pub dictionary_atoms: usize,
    pub train_pixels: usize,
    pub test_pixels: usize,
    pub height: usize,
    pub width: usize,
    pub metrics: ClassificationReport,
}

fn eval(mut cfg: ExperimentConfig, data: DataArgs, solver: SolverArgs, ctx: &mut Context) -> Result<(), Failure> {
    let dir = apply_data(&mut cfg, data)?;
    let spec = apply_solver(&mut cfg, solver)?;
    let out = prepare_run(&cfg)?;
    ctx.hash_bundle(&dir)?;
    if let Some(p) = cfg.params.clone() {
        ctx.hash(&p)?;
    }
    let cube = load_bundle(&dir)?;
    let p = prepare_with_seed(&cube, &cfg.split.protocol(), cfg.split.seed)?;
    let pred = classify_testset(&p.dictionary, &p.test, &spec)?;
    let metrics = evaluate(&pred, &p.test_labels, cube.classes())?;

    let mut grid = vec![0i32; cube.pixel_count()];
    for (&id, &c) in p.test_ids.iter().zip(&pred) {
        grid[id] = c as i32;
    }
    let bytes: Vec<u8> = grid.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(&out.join("labels_pred.bin"), &bytes)?;
    write_bytes(&out.join("report.csv"), metrics.to_csv().as_bytes())?;
    println!(
        "{}",
        json!({ "oa": metrics.oa, "aa": metrics.aa, "kappa": metrics.kappa, "test_pixels": pred.len() })
    );
    if !metrics.empty_classes.is_empty() {
        eprintln!(
            "{}",
            json!({ "status": "warning", "message": "classes without test pixels count as 0 in AA", "classes": metrics.empty_classes })
        );
    }
    let report = EvalReport {
        solver: spec,
        split_seed: cfg.split.seed,
        dictionary_atoms: p.dictionary.len(),
        train_pixels: p.train.ncols(),
        test_pixels: p.test.ncols(),
        height: cube.height(),
        width: cube.width(),
        metrics,
    };
    write_json(&out.join("report.json"), &report)?;
    let seeds = json!({ "split": cfg.split.seed });
    std::mem::take(ctx).finish(
        &out,
        "eval",
        &cfg,
        seeds,
        vec!["report.json", "report.csv", "labels_pred.bin"],
    )
}

fn sweep_cmd(
    mut cfg: ExperimentConfig,
    data: DataArgs,
    solver: SolverArgs,
    args: SweepArgs,
    ctx: &mut Context,
) -> Result<(), Failure> {
    let dir = apply_data(&mut cfg, data)?;
    let spec = apply_solver(&mut cfg, solver)?;
    if let Some(p) = &args.param {
        cfg.sweep.param = Some(p.parse().map_err(|e: asdn_core::Error| Failure::Config(e.to_string()))?);
    }
    if args.grid.is_some() {
        cfg.sweep.grid = args.grid;
    }
    if let Some(r) = args.runs {
        cfg.sweep.runs = r;
    }
    let (param, grid) = config::resolve_grid(&cfg.sweep).map_err(Failure::Config)?;
    for &v in &grid {
        spec.with_param(param, v).map_err(|e| Failure::Config(format!("grid value {v}: {e}")))?;
    }
    let out = prepare_run(&cfg)?;
    ctx.hash_bundle(&dir)?;
    if let Some(p) = cfg.params.clone() {
        ctx.hash(&p)?;
    }
    let cube = load_bundle(&dir)?;
    let result = sweep(
        &cube,
        &cfg.split.protocol(),
        &spec,
        param,
        &grid,
        cfg.sweep.runs,
        cfg.split.seed,
    )?;
    write_bytes(&out.join("sweep.csv"), result.to_csv().as_bytes())?;
    write_json(&out.join("sweep.json"), &result)?;
    println!("{}", json!({ "param": param.to_string(), "points": result.points.len(), "runs": cfg.sweep.runs }));
    let seeds = json!({ "splits": result.seeds });
    std::mem::take(ctx).finish(&out, "sweep", &cfg, seeds, vec!["sweep.csv", "sweep.json"])
}

fn gradcheck(mut cfg: ExperimentConfig, args: GradcheckArgs, ctx: &mut Context) -> Result<(), Failure> {
    let g = &mut cfg.gradcheck;
    if let Some(v) = args.stages {
        g.stages = v;
    }
    if let Some(v) = args.seed {
        g.seed = v;
    }
    if let Some(v) = args.step {
        g.step = v;
    }
    if let Some(v) = args.tolerance {
        g.tolerance = v;
    }
    if g.stages == 0 {
        return Err(Failure::Config("gradcheck.stages must be at least 1".into()));
    }
    if !(g.step > 0.0 && g.step.is_finite()) || !(g.tolerance > 0.0) {
        return Err(Failure::Config("gradcheck.step and gradcheck.tolerance must be positive".into()));
    }
    let g = cfg.gradcheck.clone();
    let out = prepare_run(&cfg)?;
    let params = NetParams::with_stages(g.stages);

    let mut found = None;
    for seed in g.seed..g.seed + MAX_INSTANCE_TRIES {
        let (dict, x, target) = random_problem(seed, 20, 40, 2);
        let (_, trace) = forward(&dict, &x, &params)?;
        if kink_margin(&params, &trace) >= KINK_MARGIN {
            found = Some((seed, grad_check(&dict, &x, target, &params, g.step)?));
            break;
        }
    }
    let (instance_seed, report) = found.ok_or_else(|| {
        Failure::Runtime(format!("no kink-free instance in {MAX_INSTANCE_TRIES} seeds from {}", g.seed))
    })?;
    write_json(
        &out.join("gradcheck.json"),
        &json!({ "instance_seed": instance_seed, "tolerance": g.tolerance, "report": report }),
    )?;
    let pass = report.max_rel_error <= g.tolerance;
    println!(
        "{}",
        json!({
            "max_rel_error": report.max_rel_error,
            "max_abs_error": report.max_abs_error,
            "instance_seed": instance_seed,
            "tolerance": g.tolerance,
            "pass": pass,
        })
    );
    let seeds = json!({ "gradcheck": g.seed, "instance": instance_seed });
    std::mem::take(ctx).finish(&out, "gradcheck", &cfg, seeds, vec!["gradcheck.json"])?;
    if !pass {
        return Err(Failure::Runtime(format!(
            "max relative error {:e} exceeds tolerance {:e}",
            report.max_rel_error, g.tolerance
        )));
    }
    Ok(())
}

fn report(mut cfg: ExperimentConfig, input: Option<PathBuf>, ctx: &mut Context) -> Result<(), Failure> {
    if input.is_some() {
        cfg.input = input;
    }
    let dir = cfg
        .input
        .clone()
        .ok_or_else(|| Failure::Config("no run directory (--input or `input`)".into()))?;
    if !dir.is_dir() {
        return Err(Failure::Config(format!("run directory `{}` does not exist", dir.display())));
    }
    if cfg.out.is_none() {
        cfg.out = Some(dir.join("summary"));
    }
    let out = prepare_run(&cfg)?;
    let mut text = String::new();
    let report_path = dir.join("report.json");
    let sweep_path = dir.join("sweep.json");
    if report_path.is_file() {
        ctx.hash(&report_path)?;
        let r: EvalReport = read_json(&report_path).map_err(Failure::Runtime)?;
        text.push_str(&format!(
            "solver {} on {} test pixels (split seed {})\n",
            r.solver.name(),
            r.test_pixels,
            r.split_seed
        ));
        for (c, acc) in r.metrics.per_class_acc.iter().enumerate() {
            text.push_str(&format!("  class {:>2}  {:6.2}\n", c + 1, acc * 100.0));
        }
        text.push_str(&format!(
            "  OA {:.2}  AA {:.2}  kappa {:.2}\n",
            r.metrics.oa * 100.0,
            r.metrics.aa * 100.0,
            r.metrics.kappa * 100.0
        ));
    }
    if sweep_path.is_file() {
        ctx.hash(&sweep_path)?;
        let s: SweepResult = read_json(&sweep_path).map_err(Failure::Runtime)?;
        text.push_str(&format!(
            "sweep of {} for {} over {} runs\n",
            s.param,
            s.solver.name(),
            s.seeds.len()
        ));
        for p in &s.points {
            text.push_str(&format!(
                "  {:>8}  OA {:6.2} ± {:5.2}  AA {:6.2} ± {:5.2}  kappa {:6.2} ± {:5.2}\n",
                p.value,
                p.oa_mean * 100.0,
                p.oa_std * 100.0,
                p.aa_mean * 100.0,
                p.aa_std * 100.0,
                p.kappa_mean * 100.0,
                p.kappa_std * 100.0
            ));
        }
    }
    if text.is_empty() {
        return Err(Failure::Runtime(format!(
            "`{}` holds neither report.json nor sweep.json",
            dir.display()
        )));
    }
    print!("{text}");
    write_bytes(&out.join("summary.txt"), text.as_bytes())?;
    std::mem::take(ctx).finish(&out, "report", &cfg, json!({}), vec!["summary.txt"])
}
