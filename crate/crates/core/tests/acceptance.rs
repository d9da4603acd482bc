//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! binding criterion fails.
//!
//! Criterion 8 needs the Pavia University cube as a bundle directory named
//! by `ASDN_PAVIA_BUNDLE`; without it the line reads `SKIP`, and a miss of
//! the accuracy band is printed as `MISS`. Neither fails the run.

use std::time::{Duration, Instant};

use asdn_core::asdn::{forward, grad_check, kink_margin, train, NetParams, TrainConfig};
use asdn_core::classify::{
    argmin, classify_testset, evaluate, prepare_with_seed, report_from_confusion, sweep, SolverSpec, SplitProtocol,
    SweepParam,
};
use asdn_core::dataset::load_bundle;
use asdn_core::solvers::{
    admm_fixed, admm_iterates, fista, gomp, lasso_objective, omp, romp, samp, sp, AdmmConfig, FistaConfig,
};
use asdn_core::synthetic::{
    gaussian_matrix, gaussian_vector, normalize_columns, planted_sparse, random_orthonormal, SubspaceData,
    SubspaceSpec,
};
use asdn_core::{Dictionary, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass,
    Fail,
    /// Non-binding outcome, printed with the given tag.
    Report(&'static str),
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) -> Outcome {
    let start = Instant::now();
    let mut out = match f() {
        Ok(o) => o,
        Err(e) => Outcome::check(false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    out.detail = format!("{} [{:.2}s]", out.detail, elapsed.as_secs_f64());
    if let Some(b) = budget {
        if elapsed > b && matches!(out.verdict, Verdict::Pass) {
            out.verdict = Verdict::Fail;
            out.detail = format!("{} over the {:.0}s budget", out.detail, b.as_secs_f64());
        }
    }
    out
}

fn random_dictionary(rng: &mut ChaCha8Rng, l: usize, m: usize, classes: usize) -> Result<Dictionary> {
    let mut a = gaussian_matrix(rng, l, m);
    normalize_columns(&mut a);
    let labels: Vec<usize> = (0..m).map(|j| 1 + j * classes / m).collect();
    Dictionary::assemble(&a, &labels)
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn unrolling_equivalence() -> Result<Outcome> {
    let n = 20;
    let params = NetParams::uniform(n, 1.0, 0.1, 1.0, 1.0);
    let cfg = AdmmConfig {
        lambda: 0.1,
        rho: 1.0,
        relax: 1.0,
        tau: 1.0,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dictionary(&mut rng, 50, 100, 2)?;
        let x = gaussian_vector(&mut rng, 50);
        let (code, trace) = forward(&d, &x, &params)?;
        let iters = admm_iterates(&d, &x, &cfg, n + 1)?;
        for (k, it) in iters.iter().take(n).enumerate() {
            worst = worst
                .max(max_abs(&trace.alpha_seq[k], &it.alpha))
                .max(max_abs(&trace.z_seq[k], &it.z))
                .max(max_abs(&trace.u_seq[k], &it.u));
        }
        worst = worst.max(max_abs(code.coeffs(), &iters[n].alpha));
    }
    Ok(Outcome::check(worst <= 1e-12, format!("max |forward - admm| = {worst:.2e} over 20 instances")))
}

fn gradient_correctness() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut accepted = 0;
    let mut seed = 0u64;
    let mut min_margin = f64::INFINITY;
    while accepted < 10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        seed += 1;
        let d = random_dictionary(&mut rng, 20, 40, 2)?;
        let x = gaussian_vector(&mut rng, 20);
        let target = rng.random_range(0..2);
        let params = NetParams {
            rho: (0..6).map(|_| rng.random_range(0.5..2.0)).collect(),
            eta: (0..5).map(|_| rng.random_range(0.02..0.2)).collect(),
            tau: (0..5).map(|_| rng.random_range(0.5..1.5)).collect(),
            relax: 1.0,
        };
        let (_, trace) = forward(&d, &x, &params)?;
        // The finite differences straddle the evaluation point, so keep it
        // clear of every shrinkage kink.
        if kink_margin(&params, &trace) < 1e-4 {
            continue;
        }
        let report = grad_check(&d, &x, target, &params, 1e-6)?;
        worst = worst.max(report.max_rel_error);
        worst_abs = worst_abs.max(report.max_abs_error);
        min_margin = min_margin.min(report.kink_margin);
        accepted += 1;
    }
    Ok(Outcome::check(
        worst <= 1e-5,
        format!(
            "max relative error {worst:.2e} (absolute {worst_abs:.1e}) on 10 instances ({seed} drawn, kink margin >= {min_margin:.1e})"
        ),
    ))
}

fn l1_cross_oracle() -> Result<Outcome> {
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let d = random_dictionary(&mut rng, 40, 80, 2)?;
        let x = gaussian_vector(&mut rng, 40);
        for lambda in [0.01, 0.1] {
            let f = fista(&d, &x, &FistaConfig { lambda, max_iters: 50_000, tol: 1e-12 })?;
            // At the default penalty rho = 1 the small-lambda instances need
            // on the order of 1e5 iterations.
            let cfg = AdmmConfig {
                lambda,
                max_iters: 500_000,
                tol: 1e-10,
                ..Default::default()
            };
            let z = admm_fixed(&d, &x, &cfg)?;
            let of = lasso_objective(&d, &x, f.coeffs(), lambda);
            let oz = lasso_objective(&d, &x, z.coeffs(), lambda);
            worst_gap = worst_gap.max((of - oz).abs() / of.max(oz));

            let grad = d.atoms().tr_mul(&(&x - d.synthesize(z.coeffs())));
            for (j, &zj) in z.coeffs().iter().enumerate() {
                let violation = if zj != 0.0 {
                    (grad[j] - lambda * zj.signum()).abs()
                } else {
                    (grad[j].abs() - lambda).max(0.0)
                };
                worst_kkt = worst_kkt.max(violation);
            }
        }
    }
    Ok(Outcome::check(
        worst_gap <= 1e-6 && worst_kkt <= 1e-4,
        format!("max relative objective gap {worst_gap:.2e}, max KKT violation {worst_kkt:.2e}"),
    ))
}

fn greedy_recovery() -> Result<Outcome> {
    let names = ["omp", "sp", "romp", "gomp", "samp"];
    let mut recovered = [0usize; 5];
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let q = random_orthonormal(&mut rng, 64);
        let truth = planted_sparse(&mut rng, 64, 5);
        let x = &q * &truth;
        let d = Dictionary::assemble(&q, &[1; 64])?;
        let support: Vec<usize> = (0..64).filter(|&j| truth[j] != 0.0).collect();
        let codes = [
            omp(&d, &x, 5)?,
            sp(&d, &x, 5)?,
            romp(&d, &x, 5)?,
            gomp(&d, &x, 5, 2)?,
            samp(&d, &x, 1, 1e-10)?,
        ];
        for (i, code) in codes.iter().enumerate() {
            let err = max_abs(code.coeffs(), &truth);
            worst = worst.max(err);
            if code.support() == support.as_slice() && err <= 1e-10 {
                recovered[i] += 1;
            }
        }
    }
    let summary: Vec<String> = names.iter().zip(&recovered).map(|(n, r)| format!("{n} {r}/100")).collect();
    Ok(Outcome::check(
        recovered.iter().all(|&r| r == 100),
        format!("{}; max coefficient error {worst:.2e}", summary.join(", ")),
    ))
}

fn subspace_data(seed: u64) -> SubspaceData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SubspaceSpec::default().generate(&mut rng)
}

/// Class of the smallest residual after orthogonal projection onto each
/// class's true subspace.
fn projection_oracle(data: &SubspaceData, x: &DVector<f64>) -> usize {
    let r: Vec<f64> = data.bases.iter().map(|b| (x - b * b.tr_mul(x)).norm()).collect();
    argmin(&r) + 1
}

fn oa(dict: &Dictionary, pixels: &DMatrix<f64>, labels: &[usize], solver: &SolverSpec) -> Result<f64> {
    let pred = classify_testset(dict, pixels, solver)?;
    Ok(evaluate(&pred, labels, dict.classes())?.oa)
}

fn synthetic_classification() -> Result<Outcome> {
    let data = subspace_data(4000);
    let d = Dictionary::assemble(&data.dictionary, &data.dictionary_labels)?;
    let oracle: Vec<usize> = data
        .test
        .column_iter()
        .map(|c| projection_oracle(&data, &c.into_owned()))
        .collect();
    let oracle_oa = evaluate(&oracle, &data.test_labels, 3)?.oa;
    let omp_oa = oa(&d, &data.test, &data.test_labels, &SolverSpec::Omp { k: 5 })?;
    let asdn_oa = oa(&d, &data.test, &data.test_labels, &SolverSpec::Asdn(NetParams::default()))?;
    Ok(Outcome::check(
        omp_oa >= 0.99 && asdn_oa >= 0.99,
        format!("OA omp(K=5) {omp_oa:.4}, asdn(untrained) {asdn_oa:.4}, projection oracle {oracle_oa:.4}"),
    ))
}

fn training_improves() -> Result<Outcome> {
    let data = subspace_data(5000);
    let d = Dictionary::assemble(&data.dictionary, &data.dictionary_labels)?;
    let init = NetParams::uniform(9, 1.0, 0.9, 1.0, 1.0);
    let cfg = TrainConfig {
        init: init.clone(),
        ..Default::default()
    };
    let out = train(&d, &data.train, &data.train_labels, &cfg)?;
    let first = out.loss_history[0];
    let last = *out.loss_history.last().unwrap();
    let before = oa(&d, &data.test, &data.test_labels, &SolverSpec::Asdn(init))?;
    let after = oa(&d, &data.test, &data.test_labels, &SolverSpec::Asdn(out.params))?;
    Ok(Outcome::check(
        last < first && after >= before,
        format!("training loss {first:.4} -> {last:.4}, test OA {before:.4} -> {after:.4}"),
    ))
}

/// Expected agreement from every (truth item, prediction item) pairing.
fn brute_force_kappa(confusion: &[Vec<u64>]) -> f64 {
    let c = confusion.len();
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for i in 0..c {
        for j in 0..c {
            for _ in 0..confusion[i][j] {
                truth.push(i);
                pred.push(j);
            }
        }
    }
    let n = truth.len() as f64;
    let observed = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n;
    let pairs = truth.iter().map(|t| pred.iter().filter(|p| *p == t).count()).sum::<usize>();
    let expected = pairs as f64 / (n * n);
    if expected < 1.0 {
        (observed - expected) / (1.0 - expected)
    } else {
        1.0
    }
}

fn metrics_oracle() -> Result<Outcome> {
    let hand = evaluate(&[1, 2, 2, 2], &[1, 1, 2, 2], 2)?;
    let hand_ok = hand.confusion == vec![vec![1, 1], vec![0, 2]] && hand.oa == 0.75 && hand.kappa == 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let c = rng.random_range(1..=6);
        let m: Vec<Vec<u64>> = (0..c).map(|_| (0..c).map(|_| rng.random_range(0..=20)).collect()).collect();
        if m.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        worst = worst.max((report_from_confusion(m.clone()).kappa - brute_force_kappa(&m)).abs());
        checked += 1;
    }
    Ok(Outcome::check(
        hand_ok && worst <= 1e-12,
        format!(
            "hand example oa {} kappa {}; max kappa gap {worst:.1e} on 1000 matrices",
            hand.oa, hand.kappa
        ),
    ))
}

/// Dictionary and training pixels per class in the published Pavia
/// University split.
const PAVIA_COUNTS: [(usize, usize); 9] = [
    (66, 597),
    (186, 932),
    (21, 189),
    (31, 276),
    (13, 269),
    (50, 453),
    (13, 266),
    (37, 331),
    (9, 189),
];
const PAVIA_OA: f64 = 0.8502;

fn protocol_fidelity() -> Result<Outcome> {
    let Ok(dir) = std::env::var("ASDN_PAVIA_BUNDLE") else {
        return Ok(Outcome {
            verdict: Verdict::Report("SKIP"),
            detail: "ASDN_PAVIA_BUNDLE not set".into(),
        });
    };
    let cube = load_bundle(&dir)?;
    let protocol = SplitProtocol {
        counts: Some(PAVIA_COUNTS.to_vec()),
        ..Default::default()
    };
    let p = prepare_with_seed(&cube, &protocol, 0)?;
    let sizes = (p.dictionary.len(), p.train.ncols(), p.test.ncols());
    let grid: Vec<f64> = (1..=10).map(f64::from).collect();
    let curve = sweep(&cube, &protocol, &SolverSpec::Omp { k: 1 }, SweepParam::K, &grid, 1, 0)?;
    let out = train(&p.dictionary, &p.train, &p.train_labels, &TrainConfig::default())?;
    let trained = oa(&p.dictionary, &p.test, &p.test_labels, &SolverSpec::Asdn(out.params))?;
    let within = (trained - PAVIA_OA).abs() <= 0.03;
    Ok(Outcome {
        verdict: if within { Verdict::Pass } else { Verdict::Report("MISS") },
        detail: format!(
            "split {sizes:?}, omp sweep {} points, trained asdn OA {:.2} vs {:.2}",
            curve.points.len(),
            trained * 100.0,
            PAVIA_OA * 100.0
        ),
    })
}

fn main() {
    let criteria: Vec<(u32, &str, Option<Duration>, fn() -> Result<Outcome>)> = vec![
        (1, "unrolling equivalence", Some(Duration::from_secs(1)), unrolling_equivalence),
        (2, "gradient correctness", Some(Duration::from_secs(5)), gradient_correctness),
        (3, "l1 solver cross-oracle", None, l1_cross_oracle),
        (4, "greedy exact recovery", None, greedy_recovery),
        (5, "synthetic classification", None, synthetic_classification),
        (6, "training improves the network", Some(Duration::from_secs(60)), training_improves),
        (7, "metrics oracle", None, metrics_oracle),
        (8, "protocol fidelity (non-binding)", None, protocol_fidelity),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let out = timed(budget, run);
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Report(tag) => tag,
        };
        println!("{tag} [{id}] {name}: {}", out.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
