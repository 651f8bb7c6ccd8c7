//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Environment:
//! - `INFLUENS_ACCEPTANCE_REPS`: replicates per simulation cell (default 5;
//!   the reference setting is 100).
//! - `INFLUENS_ACCEPTANCE_OUT`: directory for the long and aggregated CSVs.
//! - `INFLUENS_ACCEPTANCE_STRICT=1`: exit non-zero when any criterion fails.
//!   Without it only criterion 8 (the deterministic property suite) affects
//!   the exit status, since the simulation criteria are Monte Carlo
//!   statements about 100-replicate cells.

// NaN powers must count as failures, hence `!(v >= need)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use influens::bootstrap::{boot2_quantile, boot3_midquantile, BootstrapConfig};
use influens::count_models::{fit_mixture_em_traced, CountFamily, MixtureKind};
use influens::detection::{clusmip_profile, clusmip_sweep, Backend, ClusMipConfig, MipConfig};
use influens::selectors::{fit_path, kkt_violation, lambda_max, SelectorSpec};
use influens::simharness::{
    clean_replicate, replicate, run_kappa_grid, CellSummary, ClusMipDetector, DfLassoDetector, MipDetector,
    Perturbation, PowerReport, SimConfig, SimDetector, NO_BACKEND,
};
use influens::thresholds::{empirical_mid_distribution, mid_quantile};
use influens::{rng, Dataset, Selector, Task};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use statrs::distribution::Discrete;

const ALPHA: f64 = 0.05;
const SEED: u64 = 20_240_601;
const KAPPAS: [f64; 3] = [5.0, 10.0, 30.0];
const RHO: f64 = 0.5;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>, details: Vec<String>) -> Self {
        Outcome { pass, summary: summary.into(), details }
    }
}

/// Cell summaries keyed by (perturbation, detector, backend, kappa).
struct Cells(Vec<CellSummary>);

impl Cells {
    fn get(&self, pert: Perturbation, detector: &str, backend: &str, kappa: f64) -> Option<&CellSummary> {
        self.0
            .iter()
            .find(|c| c.perturbation == pert && c.detector == detector && c.backend == backend && c.kappa == kappa)
    }

    fn power(&self, pert: Perturbation, detector: &str, backend: &str, kappa: f64) -> f64 {
        self.get(pert, detector, backend, kappa).and_then(|c| c.power).unwrap_or(f64::NAN)
    }
}

fn fmt_power(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.3}")
    }
}

fn run_cells(reps: usize) -> (Cells, Vec<PowerReport>) {
    let backends = Backend::ALL;
    let linear: Vec<ClusMipDetector> = [Selector::Lasso, Selector::ScaledLasso, Selector::Scad, Selector::Mcp]
        .into_iter()
        .map(|s| ClusMipDetector::new(s, ALPHA, &backends))
        .collect();
    let logistic: Vec<ClusMipDetector> =
        [Selector::Lasso, Selector::Scad, Selector::Mcp].into_iter().map(|s| ClusMipDetector::new(s, ALPHA, &backends)).collect();
    let df = DfLassoDetector;
    let mip = MipDetector(MipConfig::new(ALPHA, 0));

    let mut reports = Vec::new();
    let plan = [
        (Task::Linear, Perturbation::IY),
        (Task::Linear, Perturbation::IIX),
        (Task::Linear, Perturbation::IIIXY),
        (Task::Logistic, Perturbation::LogisticX),
    ];
    for (task, pert) in plan {
        let mut dets: Vec<&dyn SimDetector> = match task {
            Task::Linear => linear.iter().map(|d| d as &dyn SimDetector).collect(),
            Task::Logistic => logistic.iter().map(|d| d as &dyn SimDetector).collect(),
        };
        dets.push(&df);
        // MIP is a linear-model procedure.
        if task == Task::Linear {
            dets.push(&mip);
        }
        let cfg = SimConfig { n_reps: reps, ..SimConfig::desk(task, RHO, pert, KAPPAS[0], SEED) };
        let t = Instant::now();
        let report = run_kappa_grid(&cfg, &KAPPAS, &dets).expect("simulation configuration is valid");
        eprintln!("[acceptance] {pert}: {reps} reps x {} kappas in {:.0} s", KAPPAS.len(), t.elapsed().as_secs_f64());
        reports.push(report);
    }
    let cells = reports.iter().flat_map(PowerReport::summary).collect();
    (Cells(cells), reports)
}

fn criterion1(cells: &Cells) -> Outcome {
    let limit = ALPHA + 0.03;
    let mut bad = Vec::new();
    let mut worst: Option<&CellSummary> = None;
    let mut empty = Vec::new();
    for c in &cells.0 {
        if c.reps == 0 {
            empty.push(format!("{} {} {} kappa={}: no successful replicate", c.perturbation, c.detector, c.backend, c.kappa));
            continue;
        }
        if worst.is_none_or(|w| c.fpr > w.fpr) {
            worst = Some(c);
        }
        if !(c.fpr <= limit) {
            bad.push(format!("{} {} {} kappa={}: FPR {:.3}", c.perturbation, c.detector, c.backend, c.kappa, c.fpr));
        }
    }
    let w = worst.expect("at least one cell");
    let scored = cells.0.len() - empty.len();
    let summary = format!(
        "{}/{scored} cells with FPR <= {limit:.2}; worst {} {} {} kappa={} at {:.3}",
        scored - bad.len(),
        w.perturbation,
        w.detector,
        w.backend,
        w.kappa,
        w.fpr
    );
    let pass = bad.is_empty();
    bad.extend(empty);
    Outcome::new(pass, summary, bad)
}

fn criterion2(cells: &Cells) -> Outcome {
    let det = "ClusMIP(SLASSO)";
    let mut bad = Vec::new();
    let mut lo = f64::INFINITY;
    for pert in [Perturbation::IY, Perturbation::IIX] {
        for &k in &KAPPAS {
            for b in Backend::ALL {
                let need = match b {
                    Backend::ParamBb if k >= 30.0 => 0.95,
                    Backend::ParamBb => 0.85,
                    _ => 0.90,
                };
                let v = cells.power(pert, det, b.name(), k);
                lo = lo.min(v);
                if !(v >= need) {
                    bad.push(format!("{pert} {b} kappa={k}: power {} < {need}", fmt_power(v)));
                }
            }
        }
    }
    Outcome::new(bad.is_empty(), format!("{} of 60 cells below target; lowest power {}", bad.len(), fmt_power(lo)), bad)
}

fn criterion3(cells: &Cells) -> Outcome {
    let mut bad = Vec::new();
    let mut lines = Vec::new();
    for (pert, limit) in [(Perturbation::IY, 0.15), (Perturbation::LogisticX, 0.10)] {
        for &k in &KAPPAS {
            let v = cells.power(pert, "DF(LASSO)", NO_BACKEND, k);
            lines.push(format!("{pert} kappa={k}: {}", fmt_power(v)));
            if !(v <= limit) {
                bad.push(format!("{pert} kappa={k}: power {} > {limit}", fmt_power(v)));
            }
        }
    }
    Outcome::new(bad.is_empty(), format!("DF(LASSO) power {}", lines.join(", ")), bad)
}

fn criterion4(cells: &Cells) -> Outcome {
    let p = |pert, k| cells.power(pert, "MIP", NO_BACKEND, k);
    let mut bad = Vec::new();
    let (i5, i30) = (p(Perturbation::IY, 5.0), p(Perturbation::IY, 30.0));
    if !(i5 <= 0.20) {
        bad.push(format!("I_Y kappa=5: power {} > 0.20", fmt_power(i5)));
    }
    if !(i30 >= 0.90) {
        bad.push(format!("I_Y kappa=30: power {} < 0.90", fmt_power(i30)));
    }
    let ii: Vec<f64> = KAPPAS.iter().map(|&k| p(Perturbation::IIX, k)).collect();
    for (k, v) in KAPPAS.iter().zip(&ii) {
        if !(*v <= 0.40) {
            bad.push(format!("II_X kappa={k}: power {} > 0.40", fmt_power(*v)));
        }
    }
    let summary = format!(
        "MIP I_Y power {} / {} / {} (kappa 5/10/30); II_X {}",
        fmt_power(i5),
        fmt_power(p(Perturbation::IY, 10.0)),
        fmt_power(i30),
        ii.iter().map(|v| fmt_power(*v)).collect::<Vec<_>>().join(" / ")
    );
    Outcome::new(bad.is_empty(), summary, bad)
}

/// ClusMIP(LASSO) backend powers under I_Y at one kappa.
fn lasso_powers(cells: &Cells, k: f64) -> BTreeMap<Backend, f64> {
    Backend::ALL.into_iter().map(|b| (b, cells.power(Perturbation::IY, "ClusMIP(LASSO)", b.name(), k))).collect()
}

fn criterion5(cells: &Cells) -> Outcome {
    let tol = 0.07;
    let mut bad = Vec::new();
    let mut lines = Vec::new();
    for &k in &KAPPAS {
        let pw = lasso_powers(cells, k);
        let boot1 = pw[&Backend::BootI];
        let bb = pw[&Backend::ParamBb];
        let max = pw.values().copied().fold(f64::NEG_INFINITY, f64::max);
        lines.push(format!("kappa={k}: Boot-I {} BB {} max {}", fmt_power(boot1), fmt_power(bb), fmt_power(max)));
        if !(boot1 >= bb - 0.02) {
            bad.push(format!("kappa={k}: Boot-I {} < Param-BB {} - 0.02", fmt_power(boot1), fmt_power(bb)));
        }
        if !(boot1 >= max - tol) {
            bad.push(format!("kappa={k}: Boot-I {} more than {tol} below the best backend {}", fmt_power(boot1), fmt_power(max)));
        }
    }
    Outcome::new(bad.is_empty(), lines.join("; "), bad)
}

fn criterion6(cells: &Cells) -> Outcome {
    let mut bad = Vec::new();
    let mut lines = Vec::new();
    for &k in &KAPPAS {
        let pw = lasso_powers(cells, k);
        let (min_b, min) = pw.iter().fold((Backend::Clt, f64::INFINITY), |acc, (b, v)| if *v < acc.1 { (*b, *v) } else { acc });
        let max = pw.values().copied().fold(f64::NEG_INFINITY, f64::max);
        lines.push(format!("kappa={k}: [{}, {}] min at {min_b}", fmt_power(min), fmt_power(max)));
        if !(min >= 0.35) {
            bad.push(format!("kappa={k}: {min_b} power {} < 0.35", fmt_power(min)));
        }
        if !(pw[&Backend::ParamBb] <= min + 0.02) {
            bad.push(format!("kappa={k}: minimum at {min_b}, Param-BB at {}", fmt_power(pw[&Backend::ParamBb])));
        }
    }
    Outcome::new(bad.is_empty(), lines.join("; "), bad)
}

fn criterion7(cells: &Cells) -> Outcome {
    let pert = Perturbation::LogisticX;
    let mut bad = Vec::new();
    let scad = cells.power(pert, "ClusMIP(SCAD)", "Boot-I", 30.0);
    let mcp = cells.power(pert, "ClusMIP(MCP)", "Boot-I", 30.0);
    for (name, v) in [("SCAD", scad), ("MCP", mcp)] {
        if !(v >= 0.85) {
            bad.push(format!("ClusMIP({name}) Boot-I kappa=30: power {} < 0.85", fmt_power(v)));
        }
    }
    let lasso_max = KAPPAS
        .iter()
        .flat_map(|&k| Backend::ALL.map(|b| cells.power(pert, "ClusMIP(LASSO)", b.name(), k)))
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lasso_max <= 0.80) {
        bad.push(format!("ClusMIP(LASSO) max power {} > 0.80", fmt_power(lasso_max)));
    }
    let summary = format!(
        "kappa=30 Boot-I: SCAD {}, MCP {}; ClusMIP(LASSO) max {}",
        fmt_power(scad),
        fmt_power(mcp),
        fmt_power(lasso_max)
    );
    Outcome::new(bad.is_empty(), summary, bad)
}

fn random_linear(n: usize, p: usize, seed: u64) -> Dataset {
    let mut r = rng::rng(seed);
    let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut r));
    let y = Array1::from_shape_fn(n, |i| {
        let e: f64 = StandardNormal.sample(&mut r);
        1.5 * (x[[i, 0]] + x[[i, 1]] + x[[i, 2]]) + e
    });
    Dataset::new(y, x, Task::Linear).unwrap()
}

fn criterion8() -> Outcome {
    let mut checks: Vec<(&str, bool, String)> = Vec::new();

    // CMB with nu = 1 is the binomial law.
    let mut err: f64 = 0.0;
    for (trials, q) in [(10u32, 0.3), (200, 0.05), (57, 0.81)] {
        let fam = CountFamily::Cmb { trials, q, nu: 1.0 };
        let exact = statrs::distribution::Binomial::new(q, trials as u64).unwrap();
        for k in 0..=trials {
            err = err.max((fam.pmf(k) - exact.pmf(k as u64)).abs());
        }
    }
    checks.push(("CMB(nu=1) = Binomial", err <= 1e-12, format!("max abs diff {err:.1e}")));

    let mut err: f64 = 0.0;
    for lambda in [0.4, 3.0, 17.5] {
        let fam = CountFamily::Cmp { lambda, nu: 1.0 };
        let exact = statrs::distribution::Poisson::new(lambda).unwrap();
        for k in 0..80 {
            err = err.max((fam.pmf(k) - exact.pmf(k as u64)).abs());
        }
    }
    checks.push(("CMP(nu=1) = Poisson", err <= 1e-12, format!("max abs diff {err:.1e}")));

    let families = [
        CountFamily::Cmb { trials: 200, q: 0.07, nu: 0.6 },
        CountFamily::Cmb { trials: 40, q: 0.5, nu: 2.5 },
        CountFamily::Cmp { lambda: 6.0, nu: 0.4 },
        CountFamily::Cmp { lambda: 30.0, nu: 1.8 },
        CountFamily::BetaBinomial { trials: 200, alpha: 0.8, beta: 9.0 },
        CountFamily::GenPoisson { theta: 2.0, lambda: 0.6 },
        CountFamily::BinomMix { trials: 200, weights: vec![0.3, 0.7], q: vec![0.01, 0.2] },
        CountFamily::PoisMix { weights: vec![0.5, 0.25, 0.25], lambda: vec![0.5, 5.0, 40.0] },
    ];
    let worst = families.iter().map(|f| (f.pmf_table().iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    checks.push(("pmf normalization", worst <= 1e-10, format!("max |sum - 1| {worst:.1e}")));

    let mut r = rng::rng(81);
    let data: Vec<u32> = (0..400)
        .map(|_| {
            let lam = if r.random::<f64>() < 0.6 { 2.0 } else { 12.0 };
            Poisson::new(lam).unwrap().sample(&mut r) as u32
        })
        .collect();
    let mut monotone = true;
    for (kind, k) in [(MixtureKind::PoisMix, 2), (MixtureKind::PoisMix, 3), (MixtureKind::BinomMix, 2)] {
        let (_, trace) = fit_mixture_em_traced(&data, k, kind, 60, 5).unwrap();
        monotone &= trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    }
    checks.push(("EM log-likelihood monotone", monotone, "3 mixture fits".into()));

    let spec = SelectorSpec::new(Selector::Lasso);
    let mut worst: f64 = 0.0;
    for s in 0..100 {
        let data = random_linear(40, 60, 1000 + s);
        let lam = (0.1 + 0.008 * s as f64) * lambda_max(&data);
        let fit = fit_path(&data, &spec, lam, None).unwrap();
        worst = worst.max(kkt_violation(&data, &spec, &fit));
    }
    checks.push(("LASSO KKT residual", worst <= 1e-5, format!("max violation {worst:.1e} over 100 instances")));

    // Support {0, 1, 2} with masses 1/2, 1/4, 1/4: F_mid = 1/4, 5/8, 7/8.
    let md = empirical_mid_distribution(&[0, 0, 0, 0, 1, 1, 2, 2]).unwrap();
    let mq_ok = mid_quantile(&md, 0.10) == 0.0
        && mid_quantile(&md, 0.25) == 0.0
        && (mid_quantile(&md, 0.4375) - 0.5).abs() < 1e-12
        && mid_quantile(&md, 0.625) == 1.0
        && (mid_quantile(&md, 0.75) - 1.5).abs() < 1e-12
        && mid_quantile(&md, 0.875) == 2.0
        && mid_quantile(&md, 0.99) == 2.0;
    checks.push(("mid-quantile branches", mq_ok, "lower/upper boundary, exact hit, interpolation".into()));

    let cfg = SimConfig { n_reps: 1, ..SimConfig::desk(Task::Linear, 0.5, Perturbation::IIX, 10.0, 3) };
    let data = replicate(&cfg, 0).unwrap();
    let mut identity_ok = true;
    let mut rows = 0;
    for sel in [Selector::Lasso, Selector::Scad] {
        let prof = clusmip_profile(&data, &ClusMipConfig::new(SelectorSpec::new(sel), ALPHA, 9)).unwrap();
        let sums = prof.xi.row_sums();
        for (k, v) in prof.tau.values.iter().enumerate() {
            rows += 1;
            identity_ok &= match v {
                Some(t) => *t == sums[k] && prof.xi.present[k],
                None => !prof.xi.present[k] && sums[k] == 0,
            };
        }
        if let Some(b) = prof.xi.covariance_bound(prof.xi.rows()) {
            identity_ok &= b.holds;
        }
    }
    checks.push(("flip-matrix covariance identity", identity_ok, format!("{rows} rows")));

    let exact = {
        let b = statrs::distribution::Binomial::new(0.05, 200).unwrap();
        let mut acc = 0.0;
        (0..=200u64).find(|&k| {
            acc += b.pmf(k);
            acc >= 0.95
        })
        .unwrap() as f64
    };
    let mut r = rng::rng(4242);
    let bin = Binomial::new(200, 0.05).unwrap();
    let sample: Vec<u32> = (0..500).map(|_| bin.sample(&mut r) as u32).collect();
    let bcfg = BootstrapConfig::new(0.95, 17);
    let c2 = boot2_quantile(&sample, &bcfg).unwrap().cutoff;
    let c3 = boot3_midquantile(&sample, &bcfg).unwrap().cutoff;
    checks.push((
        "Boot-II/III binomial quantile",
        (c2 - exact).abs() <= 2.0 && (c3 - exact).abs() <= 2.0,
        format!("true {exact}, Boot-II {c2:.2}, Boot-III {c3:.2}"),
    ));

    let ccfg = ClusMipConfig::new(SelectorSpec::new(Selector::Lasso), ALPHA, 77);
    let json = |_: ()| {
        let sweep = clusmip_sweep(&data, &ccfg, &[Backend::Clt, Backend::BootIII]).unwrap();
        let reports: Vec<_> = sweep
            .results
            .iter()
            .map(|(_, r)| {
                let mut rep = r.as_ref().unwrap().report();
                rep.timings.clear();
                rep
            })
            .collect();
        serde_json::to_string(&reports).unwrap()
    };
    let same_reports = json(()) == json(());
    let same_data = replicate(&cfg, 0).unwrap().x() == data.x() && clean_replicate(&cfg, 0).unwrap().y() == clean_replicate(&cfg, 0).unwrap().y();
    checks.push(("seeded determinism", same_reports && same_data, "reports and replicates byte-identical".into()));

    let failed: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| format!("{}: {}", c.0, c.2)).collect();
    let details = checks.iter().map(|c| format!("{} {}: {}", if c.1 { "ok  " } else { "FAIL" }, c.0, c.2)).collect();
    Outcome::new(failed.is_empty(), format!("{}/{} property checks hold", checks.len() - failed.len(), checks.len()), details)
}

fn criterion9() -> Outcome {
    let seeds = 100;
    let mut lines = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for sel in [Selector::Lasso, Selector::ScaledLasso, Selector::Scad, Selector::Mcp] {
        let cfg = SimConfig { n_infl: 0, n_reps: seeds, ..SimConfig::desk(Task::Linear, RHO, Perturbation::IY, 1.0, SEED ^ 9) };
        let mut ratios = Vec::new();
        for rep in 0..seeds {
            let data = replicate(&cfg, rep).unwrap();
            let ccfg = ClusMipConfig::new(SelectorSpec::new(sel), ALPHA, rng::derive(SEED, rep as u64));
            let Ok(prof) = clusmip_profile(&data, &ccfg) else { continue };
            let tau: Vec<f64> = prof.tau.observed().into_iter().map(f64::from).collect();
            if tau.len() < 2 {
                continue;
            }
            let mean = tau.iter().sum::<f64>() / tau.len() as f64;
            if mean <= 0.0 {
                continue;
            }
            let var = tau.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (tau.len() - 1) as f64;
            ratios.push(var / mean);
        }
        ratios.sort_by(f64::total_cmp);
        let median = if ratios.is_empty() {
            f64::NAN
        } else if ratios.len() % 2 == 1 {
            ratios[ratios.len() / 2]
        } else {
            0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
        };
        if median.is_finite() {
            best = best.max(median);
        }
        lines.push(format!("{}: median var/mean {} over {} seeds with non-zero mean", sel.name(), fmt_power(median), ratios.len()));
    }
    Outcome::new(best >= 1.0, format!("largest median dispersion ratio {}", fmt_power(best)), lines)
}

fn main() -> ExitCode {
    let reps: usize = std::env::var("INFLUENS_ACCEPTANCE_REPS").ok().and_then(|v| v.parse().ok()).unwrap_or(5);
    let strict = std::env::var("INFLUENS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let started = Instant::now();

    let (cells, reports) = run_cells(reps);
    if let Ok(dir) = std::env::var("INFLUENS_ACCEPTANCE_OUT") {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir).expect("create output directory");
        for r in &reports {
            let stem = r.config.perturbation.name();
            r.write_long_csv(std::fs::File::create(dir.join(format!("{stem}_long.csv"))).unwrap()).unwrap();
            r.write_aggregate_csv(std::fs::File::create(dir.join(format!("{stem}_aggregate.csv"))).unwrap()).unwrap();
        }
    }
    let failures: usize = reports.iter().map(|r| r.failures.len()).sum();

    let outcomes = [
        criterion1(&cells),
        criterion2(&cells),
        criterion3(&cells),
        criterion4(&cells),
        criterion5(&cells),
        criterion6(&cells),
        criterion7(&cells),
        criterion8(),
        criterion9(),
    ];

    println!("acceptance: {reps} replicates per cell, {failures} detector failures, {:.0} s", started.elapsed().as_secs_f64());
    for (i, o) in outcomes.iter().enumerate() {
        println!("criterion {}: {} {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.summary);
        for d in &o.details {
            println!("    {d}");
        }
    }
    let property_ok = outcomes[7].pass;
    let all_ok = outcomes.iter().all(|o| o.pass);
    if !property_ok || (strict && !all_ok) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
