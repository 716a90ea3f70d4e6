//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always print:
//! `cargo test -p enfp-core --test acceptance`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use enfp_core::bayes::{omega_hat, EndpointSelection, PositiveTrialResult};
use enfp_core::frequentist::{capacity, capacity_rounded, tau_hat_mixed, tau_hat_single, FreqBoundInput, FreqTrial};
use enfp_core::gmodel::{fit_g, rho_from_g, FitConfig, ObservationSet, PriorModel};
use enfp_core::ledger::{EntryPayload, FileLedger, LedgerHeader};
use enfp_core::normal::{p_to_z, z_to_p};
use enfp_core::posterior::{h_probability, HEvaluator};
use enfp_core::sim::{mixture_prior, validate_bounds, EndpointMix, PolicyKind, ScenarioConfig};
use enfp_core::trial::{EfficacyMeasure, FailureRegion, Outcome, RejectionPolicy, TrialRecord};
use enfp_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn two_point_closed_form() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let w: f64 = rng.random_range(0.01..0.99);
        let lo: f64 = -rng.random_range(0.0..3.0);
        let hi: f64 = rng.random_range(0.01..4.0);
        let model = PriorModel::from_masses(vec![lo, hi], vec![w, 1.0 - w]).unwrap();
        for _ in 0..100 {
            let z: f64 = rng.random_range(-8.0..10.0);
            // Posterior odds of the positive point: (1−w)/w · exp(z(θ₊−θ₋) − (θ₊²−θ₋²)/2).
            let log_odds = ((1.0 - w) / w).ln() + z * (hi - lo) - (hi * hi - lo * lo) / 2.0;
            let want = 1.0 / (1.0 + (-log_odds).exp());
            worst = worst.max((h_probability(&model, z).h - want).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(worst <= 1e-10 && within(elapsed, 1.0), format!("max |error| {worst:.2e}, {:.3}s", elapsed.as_secs_f64()))
}

fn monotonicity_sweep() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..200 {
        let j = rng.random_range(2..80);
        let step: f64 = rng.random_range(0.05..0.5);
        let low: f64 = -rng.random_range(0.0..4.0) - step;
        let grid: Vec<f64> = (0..j).map(|k| low + step * k as f64).collect();
        let masses: Vec<f64> = (0..j).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() }).collect();
        let Ok(model) = PriorModel::from_masses(grid, masses) else { continue };
        let eval = HEvaluator::new(&model);
        let mut prev = eval.eval(-10.0).h;
        for k in 1..=2000 {
            let h = eval.eval(-10.0 + 0.01 * k as f64).h;
            worst_drop = worst_drop.max(prev - h);
            prev = h;
        }
    }
    let elapsed = start.elapsed();
    verdict(worst_drop <= 1e-9 && within(elapsed, 10.0), format!("largest decrease {worst_drop:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

/// 5000 draws: θ = −0.5 w.p. 0.1, else N(3, 1) rounded to the fitting grid; z = θ + N(0, 1).
fn recovery_dataset(seed: u64, step: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..5000)
        .map(|_| {
            let theta = if rng.random_bool(0.1) {
                -0.5
            } else {
                let t: f64 = 3.0 + rng.sample::<f64, _>(StandardNormal);
                (t / step).round() * step
            };
            theta + rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

fn nondecreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0])
}

struct RecoveryRuns {
    rho: Vec<f64>,
    monotone: Vec<bool>,
    converged: Vec<bool>,
    elapsed: Duration,
}

fn recovery_runs(cfg: &FitConfig) -> RecoveryRuns {
    let start = Instant::now();
    let mut out = RecoveryRuns { rho: vec![], monotone: vec![], converged: vec![], elapsed: Duration::ZERO };
    for seed in 0..20 {
        let obs = ObservationSet::new(recovery_dataset(100 + seed, cfg.grid_step), vec![]);
        let model = fit_g(&obs, cfg).unwrap();
        out.rho.push(rho_from_g(&model));
        out.monotone.push(nondecreasing(&model.diagnostics.objective_trace));
        out.converged.push(model.converged);
    }
    out.elapsed = start.elapsed();
    out
}

fn deconvolution_recovery(runs: &RecoveryRuns) -> Verdict {
    let close = runs.rho.iter().filter(|r| (**r - 0.1).abs() <= 0.04).count();
    let monotone = runs.monotone.iter().all(|&m| m);
    let converged = runs.converged.iter().filter(|&&c| c).count();
    let (lo, hi) = runs.rho.iter().fold((f64::MAX, f64::MIN), |(a, b), &r| (a.min(r), b.max(r)));
    verdict(
        close >= 18 && monotone && within(runs.elapsed, 120.0),
        format!(
            "{close}/20 within 0.04 (rho in [{lo:.4}, {hi:.4}]), traces monotone: {monotone}, converged {converged}/20, {:.1}s",
            runs.elapsed.as_secs_f64()
        ),
    )
}

fn censoring_stability(cfg: &FitConfig, runs: &RecoveryRuns) -> Verdict {
    let bound = p_to_z(0.05, true).unwrap();
    let mut worst: f64 = 0.0;
    for (i, seed) in (0..20).enumerate() {
        let z = recovery_dataset(100 + seed, cfg.grid_step);
        let to_censor = z.len() * 12 / 100;
        let mut exact = Vec::with_capacity(z.len());
        let mut censored = Vec::new();
        for v in z {
            if censored.len() < to_censor && v.abs() < bound {
                censored.push((-bound, bound));
            } else {
                exact.push(v);
            }
        }
        let model = fit_g(&ObservationSet::new(exact, censored), cfg).unwrap();
        worst = worst.max((rho_from_g(&model) - runs.rho[i]).abs());
    }
    verdict(worst < 0.03, format!("largest change in rho {worst:.4} over 20 datasets"))
}

fn grid_scenario(base: &ScenarioConfig, rho: f64, kind: PolicyKind, single_endpoint: bool) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.true_prior = mixture_prior(rho);
    cfg.policy.kind = kind;
    cfg.name = format!("rho={rho} {kind:?}{}", if single_endpoint { " m=1" } else { "" });
    if single_endpoint {
        cfg.m_distribution = vec![EndpointMix { m: 1, failure_type: FailureRegion::B, weight: 1.0 }];
    }
    cfg
}

struct GridRun {
    name: String,
    tau_ok: bool,
    omega_ok: bool,
    omega_le_tau: bool,
    realized: f64,
    tau: f64,
    omega: f64,
}

fn run_grid(single_endpoint: bool) -> (Vec<GridRun>, Duration) {
    let base = ScenarioConfig::from_path(scenario_path("concordant-baseline.toml")).unwrap();
    let start = Instant::now();
    let mut out = Vec::new();
    for rho in [0.05, 0.2, 0.5] {
        for kind in [PolicyKind::FixedAlpha, PolicyKind::SignalConcordant] {
            let cfg = grid_scenario(&base, rho, kind, single_endpoint);
            let r = validate_bounds(&cfg, None, None, Execution::default()).unwrap();
            out.push(GridRun {
                name: cfg.name,
                tau_ok: !r.tau.violated,
                omega_ok: !r.omega.violated,
                omega_le_tau: r.omega.bound.mean <= r.tau.bound.mean,
                realized: r.realized_fp.mean,
                tau: r.tau.bound.mean,
                omega: r.omega.bound.mean,
            });
        }
    }
    (out, start.elapsed())
}

fn frequentist_conservativeness(grid: &[GridRun], elapsed: Duration) -> Verdict {
    let failed: Vec<String> = grid.iter().filter(|g| !g.tau_ok).map(|g| g.name.clone()).collect();
    let worst = grid.iter().map(|g| g.realized / g.tau).fold(0.0, f64::max);
    verdict(
        failed.is_empty() && within(elapsed, 300.0),
        format!("6 scenarios, violations {failed:?}, max realized/tau {worst:.3}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn bayes_conservativeness(grid: &[GridRun], single: &[GridRun]) -> Verdict {
    let failed: Vec<String> = grid.iter().chain(single).filter(|g| !g.omega_ok).map(|g| g.name.clone()).collect();
    let order: Vec<String> = single.iter().filter(|g| !g.omega_le_tau).map(|g| g.name.clone()).collect();
    let worst = grid.iter().chain(single).map(|g| g.realized / g.omega.max(1e-300)).fold(0.0, f64::max);
    let ratio = single.iter().map(|g| g.omega / g.tau).fold(0.0, f64::max);
    verdict(
        failed.is_empty() && order.is_empty(),
        format!(
            "violations {failed:?}, max realized/omega {worst:.3}; m=1 omega<=tau fails {order:?}, max omega/tau {ratio:.3}"
        ),
    )
}

fn adversarial_detection() -> Verdict {
    let run = || -> enfp_core::Result<(Vec<String>, bool)> {
        let cfg = ScenarioConfig::from_path(scenario_path("adversarial.toml"))?;
        let r = validate_bounds(&cfg, None, None, Execution::default())?;
        let _ = r.to_table();
        Ok((r.concordance.failures(), r.bound_violations()))
    };
    match run() {
        Ok((failures, violated)) => {
            verdict(!failures.is_empty(), format!("flagged {failures:?}, bound violations: {violated}"))
        }
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

fn capacity_arithmetic() -> Verdict {
    let a = capacity(1.0, 0.09, 0.025).unwrap();
    let b = capacity(0.99, 0.09, 0.025).unwrap();
    let total_error = (1.0f64 / 0.09).round();
    let c = capacity_rounded(1.0, 0.09, 0.025).unwrap();
    verdict(
        a == 444 && b == 440 && total_error == 11.0 && c == 440,
        format!("capacity {a}, {b}; rounded total error {total_error} gives {c}"),
    )
}

fn record(id: String, z: Vec<f64>, failure: FailureRegion, stratum: Option<String>) -> TrialRecord {
    TrialRecord {
        trial_id: id,
        m: z.len(),
        failure_type: failure,
        measures: z.iter().enumerate().map(|(j, &z)| EfficacyMeasure::exact(j as u32 + 1, z)).collect(),
        policy: RejectionPolicy::alpha_level(0.025),
        stratum,
        outcome: None,
    }
}

fn ledger_integrity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let strata = [None, Some("onc".to_string()), Some("cv".to_string())];
    let failures = [FailureRegion::A, FailureRegion::B];

    // Frequentist: proposals and audit-only outcomes.
    let freq_path = dir.path().join("freq.jsonl");
    let mut header = LedgerHeader::frequentist(0.5, 0.09);
    header.stratum_rho.insert("onc".into(), 0.2);
    header.stratum_budgets.insert("cv".into(), 0.2);
    let mut freq = FileLedger::create(&freq_path, header).unwrap();
    let mut accepted: BTreeMap<Option<String>, Vec<FreqTrial>> = BTreeMap::new();
    let mut freq_ok = true;
    let mut attempts = 0;
    while freq.ledger().entries().len() < 1000 && attempts < 100_000 {
        attempts += 1;
        let stratum = strata[rng.random_range(0..3)].clone();
        if rng.random_bool(0.3) {
            let m = rng.random_range(1..4);
            let z: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..4.0)).collect();
            let t = record(format!("F{attempts}"), z, failures[rng.random_range(0..2)], stratum);
            freq.record_outcome(&t, None, Some(attempts as u64)).unwrap();
            continue;
        }
        let (m, t, alpha) = (rng.random_range(1..4u32), failures[rng.random_range(0..2)], rng.random_range(1e-4..0.05));
        let decision = freq.propose(&format!("P{attempts}"), m, t, alpha, stratum.clone(), None).unwrap();
        if decision.accepted() {
            let list = accepted.entry(stratum.clone()).or_default();
            list.push(FreqTrial::new(m, t, alpha));
            let key = stratum.clone().unwrap_or_else(|| "default".into());
            let h = freq.ledger().header();
            let rho = h.rho_for(&key);
            let scratch = tau_hat_mixed(&FreqBoundInput { rho_hat: rho, trials: list.clone() }).unwrap();
            freq_ok &= scratch <= h.budget_for(&key);
        }
    }
    let freq_entries = freq.ledger().entries().len();
    let freq_replay = FileLedger::open(&freq_path).unwrap();
    let freq_same = freq_replay.ledger() == freq.ledger() && freq_replay.status() == freq.status();

    // Bayes: outcomes and adjustments.
    let prior = mixture_prior(0.2);
    let model = PriorModel::from_masses(prior.theta, prior.mass).unwrap();
    let bayes_path = dir.path().join("bayes.jsonl");
    let mut bayes = FileLedger::create(&bayes_path, LedgerHeader::bayes(5.0, &model)).unwrap();
    for i in 0..1000 {
        let stratum = strata[rng.random_range(0..3)].clone();
        let m = rng.random_range(1..4);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..5.0)).collect();
        let t = record(format!("B{i}"), z, failures[rng.random_range(0..2)], stratum);
        if rng.random_bool(0.05) {
            bayes.record_adjustment(&t, &model, "accepted on secondary evidence", None).unwrap();
        } else {
            bayes.record_outcome(&t, Some(&model), None).unwrap();
        }
    }
    let bayes_replay = FileLedger::open(&bayes_path).unwrap();
    let bayes_same = bayes_replay.ledger() == bayes.ledger() && bayes_replay.status() == bayes.status();
    let mut by_stratum: BTreeMap<String, Vec<PositiveTrialResult>> = BTreeMap::new();
    for e in bayes.ledger().entries() {
        let key = e.stratum.clone().unwrap_or_else(|| "default".into());
        match &e.payload {
            EntryPayload::Outcome { outcome: Outcome::Positive, result } | EntryPayload::Adjustment { result } => {
                by_stratum.entry(key).or_default().push(result.clone());
            }
            _ => {}
        }
    }
    let status = bayes.status();
    let mut worst: f64 = 0.0;
    for (name, s) in &status.strata {
        let omega = omega_hat(by_stratum.get(name).map(Vec::as_slice).unwrap_or(&[]), EndpointSelection::default()).unwrap();
        worst = worst.max((omega - s.spent).abs());
    }
    let pass = freq_entries == 1000 && freq_same && freq_ok && bayes_same && worst <= 1e-12;
    verdict(
        pass,
        format!(
            "frequentist {freq_entries} entries replay {freq_same}, within budget {freq_ok}; bayes 1000 entries replay {bayes_same}, |spent - omega| {worst:.1e}"
        ),
    )
}

fn reduction_and_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_reduction: f64 = 0.0;
    for _ in 0..1000 {
        let rho: f64 = rng.random();
        let n = rng.random_range(1..200);
        let alphas: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..0.5)).collect();
        let trials = alphas.iter().map(|&a| FreqTrial::new(1, FailureRegion::B, a)).collect();
        let mixed = tau_hat_mixed(&FreqBoundInput { rho_hat: rho, trials }).unwrap();
        let single = tau_hat_single(rho, &alphas);
        worst_reduction = worst_reduction.max((mixed - single).abs() / single.abs().max(1.0));
    }
    let mut worst_z: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for _ in 0..10_000 {
        let z: f64 = rng.random_range(-8.0..8.0);
        let back = p_to_z(z_to_p(z), z >= 0.0).unwrap();
        worst_z = worst_z.max((back - z).abs());
        let p: f64 = 10f64.powf(rng.random_range(-12.0..0.0));
        let favorable = rng.random_bool(0.5);
        let again = z_to_p(p_to_z(p, favorable).unwrap());
        worst_p = worst_p.max((again - p).abs() / p);
    }
    verdict(
        worst_reduction <= 1e-12 && worst_z <= 1e-10 && worst_p <= 1e-10,
        format!("reduction {worst_reduction:.1e}, z round trip {worst_z:.1e}, p round trip (relative) {worst_p:.1e}"),
    )
}

fn main() {
    let fit_cfg = FitConfig::default();
    let recovery = recovery_runs(&fit_cfg);
    let (grid, grid_time) = run_grid(false);
    let (single, _) = run_grid(true);
    let results = [
        ("1 closed-form posterior oracle", two_point_closed_form()),
        ("2 monotonicity sweep", monotonicity_sweep()),
        ("3 deconvolution recovery", deconvolution_recovery(&recovery)),
        ("4 censoring stability", censoring_stability(&fit_cfg, &recovery)),
        ("5 frequentist bound conservativeness", frequentist_conservativeness(&grid, grid_time)),
        ("6 bayes bound conservativeness", bayes_conservativeness(&grid, &single)),
        ("7 adversarial detection", adversarial_detection()),
        ("8 capacity arithmetic", capacity_arithmetic()),
        ("9 ledger integrity", ledger_integrity()),
        ("10 reduction and p/z round trip", reduction_and_round_trip()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
