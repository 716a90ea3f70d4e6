//! Monte Carlo populations of trials with known effect sizes.
//!
//! Each trial draws (m, t) from the scenario mix, θ⁽ʲ⁾ i.i.d. from the true
//! prior, a pre-trial signal s = mean θ + N(0, signal_noise²) that the policy
//! maps to a trial-level α, and z⁽ʲ⁾ = θ⁽ʲ⁾ + ε⁽ʲ⁾ with shared-factor noise
//! ε = √c·u + √(1−c)·eⱼ. Trial `i` of replicate `r` uses ChaCha stream
//! `(r << 32) | i`, so output does not depend on execution order.

mod concordance;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use concordance::{BinnedCheck, ConcordanceReport, MeanCheck, Z_BIN_WIDTH};
use concordance::ConcordanceAcc;

use crate::error::{Error, Result};
use crate::exec::{map_chunks, map_indexed, Execution};
use crate::frequentist::delta;
use crate::gmodel::{rho_from_g, PriorModel};
use crate::normal::upper_quantile;
use crate::posterior::HEvaluator;
use crate::trial::{EfficacyMeasure, FailureRegion, Outcome, RejectionPolicy, TrialRecord};

const CHUNK: usize = 4096;
const PILOT_STREAM: u64 = u64::MAX;
const PILOT_SIZE: usize = 20_000;
/// Largest supported endpoint count per trial.
pub const MAX_ENDPOINTS: u32 = 16;

/// Point masses on a uniformly spaced θ grid; zero masses may fill gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePrior {
    pub theta: Vec<f64>,
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointMix {
    pub m: u32,
    pub failure_type: FailureRegion,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Always the first menu level.
    FixedAlpha,
    /// Higher signal, more relaxed α.
    SignalConcordant,
    /// Higher signal, more stringent α.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Trial-level one-sided levels, ascending.
    pub alpha_menu: Vec<f64>,
    #[serde(default = "one")]
    pub signal_noise: f64,
    /// Signal cut points between menu levels (len = menu − 1). Defaults to
    /// equally spaced quantiles of the signal's distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub true_prior: TruePrior,
    pub n_trials: usize,
    pub m_distribution: Vec<EndpointMix>,
    #[serde(default)]
    pub endpoint_correlation: f64,
    pub policy: PolicySpec,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_replicates() -> usize {
    20
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a `.toml` or `.json` scenario file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let p = &self.true_prior;
        if p.theta.is_empty() || p.theta.len() != p.mass.len() {
            return bad("true_prior needs matching, nonempty theta and mass".into());
        }
        if p.mass.iter().any(|&g| !(g >= 0.0 && g.is_finite())) || !(p.mass.iter().sum::<f64>() > 0.0) {
            return bad("true_prior masses must be nonnegative with positive sum".into());
        }
        if p.theta.iter().any(|t| !t.is_finite()) {
            return bad("true_prior theta must be finite".into());
        }
        self.true_model()?;
        if self.n_trials == 0 || self.n_trials > u32::MAX as usize {
            return bad(format!("n_trials must lie in 1..=2^32-1, got {}", self.n_trials));
        }
        if self.replicates == 0 || self.replicates > u32::MAX as usize {
            return bad("replicates must be at least 1".into());
        }
        if self.m_distribution.is_empty() {
            return bad("m_distribution is empty".into());
        }
        for mix in &self.m_distribution {
            if mix.m < 1 || mix.m > MAX_ENDPOINTS || !(mix.weight >= 0.0 && mix.weight.is_finite()) {
                return bad(format!("bad m_distribution entry m={} weight={}", mix.m, mix.weight));
            }
        }
        if !(self.m_distribution.iter().map(|x| x.weight).sum::<f64>() > 0.0) {
            return bad("m_distribution weights sum to zero".into());
        }
        if !(0.0..1.0).contains(&self.endpoint_correlation) {
            return bad(format!("endpoint_correlation must lie in [0, 1), got {}", self.endpoint_correlation));
        }
        let pol = &self.policy;
        if pol.alpha_menu.is_empty() || pol.alpha_menu.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return bad("alpha_menu levels must lie in (0, 1)".into());
        }
        if pol.alpha_menu.windows(2).any(|w| w[0] > w[1]) {
            return bad("alpha_menu must be ascending".into());
        }
        if !(pol.signal_noise >= 0.0 && pol.signal_noise.is_finite()) {
            return bad("signal_noise must be >= 0".into());
        }
        if let Some(t) = &pol.thresholds {
            if t.len() + 1 != pol.alpha_menu.len() || t.windows(2).any(|w| w[0] > w[1]) {
                return bad("thresholds must be ascending with one fewer entry than alpha_menu".into());
            }
        }
        Ok(())
    }

    /// The true prior as a model (normalized masses).
    pub fn true_model(&self) -> Result<PriorModel> {
        PriorModel::from_masses(self.true_prior.theta.clone(), self.true_prior.mass.clone())
    }

    /// Pr[θ ≤ 0] under the true prior.
    pub fn true_rho(&self) -> f64 {
        let p = &self.true_prior;
        let total: f64 = p.mass.iter().sum();
        p.theta.iter().zip(&p.mass).filter(|(t, _)| **t <= 0.0).map(|(_, g)| g).sum::<f64>() / total
    }
}

/// Null mass `rho` spread evenly over θ ∈ {−1, −0.75, …, 0}; the rest
/// ∝ φ(θ − 2) on the positive grid points up to 5.
pub fn mixture_prior(rho: f64) -> TruePrior {
    let theta = crate::gmodel::uniform_grid(-1.0, 5.0, 0.25);
    let nulls = theta.iter().filter(|&&t| t <= 0.0).count() as f64;
    let positive: f64 = theta.iter().filter(|&&t| t > 0.0).map(|&t| crate::normal::pdf(t - 2.0)).sum();
    let mass = theta
        .iter()
        .map(|&t| if t <= 0.0 { rho / nulls } else { (1.0 - rho) * crate::normal::pdf(t - 2.0) / positive })
        .collect();
    TruePrior { theta, mass }
}

/// A simulated trial with its hidden truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTrial {
    pub record: TrialRecord,
    pub theta: Vec<f64>,
    pub signal: f64,
}

impl SimulatedTrial {
    /// Whether the true parameter lies in the failure region.
    pub fn is_null(&self) -> bool {
        is_null(self.record.failure_type, &self.theta)
    }
}

fn is_null(failure: FailureRegion, theta: &[f64]) -> bool {
    match failure {
        FailureRegion::A => theta.iter().all(|&t| t <= 0.0),
        FailureRegion::B => theta.iter().any(|&t| t <= 0.0),
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    for c in out.iter_mut() {
        *c /= acc;
    }
    out
}

fn pick(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Everything derived from a config that trials share.
struct Prepared {
    theta_cdf: Vec<f64>,
    mix_cdf: Vec<f64>,
    mix: Vec<(u32, FailureRegion)>,
    thresholds: Vec<f64>,
    /// critical[level][mix index]: per-endpoint critical value.
    critical: Vec<Vec<f64>>,
    shared: f64,
    own: f64,
}

struct Draw {
    mix: usize,
    m: usize,
    failure: FailureRegion,
    level: usize,
    alpha: f64,
    signal: f64,
    theta: [f64; MAX_ENDPOINTS as usize],
    z: [f64; MAX_ENDPOINTS as usize],
    positive: bool,
}

impl Prepared {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mix: Vec<(u32, FailureRegion)> = cfg.m_distribution.iter().map(|x| (x.m, x.failure_type)).collect();
        let mut critical = Vec::with_capacity(cfg.policy.alpha_menu.len());
        for &alpha in &cfg.policy.alpha_menu {
            let row: Result<Vec<f64>> = mix
                .iter()
                .map(|&(m, t)| upper_quantile(RejectionPolicy::endpoint_alpha(alpha, m as usize, t)))
                .collect();
            critical.push(row?);
        }
        let mut prepared = Self {
            theta_cdf: cumulative(cfg.true_prior.mass.iter().copied()),
            mix_cdf: cumulative(cfg.m_distribution.iter().map(|x| x.weight)),
            mix,
            thresholds: Vec::new(),
            critical,
            shared: cfg.endpoint_correlation.sqrt(),
            own: (1.0 - cfg.endpoint_correlation).sqrt(),
        };
        prepared.thresholds = match &cfg.policy.thresholds {
            Some(t) => t.clone(),
            None => prepared.pilot_thresholds(cfg),
        };
        Ok(prepared)
    }

    /// Equally spaced quantiles of the signal from a fixed pilot stream.
    fn pilot_thresholds(&self, cfg: &ScenarioConfig) -> Vec<f64> {
        let levels = cfg.policy.alpha_menu.len();
        if levels < 2 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(PILOT_STREAM);
        let mut signals: Vec<f64> = (0..PILOT_SIZE)
            .map(|_| {
                let (m, _) = self.mix[pick(&self.mix_cdf, rng.random())];
                let mean = (0..m).map(|_| cfg.true_prior.theta[pick(&self.theta_cdf, rng.random())]).sum::<f64>() / m as f64;
                let e: f64 = rng.sample(StandardNormal);
                mean + cfg.policy.signal_noise * e
            })
            .collect();
        signals.sort_by(|a, b| a.total_cmp(b));
        (1..levels).map(|k| signals[k * PILOT_SIZE / levels]).collect()
    }

    fn level(&self, cfg: &ScenarioConfig, signal: f64) -> usize {
        let k = cfg.policy.alpha_menu.len();
        let rank = self.thresholds.partition_point(|&t| t <= signal);
        match cfg.policy.kind {
            PolicyKind::FixedAlpha => 0,
            PolicyKind::SignalConcordant => rank,
            PolicyKind::Adversarial => k - 1 - rank,
        }
    }

    fn draw(&self, cfg: &ScenarioConfig, replicate: usize, trial: usize) -> Draw {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(((replicate as u64) << 32) | trial as u64);
        let mix = pick(&self.mix_cdf, rng.random());
        let (m, failure) = self.mix[mix];
        let m = m as usize;
        let mut theta = [0.0; MAX_ENDPOINTS as usize];
        for t in theta.iter_mut().take(m) {
            *t = cfg.true_prior.theta[pick(&self.theta_cdf, rng.random())];
        }
        let e: f64 = rng.sample(StandardNormal);
        let signal = theta[..m].iter().sum::<f64>() / m as f64 + cfg.policy.signal_noise * e;
        let level = self.level(cfg, signal);
        let common: f64 = rng.sample(StandardNormal);
        let mut z = [0.0; MAX_ENDPOINTS as usize];
        for j in 0..m {
            let idio: f64 = rng.sample(StandardNormal);
            z[j] = theta[j] + self.shared * common + self.own * idio;
        }
        let c = self.critical[level][mix];
        let positive = match failure {
            FailureRegion::A => z[..m].iter().any(|&z| z > c),
            FailureRegion::B => z[..m].iter().all(|&z| z > c),
        };
        Draw { mix, m, failure, level, alpha: cfg.policy.alpha_menu[level], signal, theta, z, positive }
    }
}

impl Draw {
    fn into_trial(self, replicate: usize, trial: usize, critical: f64) -> SimulatedTrial {
        let record = TrialRecord {
            trial_id: format!("R{replicate}-T{trial}"),
            m: self.m,
            failure_type: self.failure,
            measures: (0..self.m).map(|j| EfficacyMeasure::exact(j as u32 + 1, self.z[j])).collect(),
            policy: RejectionPolicy::alpha_level(self.alpha).with_critical_z(vec![critical; self.m]),
            stratum: None,
            outcome: Some(if self.positive { Outcome::Positive } else { Outcome::Negative }),
        };
        SimulatedTrial { record, theta: self.theta[..self.m].to_vec(), signal: self.signal }
    }
}

/// Trials of replicate 0.
pub fn simulate_population(cfg: &ScenarioConfig) -> Result<Vec<SimulatedTrial>> {
    simulate_replicate(cfg, 0, Execution::default())
}

pub fn simulate_replicate(cfg: &ScenarioConfig, replicate: usize, exec: Execution) -> Result<Vec<SimulatedTrial>> {
    let prep = Prepared::new(cfg)?;
    Ok(map_indexed(cfg.n_trials, exec, |i| {
        let d = prep.draw(cfg, replicate, i);
        let c = prep.critical[d.level][d.mix];
        d.into_trial(replicate, i, c)
    }))
}

/// Positive trials whose true parameter lies in the failure region.
pub fn oracle_count_fp(trials: &[SimulatedTrial]) -> u64 {
    trials.iter().filter(|t| t.record.outcome == Some(Outcome::Positive) && t.is_null()).count() as u64
}

/// Concordance diagnostics for simulated trials.
pub fn check_concordance(trials: &[SimulatedTrial]) -> ConcordanceReport {
    let mut acc = ConcordanceAcc::default();
    for t in trials {
        let z: Vec<f64> = t.record.z_values().unwrap_or_default();
        let alpha = t.record.policy.nominal_alpha.unwrap_or(f64::NAN);
        acc.push(alpha, &t.theta, &z, t.is_null(), t.record.outcome == Some(Outcome::Positive));
    }
    acc.report()
}

/// A Monte Carlo mean with its standard error (absent for one replicate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: Option<f64>,
}

impl Estimate {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Self { mean, se }
    }
}

/// Realized false positives against one bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bound: Estimate,
    /// Per-replicate realized − bound.
    pub excess: Estimate,
    /// Mean excess above 3 standard errors (above 0 with one replicate).
    pub violated: bool,
}

impl BoundCheck {
    fn of(realized: &[f64], bound: &[f64]) -> Self {
        let excess: Vec<f64> = realized.iter().zip(bound).map(|(r, b)| r - b).collect();
        let excess = Estimate::of(&excess);
        Self { bound: Estimate::of(bound), excess, violated: excess.mean > 3.0 * excess.se.unwrap_or(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub seed: u64,
    pub replicates: usize,
    pub n_trials: usize,
    /// ρ used for τ̂.
    pub rho_for_bound: f64,
    /// Content hash of the prior used for h.
    pub model_id: String,
    pub thresholds: Vec<f64>,
    pub realized_fp: Estimate,
    /// Positive trials per replicate.
    pub positive_count: Estimate,
    pub tau: BoundCheck,
    pub omega: BoundCheck,
    /// Per-replicate ω̂ − τ̂.
    pub omega_minus_tau: Estimate,
    pub concordance: ConcordanceReport,
    pub notes: Vec<String>,
}

impl SimulationReport {
    pub fn bound_violations(&self) -> bool {
        self.tau.violated || self.omega.violated
    }

    /// Fixed-width plain-text summary.
    pub fn to_table(&self) -> String {
        let se = |e: &Estimate| e.se.map(|s| format!("{s:.6}")).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(out, "scenario {}  seed {}  replicates {}  trials {}", self.scenario, self.seed, self.replicates, self.n_trials);
        let _ = writeln!(out, "{:<28}{:>16}{:>14}{:>10}", "quantity", "mean", "mc_se", "flag");
        let row = |out: &mut String, name: &str, e: &Estimate, flag: &str| {
            let _ = writeln!(out, "{:<28}{:>16.6}{:>14}{:>10}", name, e.mean, se(e), flag);
        };
        let flag = |v: bool| if v { "VIOLATED" } else { "ok" };
        row(&mut out, "realized false positives", &self.realized_fp, "");
        row(&mut out, "positive trials", &self.positive_count, "");
        row(&mut out, "tau_hat", &self.tau.bound, flag(self.tau.violated));
        row(&mut out, "omega_hat", &self.omega.bound, flag(self.omega.violated));
        row(&mut out, "omega_hat - tau_hat", &self.omega_minus_tau, "");
        let _ = writeln!(out, "{:<28}{:>16}{:>14}{:>10}", "concordance check", "difference", "se", "result");
        let mean_rows = self.concordance.first.iter().chain(std::iter::once(&self.concordance.second));
        for c in mean_rows {
            let d = c.difference.map(|d| format!("{d:.6}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<28}{:>16}{:>14.6}{:>10}", c.name, d, c.se, if c.pass { "pass" } else { "FAIL" });
        }
        for c in self.concordance.third.iter().chain(&self.concordance.fourth) {
            let d = c.difference.map(|d| format!("{d:.6}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<28}{:>16}{:>14.6}{:>10}", c.name, d, c.se, if c.pass { "pass" } else { "FAIL" });
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

#[derive(Default)]
struct ReplicateAcc {
    fp: u64,
    positives: u64,
    n: u64,
    sum_delta: f64,
    sum_alpha: f64,
    sum_g: f64,
    conc: ConcordanceAcc,
}

impl ReplicateAcc {
    fn merge(&mut self, o: &ReplicateAcc) {
        self.fp += o.fp;
        self.positives += o.positives;
        self.n += o.n;
        self.sum_delta += o.sum_delta;
        self.sum_alpha += o.sum_alpha;
        self.sum_g += o.sum_g;
        self.conc.merge(&o.conc);
    }

    fn tau(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_delta * self.sum_alpha / self.n as f64
        }
    }
}

/// Run every replicate and compare realized false positives with τ̂ and ω̂.
///
/// `rho_for_bound` defaults to the true null fraction and `model_for_bound` to
/// the true prior. Type-A trials charge 1 − h at endpoint 1.
pub fn validate_bounds(
    cfg: &ScenarioConfig,
    rho_for_bound: Option<f64>,
    model_for_bound: Option<&PriorModel>,
    exec: Execution,
) -> Result<SimulationReport> {
    let prep = Prepared::new(cfg)?;
    let true_model = cfg.true_model()?;
    let model = model_for_bound.unwrap_or(&true_model);
    let rho = rho_for_bound.unwrap_or_else(|| cfg.true_rho());
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!("rho_for_bound {rho} outside [0, 1]")));
    }
    let eval = HEvaluator::new(model);
    let chunks_per_rep = cfg.n_trials.div_ceil(CHUNK);
    let total_chunks = chunks_per_rep * cfg.replicates;

    let parts = map_chunks(total_chunks, 1, exec, |range| {
        let c = range.start;
        let (replicate, chunk) = (c / chunks_per_rep, c % chunks_per_rep);
        let mut acc = ReplicateAcc::default();
        for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(cfg.n_trials) {
            let d = prep.draw(cfg, replicate, i);
            let theta = &d.theta[..d.m];
            let z = &d.z[..d.m];
            let null = is_null(d.failure, theta);
            acc.n += 1;
            acc.sum_delta += delta(rho, d.m as u32, d.failure);
            acc.sum_alpha += d.alpha;
            if d.positive {
                acc.positives += 1;
                acc.fp += null as u64;
                acc.sum_g += match d.failure {
                    FailureRegion::A => 1.0 - eval.eval(z[0]).h,
                    FailureRegion::B => z.iter().map(|&z| 1.0 - eval.eval(z).h).sum(),
                };
            }
            acc.conc.push(d.alpha, theta, z, null, d.positive);
        }
        acc
    });

    let mut reps: Vec<ReplicateAcc> = (0..cfg.replicates).map(|_| ReplicateAcc::default()).collect();
    let mut conc = ConcordanceAcc::default();
    for (c, part) in parts.into_iter().enumerate() {
        conc.merge(&part.conc);
        reps[c / chunks_per_rep].merge(&ReplicateAcc { conc: ConcordanceAcc::default(), ..part });
    }
    let realized: Vec<f64> = reps.iter().map(|r| r.fp as f64).collect();
    let taus: Vec<f64> = reps.iter().map(ReplicateAcc::tau).collect();
    let omegas: Vec<f64> = reps.iter().map(|r| r.sum_g).collect();
    let diff: Vec<f64> = omegas.iter().zip(&taus).map(|(o, t)| o - t).collect();

    let mut notes = vec![format!(
        "concordance checks 3 and 4 bin z in widths of {Z_BIN_WIDTH}; they approximate conditions stated for exact z"
    )];
    if cfg.replicates == 1 {
        notes.push("one replicate: standard errors are absent and bounds are compared without slack".into());
    }
    if rho_from_g(model) == 0.0 {
        notes.push("prior for h has no null mass".into());
    }
    Ok(SimulationReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        replicates: cfg.replicates,
        n_trials: cfg.n_trials,
        rho_for_bound: rho,
        model_id: model.content_hash(),
        thresholds: prep.thresholds.clone(),
        realized_fp: Estimate::of(&realized),
        positive_count: Estimate::of(&reps.iter().map(|r| r.positives as f64).collect::<Vec<_>>()),
        tau: BoundCheck::of(&realized, &taus),
        omega: BoundCheck::of(&realized, &omegas),
        omega_minus_tau: Estimate::of(&diff),
        concordance: conc.report(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::cdf;
    use crate::trial::classify_rejection;
    use FailureRegion::{A, B};

    fn scenario(theta: Vec<f64>, mass: Vec<f64>, mix: Vec<(u32, FailureRegion)>, kind: PolicyKind, menu: Vec<f64>) -> ScenarioConfig {
        ScenarioConfig {
            name: "test".into(),
            true_prior: TruePrior { theta, mass },
            n_trials: 20_000,
            m_distribution: mix.into_iter().map(|(m, failure_type)| EndpointMix { m, failure_type, weight: 1.0 }).collect(),
            endpoint_correlation: 0.0,
            policy: PolicySpec { kind, alpha_menu: menu, signal_noise: 1.0, thresholds: None },
            seed: 7,
            replicates: 4,
        }
    }

    fn positive_fraction(trials: &[SimulatedTrial]) -> f64 {
        trials.iter().filter(|t| t.record.outcome == Some(Outcome::Positive)).count() as f64 / trials.len() as f64
    }

    fn within_binomial(observed: f64, p: f64, n: usize) -> bool {
        (observed - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn null_rejection_rate() {
        let mut cfg = scenario(vec![0.0], vec![1.0], vec![(1, B)], PolicyKind::FixedAlpha, vec![0.025]);
        cfg.n_trials = 200_000;
        let trials = simulate_population(&cfg).unwrap();
        assert!(within_binomial(positive_fraction(&trials), 0.025, cfg.n_trials));
    }

    #[test]
    fn strong_effect_power() {
        let cfg = scenario(vec![5.0], vec![1.0], vec![(1, B)], PolicyKind::FixedAlpha, vec![0.025]);
        let trials = simulate_population(&cfg).unwrap();
        let want = cdf(5.0 - 1.959_963_984_540_054);
        assert!(within_binomial(positive_fraction(&trials), want, cfg.n_trials));
    }

    #[test]
    fn independent_endpoints_multiply() {
        let mut cfg = scenario(vec![0.0], vec![1.0], vec![(2, B)], PolicyKind::FixedAlpha, vec![0.05]);
        cfg.n_trials = 400_000;
        let trials = simulate_population(&cfg).unwrap();
        assert!(within_binomial(positive_fraction(&trials), 0.0025, cfg.n_trials));
    }

    #[test]
    fn every_menu_level_is_calibrated() {
        let mut cfg = scenario(vec![0.0], vec![1.0], vec![(1, B)], PolicyKind::SignalConcordant, vec![0.01, 0.05, 0.1]);
        cfg.n_trials = 150_000;
        let trials = simulate_population(&cfg).unwrap();
        for &alpha in &cfg.policy.alpha_menu {
            let at: Vec<&SimulatedTrial> = trials.iter().filter(|t| t.record.policy.nominal_alpha == Some(alpha)).collect();
            let pos = at.iter().filter(|t| t.record.outcome == Some(Outcome::Positive)).count() as f64 / at.len() as f64;
            assert!(within_binomial(pos, alpha, at.len()), "alpha {alpha}: {pos} over {}", at.len());
        }
    }

    #[test]
    fn records_classify_consistently() {
        let cfg = scenario(vec![-0.5, 0.0, 0.5, 1.0, 1.5, 2.0], vec![0.2, 0.1, 0.0, 0.0, 0.0, 0.7], vec![(1, B), (2, A), (3, B)], PolicyKind::SignalConcordant, vec![0.01, 0.05]);
        for t in simulate_population(&cfg).unwrap().iter().take(2000) {
            assert_eq!(Some(classify_rejection(&t.record).unwrap()), t.record.outcome);
        }
    }

    #[test]
    fn oracle_count_examples() {
        let mk = |theta: Vec<f64>, failure: FailureRegion, positive: bool| SimulatedTrial {
            record: TrialRecord {
                trial_id: "x".into(),
                m: theta.len(),
                failure_type: failure,
                measures: theta.iter().enumerate().map(|(j, _)| EfficacyMeasure::exact(j as u32 + 1, 3.0)).collect(),
                policy: RejectionPolicy::alpha_level(0.025),
                stratum: None,
                outcome: Some(if positive { Outcome::Positive } else { Outcome::Negative }),
            },
            theta,
            signal: 0.0,
        };
        let none_null = vec![mk(vec![1.0], B, true), mk(vec![0.5, 0.2], A, true)];
        assert_eq!(oracle_count_fp(&none_null), 0);
        let all_null = vec![mk(vec![0.0], B, true), mk(vec![-1.0, -0.1], A, true), mk(vec![-1.0], B, true)];
        assert_eq!(oracle_count_fp(&all_null), 3);
        let mixed = vec![
            mk(vec![-0.2, 1.0], A, true),
            mk(vec![-0.2, 1.0], B, true),
            mk(vec![-0.3, -0.1], A, true),
            mk(vec![-0.5], B, false),
        ];
        assert_eq!(oracle_count_fp(&mixed), 2);
    }

    #[test]
    fn concordance_by_policy() {
        let theta = vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let mass = vec![0.1, 0.1, 0.1, 0.0, 0.2, 0.0, 0.3, 0.0, 0.2];
        let fixed = scenario(theta.clone(), mass.clone(), vec![(1, B)], PolicyKind::FixedAlpha, vec![0.025]);
        let r = check_concordance(&simulate_population(&fixed).unwrap());
        assert!(r.first[0].difference.unwrap().abs() < 1e-12);
        assert!(r.first[0].pass && r.second.pass);

        let good = scenario(theta.clone(), mass.clone(), vec![(1, B)], PolicyKind::SignalConcordant, vec![0.01, 0.025, 0.1]);
        let r = check_concordance(&simulate_population(&good).unwrap());
        assert!(r.first[0].difference.unwrap() < 0.0);
        assert!(r.all_pass(), "{:?}", r.failures());

        let bad = scenario(theta, mass, vec![(1, B)], PolicyKind::Adversarial, vec![0.01, 0.025, 0.1]);
        let r = check_concordance(&simulate_population(&bad).unwrap());
        assert!(!r.first[0].pass);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let cfg = scenario(vec![-0.5, 0.5, 1.5], vec![0.3, 0.3, 0.4], vec![(1, B), (2, A)], PolicyKind::SignalConcordant, vec![0.01, 0.05]);
        let a = validate_bounds(&cfg, None, None, Execution::Sequential).unwrap();
        let b = validate_bounds(&cfg, None, None, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            simulate_replicate(&cfg, 1, Execution::Sequential).unwrap(),
            simulate_replicate(&cfg, 1, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn no_nulls_means_nothing_to_find() {
        let cfg = scenario(vec![1.0, 2.0], vec![0.5, 0.5], vec![(1, B), (2, B)], PolicyKind::FixedAlpha, vec![0.025]);
        let r = validate_bounds(&cfg, None, None, Execution::default()).unwrap();
        assert_eq!(r.realized_fp.mean, 0.0);
        assert_eq!(r.tau.bound.mean, 0.0);
        assert!(!r.bound_violations());
    }

    #[test]
    fn single_replicate_has_no_se() {
        let mut cfg = scenario(vec![-0.5, 2.0], vec![0.3, 0.7], vec![(1, B)], PolicyKind::FixedAlpha, vec![0.025]);
        cfg.replicates = 1;
        let r = validate_bounds(&cfg, None, None, Execution::default()).unwrap();
        assert!(r.realized_fp.se.is_none());
        assert!(r.to_table().contains("realized false positives"));
    }

    #[test]
    fn config_files_parse() {
        let toml = r#"
name = "demo"
n_trials = 100
seed = 3
[true_prior]
theta = [-1.0, 0.0, 1.0, 2.0]
mass = [0.1, 0.1, 0.0, 0.8]
[[m_distribution]]
m = 1
failure_type = "B"
[policy]
kind = "signal_concordant"
alpha_menu = [0.01, 0.05]
"#;
        let cfg = ScenarioConfig::from_toml(toml).unwrap();
        assert_eq!(cfg.replicates, 20);
        assert!((cfg.true_rho() - 0.2).abs() < 1e-15);
        let back = ScenarioConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ScenarioConfig::from_toml(&toml.replace("seed = 3\n", "")).is_err());
        let mut shipped = cfg.clone();
        shipped.true_prior = mixture_prior(0.2);
        assert!((shipped.true_rho() - 0.2).abs() < 1e-12);
        shipped.validate().unwrap();
    }
}
