//! Synthetic trial corpus for exercising the fit pipeline end to end.
//!
//! Exact rows carry a two-sided p-value and direction. Censored rows come
//! from draws with |z| below the censoring bound and carry only the flag.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmodel::uniform_grid;
use crate::normal::{p_to_z, pdf, z_to_p};
use crate::sim::TruePrior;
use crate::trial::{EfficacyMeasure, FailureRegion, Observation, RejectionPolicy, TrialRecord, DEFAULT_CENSOR_P};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_exact: usize,
    pub n_censored: usize,
    pub seed: u64,
    pub prior: TruePrior,
    /// Censored rows are known only to have p ≥ this value.
    pub censor_p: f64,
    pub nominal_alpha: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_exact: 1221, n_censored: 172, seed: 2024, prior: default_prior(), censor_p: DEFAULT_CENSOR_P, nominal_alpha: 0.025 }
    }
}

/// 9% null mass spread over [−1, 0], the rest ∝ N(2.5, 1.2²) on θ > 0.
pub fn default_prior() -> TruePrior {
    let theta = uniform_grid(-1.0, 6.0, 0.25);
    let positive: f64 = theta.iter().filter(|&&t| t > 0.0).map(|&t| pdf((t - 2.5) / 1.2)).sum();
    let nulls = theta.iter().filter(|&&t| t <= 0.0).count() as f64;
    let mass = theta
        .iter()
        .map(|&t| if t <= 0.0 { 0.09 / nulls } else { 0.91 * pdf((t - 2.5) / 1.2) / positive })
        .collect();
    TruePrior { theta, mass }
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<TrialRecord>> {
    let p = &cfg.prior;
    if p.theta.is_empty() || p.theta.len() != p.mass.len() || !(p.mass.iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidConfig("synthetic prior needs matching theta and positive mass".into()));
    }
    let bound = p_to_z(cfg.censor_p, true)?;
    let censored = Observation::censored_above_p(cfg.censor_p)?;
    let total: f64 = p.mass.iter().sum();
    let mut cdf = Vec::with_capacity(p.mass.len());
    let mut acc = 0.0;
    for g in &p.mass {
        acc += g / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw_z = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let e: f64 = rng.sample(StandardNormal);
        p.theta[k] + e
    };
    let record = |id: usize, observation: Observation| TrialRecord {
        trial_id: format!("S{id:05}"),
        m: 1,
        failure_type: FailureRegion::B,
        measures: vec![EfficacyMeasure { endpoint_index: 1, observation }],
        policy: RejectionPolicy::alpha_level(cfg.nominal_alpha),
        stratum: None,
        outcome: None,
    };
    let mut out = Vec::with_capacity(cfg.n_exact + cfg.n_censored);
    for i in 0..cfg.n_exact {
        let z = draw_z(&mut rng);
        let p = z_to_p(z).max(f64::MIN_POSITIVE);
        out.push(record(i + 1, Observation::PValue { p, favorable: z >= 0.0 }));
    }
    let mut made = 0;
    let mut tries = 0usize;
    while made < cfg.n_censored {
        tries += 1;
        if tries > 1000 * (cfg.n_censored + 1) {
            return Err(Error::InvalidConfig("prior almost never yields |z| below the censoring bound".into()));
        }
        if draw_z(&mut rng).abs() < bound {
            made += 1;
            out.push(record(cfg.n_exact + made, censored));
        }
    }
    Ok(out)
}
