//! Pre-registration upper bounds on the expected number of false positives.
//!
//! With null fraction ρ̂, per-trial levels αᵢ and endpoint structure (mᵢ, tᵢ),
//! the bound is τ̂ = (1/N)(Σ δ(ρ̂, mᵢ, tᵢ))(Σ αᵢ), which reduces to ρ̂ Σ αᵢ when
//! every trial has a single endpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::FailureRegion;

/// Upper bound on the probability that a trial's null region holds.
///
/// Type B uses the union bound mρ, which can exceed 1.
pub fn delta(rho: f64, m: u32, failure: FailureRegion) -> f64 {
    match failure {
        FailureRegion::A => rho,
        FailureRegion::B => m as f64 * rho,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqTrial {
    pub m: u32,
    pub failure_type: FailureRegion,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
}

impl FreqTrial {
    pub fn new(m: u32, failure_type: FailureRegion, alpha: f64) -> Self {
        Self { m, failure_type, alpha, stratum: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqBoundInput {
    pub rho_hat: f64,
    pub trials: Vec<FreqTrial>,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!("rho {rho} outside [0, 1]")));
    }
    Ok(())
}

/// ρ̂ Σ αᵢ for a population of single-endpoint trials. Empty input gives 0.
pub fn tau_hat_single(rho_hat: f64, alphas: &[f64]) -> f64 {
    rho_hat * alphas.iter().sum::<f64>()
}

/// Product-of-sums bound for mixed endpoint counts. N = 0 gives 0.
pub fn tau_hat_mixed(input: &FreqBoundInput) -> Result<f64> {
    check_rho(input.rho_hat)?;
    for t in &input.trials {
        t.validate()?;
    }
    Ok(mixed_unchecked(input.rho_hat, &input.trials))
}

pub(crate) fn mixed_unchecked(rho: f64, trials: &[FreqTrial]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    let n = trials.len() as f64;
    let deltas: f64 = trials.iter().map(|t| delta(rho, t.m, t.failure_type)).sum();
    let alphas: f64 = trials.iter().map(|t| t.alpha).sum();
    deltas * alphas / n
}

/// floor(x) that treats x within a few ulps below an integer as that integer.
pub(crate) fn tolerant_floor(x: f64) -> u64 {
    let up = x.round();
    if (up - x).abs() <= 1e-9 * x.abs().max(1.0) {
        up as u64
    } else {
        x.floor() as u64
    }
}

/// Largest N with ρ̂·N·α ≤ τ₀.
pub fn capacity(tau0: f64, rho_hat: f64, alpha_fixed: f64) -> Result<u64> {
    if !(tau0 > 0.0 && rho_hat > 0.0 && rho_hat <= 1.0 && alpha_fixed > 0.0 && alpha_fixed < 1.0) {
        return Err(Error::InvalidConfig("capacity needs tau0 > 0, rho in (0, 1], alpha in (0, 1)".into()));
    }
    Ok(tolerant_floor(tau0 / (rho_hat * alpha_fixed)))
}

/// Capacity with the total error τ₀/ρ̂ rounded to an integer first.
pub fn capacity_rounded(tau0: f64, rho_hat: f64, alpha_fixed: f64) -> Result<u64> {
    capacity(tau0, rho_hat, alpha_fixed)?;
    let total_error = (tau0 / rho_hat).round();
    Ok(tolerant_floor(total_error / alpha_fixed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedBound {
    pub per_stratum: BTreeMap<String, f64>,
    pub total: f64,
}

/// Per-stratum product-of-sums bounds, each with its own ρ̂.
pub fn tau_hat_stratified(
    trials: &BTreeMap<String, Vec<FreqTrial>>,
    rho: &BTreeMap<String, f64>,
) -> Result<StratifiedBound> {
    let mut per_stratum = BTreeMap::new();
    for (name, list) in trials {
        let rho_hat = *rho.get(name).ok_or_else(|| Error::MissingStratum(name.clone()))?;
        if list.is_empty() {
            return Err(Error::Empty(format!("stratum {name} has no trials")));
        }
        let tau = tau_hat_mixed(&FreqBoundInput { rho_hat, trials: list.clone() })?;
        per_stratum.insert(name.clone(), tau);
    }
    let total = per_stratum.values().sum();
    Ok(StratifiedBound { per_stratum, total })
}
