//! Trials, endpoints, failure regions and rejection policies.
//!
//! Effect sizes are standardized, θ = (β − c)/σ, so every failure region is
//! anchored at θ = 0 and an observed endpoint is summarized by its Z value.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Default two-sided p threshold below which unreported results are assumed not to fall.
pub const DEFAULT_CENSOR_P: f64 = 0.05;

/// Shape of the null set of a trial with `m` efficacy measures.
///
/// `A` is the intersection of the per-endpoint nulls (the trial fails only if
/// every endpoint is null), `B` the union (a single null endpoint fails it).
/// Single-endpoint trials are conventionally typed `B`; for `m = 1` the two
/// coincide in every computation of this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureRegion {
    A,
    B,
}

impl fmt::Display for FailureRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureRegion::A => f.write_str("A"),
            FailureRegion::B => f.write_str("B"),
        }
    }
}

impl std::str::FromStr for FailureRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(FailureRegion::A),
            "B" | "b" => Ok(FailureRegion::B),
            other => Err(Error::InvalidRecord(format!("unknown failure type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Negative,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Positive => f.write_str("positive"),
            Outcome::Negative => f.write_str("negative"),
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "positive" | "pos" => Ok(Outcome::Positive),
            "negative" | "neg" => Ok(Outcome::Negative),
            other => Err(Error::InvalidRecord(format!("unknown outcome {other:?}"))),
        }
    }
}

/// What was observed for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    /// Standardized statistic.
    Z { z: f64 },
    /// Two-sided p-value plus the sign of the point estimate.
    PValue { p: f64, favorable: bool },
    /// Only known to lie in `(low, high)` on the Z scale.
    Censored { low: f64, high: f64 },
}

impl Observation {
    /// The symmetric interval |Z| < Φ⁻¹(1 − p₀/2) used for results only known to have p ≥ p₀.
    pub fn censored_above_p(p0: f64) -> Result<Self> {
        let bound = normal::p_to_z(p0, true)?;
        if bound <= 0.0 {
            return Err(Error::Domain(format!("censoring threshold p0 = {p0} gives an empty interval")));
        }
        Ok(Observation::Censored { low: -bound, high: bound })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Observation::Z { z } if !z.is_finite() => {
                Err(Error::InvalidRecord(format!("z must be finite, got {z}")))
            }
            Observation::PValue { p, .. } if !(p > 0.0 && p <= 1.0) => {
                Err(Error::InvalidRecord(format!("p-value must lie in (0,1], got {p}")))
            }
            Observation::Censored { low, high } if !(low < high) || low.is_nan() || high.is_nan() => {
                Err(Error::InvalidRecord(format!("censor interval must satisfy low < high, got ({low}, {high})")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficacyMeasure {
    /// 1-based.
    pub endpoint_index: u32,
    pub observation: Observation,
}

impl EfficacyMeasure {
    pub fn exact(endpoint_index: u32, z: f64) -> Self {
        Self { endpoint_index, observation: Observation::Z { z } }
    }

    /// Observed Z, converting a p-value if that is what was recorded. `None` when censored.
    pub fn z(&self) -> Option<f64> {
        match self.observation {
            Observation::Z { z } => Some(z),
            Observation::PValue { p, favorable } => normal::p_to_z(p, favorable).ok(),
            Observation::Censored { .. } => None,
        }
    }

    pub fn censor_interval(&self) -> Option<(f64, f64)> {
        match self.observation {
            Observation::Censored { low, high } => Some((low, high)),
            _ => None,
        }
    }

    pub fn direction_favorable(&self) -> Option<bool> {
        match self.observation {
            Observation::Z { z } => Some(z >= 0.0),
            Observation::PValue { favorable, .. } => Some(favorable),
            Observation::Censored { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    AlphaLevel,
    HThreshold,
}

/// How a trial decides D ∈ R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPolicy {
    pub mode: PolicyMode,
    /// One-sided trial-level type I error rate (alpha-level mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_alpha: Option<f64>,
    /// Minimum h-probability per endpoint (h-threshold mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_floor: Option<f64>,
    /// Explicit per-endpoint critical values; derived from `nominal_alpha` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_z: Option<Vec<f64>>,
}

// Slack allowed when checking that explicit critical values respect the declared alpha,
// so values rounded to two decimals (e.g. 2.24 for 2.2414) are accepted.
const ALPHA_CHECK_SLACK: f64 = 0.01;

impl RejectionPolicy {
    pub fn alpha_level(alpha: f64) -> Self {
        Self { mode: PolicyMode::AlphaLevel, nominal_alpha: Some(alpha), h_floor: None, critical_z: None }
    }

    pub fn h_threshold(h_floor: f64) -> Self {
        Self { mode: PolicyMode::HThreshold, nominal_alpha: None, h_floor: Some(h_floor), critical_z: None }
    }

    pub fn with_critical_z(mut self, critical_z: Vec<f64>) -> Self {
        self.critical_z = Some(critical_z);
        self
    }

    /// Per-endpoint one-sided level implied by the trial-level alpha: Bonferroni α/m for
    /// type A (any endpoint rejects), α for type B (every endpoint must reject).
    pub fn endpoint_alpha(alpha: f64, m: usize, failure: FailureRegion) -> f64 {
        match failure {
            FailureRegion::A if m > 1 => alpha / m as f64,
            _ => alpha,
        }
    }

    pub fn validate(&self, m: usize, failure: FailureRegion) -> Result<()> {
        match self.mode {
            PolicyMode::AlphaLevel => {
                let alpha = self
                    .nominal_alpha
                    .ok_or_else(|| Error::InvalidRecord("alpha-level policy without nominal_alpha".into()))?;
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidRecord(format!("nominal_alpha must lie in (0,1), got {alpha}")));
                }
                if let Some(cz) = &self.critical_z {
                    self.check_len(cz, m)?;
                    let tails: Vec<f64> = cz.iter().map(|&c| normal::sf(c)).collect();
                    let trial_level = match failure {
                        FailureRegion::A if m > 1 => tails.iter().sum::<f64>(),
                        _ => tails.iter().cloned().fold(0.0, f64::max),
                    };
                    if trial_level > alpha * (1.0 + ALPHA_CHECK_SLACK) {
                        return Err(Error::InvalidRecord(format!(
                            "critical values give trial-level alpha {trial_level:.6} above declared {alpha}"
                        )));
                    }
                }
            }
            PolicyMode::HThreshold => {
                let h = self
                    .h_floor
                    .ok_or_else(|| Error::InvalidRecord("h-threshold policy without h_floor".into()))?;
                if !(h > 0.0 && h < 1.0) {
                    return Err(Error::InvalidRecord(format!("h_floor must lie in (0,1), got {h}")));
                }
                if let Some(cz) = &self.critical_z {
                    self.check_len(cz, m)?;
                }
            }
        }
        Ok(())
    }

    fn check_len(&self, cz: &[f64], m: usize) -> Result<()> {
        if cz.len() != m {
            return Err(Error::InvalidRecord(format!("{} critical values for {m} endpoints", cz.len())));
        }
        if cz.iter().any(|c| c.is_nan()) {
            return Err(Error::InvalidRecord("critical value is NaN".into()));
        }
        Ok(())
    }

    /// Critical Z per endpoint.
    pub fn critical_values(&self, m: usize, failure: FailureRegion) -> Result<Vec<f64>> {
        if let Some(cz) = &self.critical_z {
            self.check_len(cz, m)?;
            return Ok(cz.clone());
        }
        match (self.mode, self.nominal_alpha) {
            (PolicyMode::AlphaLevel, Some(alpha)) => {
                let c = normal::upper_quantile(Self::endpoint_alpha(alpha, m, failure))?;
                Ok(vec![c; m])
            }
            _ => Err(Error::InvalidRecord(
                "h-threshold policy has no critical values; resolve it against a prior model first".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub m: usize,
    pub failure_type: FailureRegion,
    pub measures: Vec<EfficacyMeasure>,
    pub policy: RejectionPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidRecord(format!("trial {}: m must be >= 1", self.trial_id)));
        }
        if self.measures.len() != self.m {
            return Err(Error::InvalidRecord(format!(
                "trial {}: {} measures for m = {}",
                self.trial_id,
                self.measures.len(),
                self.m
            )));
        }
        for (i, measure) in self.measures.iter().enumerate() {
            if measure.endpoint_index as usize != i + 1 {
                return Err(Error::InvalidRecord(format!(
                    "trial {}: endpoint indices must run 1..{} in order",
                    self.trial_id, self.m
                )));
            }
            measure.observation.validate()?;
        }
        self.policy.validate(self.m, self.failure_type)
    }

    /// Observed Z per endpoint, or `None` if any endpoint is censored.
    pub fn z_values(&self) -> Option<Vec<f64>> {
        self.measures.iter().map(EfficacyMeasure::z).collect()
    }
}

/// Z = (β̂ − c)/σ.
pub fn standardize(beta_hat: f64, c: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidScale(sigma));
    }
    Ok((beta_hat - c) / sigma)
}

pub use crate::normal::{p_to_z, z_to_p};

/// Apply the rejection rule to observed Z values.
///
/// Type A: positive iff any endpoint exceeds its critical value. Type B:
/// positive iff every endpoint does (intersection-union test).
pub fn rejects(z: &[f64], critical: &[f64], failure: FailureRegion) -> bool {
    debug_assert_eq!(z.len(), critical.len());
    let mut exceed = z.iter().zip(critical).map(|(z, c)| z > c);
    match failure {
        FailureRegion::A => exceed.any(|e| e),
        FailureRegion::B => exceed.all(|e| e),
    }
}

pub fn classify_rejection(trial: &TrialRecord) -> Result<Outcome> {
    let cannot = |reason: String| Error::CannotClassify { trial_id: trial.trial_id.clone(), reason };
    if trial.measures.len() != trial.m {
        return Err(cannot(format!("{} measures for m = {}", trial.measures.len(), trial.m)));
    }
    let z = trial.z_values().ok_or_else(|| cannot("censored endpoint has no observed z".into()))?;
    let critical = trial.policy.critical_values(trial.m, trial.failure_type).map_err(|e| cannot(e.to_string()))?;
    Ok(if rejects(&z, &critical, trial.failure_type) { Outcome::Positive } else { Outcome::Negative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial(failure: FailureRegion, z: &[f64], critical: &[f64]) -> TrialRecord {
        TrialRecord {
            trial_id: "t".into(),
            m: z.len(),
            failure_type: failure,
            measures: z.iter().enumerate().map(|(i, &z)| EfficacyMeasure::exact(i as u32 + 1, z)).collect(),
            policy: RejectionPolicy::alpha_level(0.025).with_critical_z(critical.to_vec()),
            stratum: None,
            outcome: None,
        }
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(0.5, 0.0, 0.25).unwrap(), 2.0);
        assert_eq!(standardize(0.7, 0.7, 0.3).unwrap(), 0.0);
        assert!((standardize(1.3, 0.3, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(standardize(1.0, 0.0, 0.0), Err(Error::InvalidScale(_))));
        assert!(standardize(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn classify_examples() {
        let single = trial(FailureRegion::B, &[2.1], &[1.96]);
        assert_eq!(classify_rejection(&single).unwrap(), Outcome::Positive);
        let union_null = trial(FailureRegion::B, &[2.5, 1.0], &[1.96, 1.96]);
        assert_eq!(classify_rejection(&union_null).unwrap(), Outcome::Negative);
        let inter_null = trial(FailureRegion::A, &[2.5, 1.0], &[2.24, 2.24]);
        assert_eq!(classify_rejection(&inter_null).unwrap(), Outcome::Positive);
        inter_null.validate().unwrap();
    }

    #[test]
    fn bonferroni_critical_value() {
        let policy = RejectionPolicy::alpha_level(0.025);
        let c = policy.critical_values(2, FailureRegion::A).unwrap();
        assert!((c[0] - 2.241_402_727_604_947).abs() < 1e-9);
        let c = policy.critical_values(2, FailureRegion::B).unwrap();
        assert!((c[1] - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn censored_trial_cannot_be_classified() {
        let mut t = trial(FailureRegion::B, &[2.1], &[1.96]);
        t.measures[0].observation = Observation::censored_above_p(0.05).unwrap();
        assert!(matches!(classify_rejection(&t), Err(Error::CannotClassify { .. })));
    }

    #[test]
    fn validation_catches_bad_records() {
        let mut t = trial(FailureRegion::A, &[2.5, 1.0], &[1.96, 1.96]);
        // 2 x 0.025 tail exceeds the declared 0.025
        assert!(t.validate().is_err());
        t.policy.critical_z = None;
        t.validate().unwrap();
        t.measures[1].endpoint_index = 3;
        assert!(t.validate().is_err());
        let bad = Observation::Censored { low: 1.0, high: -1.0 };
        assert!(bad.validate().is_err());
        assert!(RejectionPolicy::h_threshold(1.0).validate(1, FailureRegion::B).is_err());
    }

    #[test]
    fn censored_interval_from_p() {
        let Observation::Censored { low, high } = Observation::censored_above_p(0.05).unwrap() else {
            panic!()
        };
        assert!((high - 1.959_963_984_540_054).abs() < 1e-12);
        assert_eq!(low, -high);
    }

    proptest! {
        #[test]
        fn p_z_round_trip(log_p in -12.0f64..0.0, fav in any::<bool>()) {
            let p = 10f64.powf(log_p);
            let z = p_to_z(p, fav).unwrap();
            prop_assert!((z_to_p(z) - p).abs() <= 1e-10);
        }

        #[test]
        fn single_endpoint_type_is_irrelevant(z in -5.0f64..5.0, c in -3.0f64..4.0) {
            prop_assert_eq!(rejects(&[z], &[c], FailureRegion::A), rejects(&[z], &[c], FailureRegion::B));
        }

        #[test]
        fn union_null_monotone_in_critical_values(
            z in proptest::collection::vec(-3.0f64..5.0, 1..5),
            shift in 0.0f64..3.0,
            idx in 0usize..5,
        ) {
            let critical = vec![1.96; z.len()];
            let before = rejects(&z, &critical, FailureRegion::B);
            let mut relaxed = critical.clone();
            let k = idx % z.len();
            relaxed[k] -= shift;
            let after = rejects(&z, &relaxed, FailureRegion::B);
            prop_assert!(!before || after);
        }
    }
}
