//! Outcome-time bounds on the number of false positives among positive trials.
//!
//! Each positive trial contributes G = 1 − h(z) for a designated endpoint
//! (type A) or Σⱼ (1 − h(z⁽ʲ⁾)) (type B); ω̂ is the sum of contributions.
//! Contributions use the h-values frozen on the record, so a refitted prior
//! does not rewrite history. [`recompute`] refreshes them for audits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmodel::PriorModel;
use crate::posterior::HEvaluator;
use crate::trial::{classify_rejection, FailureRegion, Outcome, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveTrialResult {
    pub trial_id: String,
    pub m: usize,
    pub failure_type: FailureRegion,
    pub z_values: Vec<f64>,
    pub h_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
}

impl PositiveTrialResult {
    /// Freeze h-values for a trial that rejects under its policy.
    pub fn from_record(trial: &TrialRecord, model: &PriorModel) -> Result<Self> {
        if classify_rejection(trial)? != Outcome::Positive {
            return Err(Error::InvalidRecord(format!("trial {} is not positive", trial.trial_id)));
        }
        let z_values = trial.z_values().expect("classified trials have observed z");
        Ok(Self::from_z(&trial.trial_id, trial.failure_type, z_values, model).with_stratum(trial.stratum.clone()))
    }

    pub fn from_z(trial_id: &str, failure_type: FailureRegion, z_values: Vec<f64>, model: &PriorModel) -> Self {
        let eval = HEvaluator::new(model);
        Self {
            trial_id: trial_id.to_string(),
            m: z_values.len(),
            failure_type,
            h_values: z_values.iter().map(|&z| eval.eval(z).h).collect(),
            z_values,
            stratum: None,
        }
    }

    pub fn with_stratum(mut self, stratum: Option<String>) -> Self {
        self.stratum = stratum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.z_values.len() != self.m || self.h_values.len() != self.m {
            return Err(Error::InvalidRecord(format!(
                "trial {}: z/h lengths do not match m = {}",
                self.trial_id, self.m
            )));
        }
        if self.h_values.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return Err(Error::InvalidRecord(format!("trial {}: h outside [0, 1]", self.trial_id)));
        }
        Ok(())
    }
}

/// Which endpoint bounds a type-A trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSelection {
    /// 1-based endpoint index.
    Designated(usize),
    /// The endpoint with the largest z.
    Tightest,
}

impl Default for EndpointSelection {
    fn default() -> Self {
        EndpointSelection::Designated(1)
    }
}

/// G for one positive trial.
pub fn trial_contribution(trial: &PositiveTrialResult, selection: EndpointSelection) -> Result<f64> {
    trial.validate()?;
    match trial.failure_type {
        FailureRegion::B => Ok(trial.h_values.iter().map(|h| 1.0 - h).sum()),
        FailureRegion::A => {
            let k = match selection {
                EndpointSelection::Designated(k) => {
                    if k == 0 || k > trial.m {
                        return Err(Error::InvalidRecord(format!(
                            "trial {}: designated endpoint {k} out of 1..={}",
                            trial.trial_id, trial.m
                        )));
                    }
                    k - 1
                }
                EndpointSelection::Tightest => trial
                    .z_values
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0),
            };
            Ok(1.0 - trial.h_values[k])
        }
    }
}

/// ω̂ = Σ G over positive trials; empty input gives 0.
pub fn omega_hat(positives: &[PositiveTrialResult], selection: EndpointSelection) -> Result<f64> {
    positives.iter().map(|t| trial_contribution(t, selection)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedOmega {
    pub per_stratum: BTreeMap<String, f64>,
    pub total: f64,
}

/// Per-stratum ω̂ with h recomputed under each stratum's own prior.
pub fn omega_hat_stratified(
    positives: &BTreeMap<String, Vec<PositiveTrialResult>>,
    models: &BTreeMap<String, PriorModel>,
    selection: EndpointSelection,
) -> Result<StratifiedOmega> {
    let mut per_stratum = BTreeMap::new();
    for (name, list) in positives {
        let model = models.get(name).ok_or_else(|| Error::MissingStratum(name.clone()))?;
        let refreshed: Vec<PositiveTrialResult> = list.iter().map(|t| recompute(t, model)).collect();
        per_stratum.insert(name.clone(), omega_hat(&refreshed, selection)?);
    }
    let total = per_stratum.values().sum();
    Ok(StratifiedOmega { per_stratum, total })
}

/// Copy of `trial` with h-values re-evaluated under `model`.
pub fn recompute(trial: &PositiveTrialResult, model: &PriorModel) -> PositiveTrialResult {
    PositiveTrialResult::from_z(&trial.trial_id, trial.failure_type, trial.z_values.clone(), model)
        .with_stratum(trial.stratum.clone())
}
