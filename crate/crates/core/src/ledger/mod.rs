//! Accumulative error-spending ledger.
//!
//! Frequentist ledgers charge τ̂ when a trial is proposed and refuse proposals
//! that would push the stratum's spend above its budget. Bayes ledgers charge
//! G = 1 − h when an outcome is recorded; outcomes are never refused, an
//! exhausted budget only raises a flag.
//!
//! State is fully determined by the header and the entry list. Running sums are
//! folded in entry order, so replay reproduces them bit for bit.

mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use store::FileLedger;

use crate::bayes::{trial_contribution, EndpointSelection, PositiveTrialResult};
use crate::error::{Error, Result};
use crate::frequentist::delta;
use crate::gmodel::PriorModel;
use crate::posterior::resolve_policy;
use crate::trial::{classify_rejection, FailureRegion, Outcome, TrialRecord};

pub const LEDGER_FORMAT: &str = "enfp-ledger";
pub const LEDGER_VERSION: u32 = 1;
/// Account used for entries without a stratum label.
pub const DEFAULT_STRATUM: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerMode {
    Frequentist,
    Bayes,
}

impl std::fmt::Display for LedgerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LedgerMode::Frequentist => "frequentist",
            LedgerMode::Bayes => "bayes",
        })
    }
}

impl std::str::FromStr for LedgerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frequentist" | "freq" => Ok(LedgerMode::Frequentist),
            "bayes" | "bayesian" => Ok(LedgerMode::Bayes),
            other => Err(Error::InvalidConfig(format!("unknown ledger mode {other:?}"))),
        }
    }
}

/// First line of a ledger file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub format: String,
    pub version: u32,
    pub mode: LedgerMode,
    /// τ₀ or ω₀, applied to each stratum without an override.
    pub budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stratum_budgets: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stratum_rho: BTreeMap<String, f64>,
    #[serde(default)]
    pub selection: EndpointSelection,
}

impl LedgerHeader {
    pub fn frequentist(budget: f64, rho_hat: f64) -> Self {
        Self::new(LedgerMode::Frequentist, budget, Some(rho_hat), None)
    }

    pub fn bayes(budget: f64, model: &PriorModel) -> Self {
        Self::new(LedgerMode::Bayes, budget, None, Some(model.content_hash()))
    }

    fn new(mode: LedgerMode, budget: f64, rho_hat: Option<f64>, model_hash: Option<String>) -> Self {
        Self {
            format: LEDGER_FORMAT.into(),
            version: LEDGER_VERSION,
            mode,
            budget,
            rho_hat,
            model_hash,
            stratum_budgets: BTreeMap::new(),
            stratum_rho: BTreeMap::new(),
            selection: EndpointSelection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != LEDGER_FORMAT || self.version != LEDGER_VERSION {
            return Err(Error::Ledger(format!("unsupported ledger format {} v{}", self.format, self.version)));
        }
        let positive = |b: f64| b > 0.0 && b.is_finite();
        if !positive(self.budget) || !self.stratum_budgets.values().all(|&b| positive(b)) {
            return Err(Error::Ledger("budgets must be positive".into()));
        }
        let unit = |r: f64| (0.0..=1.0).contains(&r);
        match self.mode {
            LedgerMode::Frequentist => match self.rho_hat {
                Some(r) if unit(r) && self.stratum_rho.values().all(|&r| unit(r)) => Ok(()),
                _ => Err(Error::Ledger("frequentist ledger needs rho_hat in [0, 1]".into())),
            },
            LedgerMode::Bayes => match self.model_hash {
                Some(_) => Ok(()),
                None => Err(Error::Ledger("bayes ledger needs a model hash".into())),
            },
        }
    }

    pub fn budget_for(&self, stratum: &str) -> f64 {
        self.stratum_budgets.get(stratum).copied().unwrap_or(self.budget)
    }

    pub fn rho_for(&self, stratum: &str) -> f64 {
        self.stratum_rho.get(stratum).copied().or(self.rho_hat).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Proposal,
    Outcome,
    Adjustment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntryPayload {
    Proposal { m: u32, failure_type: FailureRegion, alpha: f64 },
    Outcome { outcome: Outcome, result: PositiveTrialResult },
    Adjustment { result: PositiveTrialResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sequence: u64,
    pub trial_id: String,
    pub kind: EntryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
    pub payload: EntryPayload,
    pub spend_delta: f64,
    pub spent_after: f64,
    /// Unix seconds; metadata only, never read back into state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Running sums for one stratum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub n: u64,
    pub sum_delta: f64,
    pub sum_alpha: f64,
    pub sum_g: f64,
    pub entries: u64,
    pub outcomes: u64,
    pub positives: u64,
    pub adjustments: u64,
    pub over_budget: bool,
}

impl Account {
    fn spent(&self, mode: LedgerMode) -> f64 {
        match mode {
            LedgerMode::Frequentist if self.n == 0 => 0.0,
            LedgerMode::Frequentist => self.sum_delta * self.sum_alpha / self.n as f64,
            LedgerMode::Bayes => self.sum_g,
        }
    }

    /// Accepted proposals (frequentist) or recorded outcomes (bayes).
    fn trials(&self, mode: LedgerMode) -> u64 {
        match mode {
            LedgerMode::Frequentist => self.n,
            LedgerMode::Bayes => self.outcomes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Accepted { projected: f64, entry: Box<LedgerEntry> },
    Rejected { projected: f64 },
}

impl Decision {
    pub fn accepted(&self) -> bool {
        matches!(self, Decision::Accepted { .. })
    }

    pub fn projected(&self) -> f64 {
        match self {
            Decision::Accepted { projected, .. } | Decision::Rejected { projected } => *projected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStatus {
    pub budget: f64,
    pub spent: f64,
    pub remaining: f64,
    pub n_trials: u64,
    pub entries: u64,
    pub adjustments: u64,
    pub over_budget: bool,
    /// Frequentist only: Σα still available at the current mix, N·τ₀/Σδ − Σα (τ₀/ρ̂ when empty).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_total_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerStatus {
    pub mode: LedgerMode,
    pub budget: f64,
    pub spent: f64,
    pub remaining: f64,
    pub n_trials: u64,
    pub entries: u64,
    pub adjustment_fraction: f64,
    pub over_budget: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_total_error: Option<f64>,
    pub strata: BTreeMap<String, StratumStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    header: LedgerHeader,
    entries: Vec<LedgerEntry>,
    accounts: BTreeMap<String, Account>,
}

fn stratum_key(stratum: &Option<String>) -> String {
    stratum.clone().unwrap_or_else(|| DEFAULT_STRATUM.to_string())
}

impl Ledger {
    pub fn init(header: LedgerHeader) -> Result<Self> {
        header.validate()?;
        Ok(Self { header, entries: Vec::new(), accounts: BTreeMap::new() })
    }

    /// Rebuild state by replaying `entries`, checking sequence numbers and recorded spends.
    pub fn replay(header: LedgerHeader, entries: Vec<LedgerEntry>) -> Result<Self> {
        let mut ledger = Self::init(header)?;
        for entry in entries {
            let expected = ledger.entries.len() as u64 + 1;
            if entry.sequence != expected {
                return Err(Error::CorruptLedger(format!("entry {expected} has sequence {}", entry.sequence)));
            }
            let key = stratum_key(&entry.stratum);
            let before = ledger.account(&key).spent(ledger.header.mode);
            ledger.apply(&entry)?;
            let after = ledger.account(&key).spent(ledger.header.mode);
            if after.to_bits() != entry.spent_after.to_bits() || (after - before).to_bits() != entry.spend_delta.to_bits() {
                return Err(Error::CorruptLedger(format!(
                    "entry {} records spend {} but replay gives {after}",
                    entry.sequence, entry.spent_after
                )));
            }
        }
        Ok(ledger)
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn accounts(&self) -> &BTreeMap<String, Account> {
        &self.accounts
    }

    fn account(&self, key: &str) -> Account {
        self.accounts.get(key).cloned().unwrap_or_default()
    }

    pub fn spent(&self, stratum: Option<&str>) -> f64 {
        self.account(stratum.unwrap_or(DEFAULT_STRATUM)).spent(self.header.mode)
    }

    fn apply(&mut self, entry: &LedgerEntry) -> Result<()> {
        let mode = self.header.mode;
        let key = stratum_key(&entry.stratum);
        let rho = self.header.rho_for(&key);
        let budget = self.header.budget_for(&key);
        let selection = self.header.selection;
        let acc = self.accounts.entry(key).or_default();
        match (&entry.payload, entry.kind, mode) {
            (EntryPayload::Proposal { m, failure_type, alpha }, EntryKind::Proposal, LedgerMode::Frequentist) => {
                acc.n += 1;
                acc.sum_delta += delta(rho, *m, *failure_type);
                acc.sum_alpha += alpha;
            }
            (EntryPayload::Outcome { outcome, result }, EntryKind::Outcome, _) => {
                acc.outcomes += 1;
                if *outcome == Outcome::Positive {
                    acc.positives += 1;
                    if mode == LedgerMode::Bayes {
                        acc.sum_g += trial_contribution(result, selection)?;
                    }
                }
            }
            (EntryPayload::Adjustment { result }, EntryKind::Adjustment, LedgerMode::Bayes) => {
                acc.adjustments += 1;
                acc.sum_g += trial_contribution(result, selection)?;
            }
            _ => {
                return Err(Error::CorruptLedger(format!(
                    "entry {} ({:?}) does not fit a {mode} ledger",
                    entry.sequence, entry.kind
                )))
            }
        }
        acc.entries += 1;
        if acc.spent(mode) > budget {
            acc.over_budget = true;
        }
        self.entries.push(entry.clone());
        Ok(())
    }

    fn push(
        &mut self,
        trial_id: &str,
        kind: EntryKind,
        stratum: Option<String>,
        payload: EntryPayload,
        timestamp: Option<u64>,
        note: Option<String>,
    ) -> Result<LedgerEntry> {
        let key = stratum_key(&stratum);
        let before = self.account(&key).spent(self.header.mode);
        let mut entry = LedgerEntry {
            sequence: self.entries.len() as u64 + 1,
            trial_id: trial_id.to_string(),
            kind,
            stratum,
            payload,
            spend_delta: 0.0,
            spent_after: 0.0,
            timestamp,
            note,
        };
        self.apply(&entry)?;
        let after = self.account(&key).spent(self.header.mode);
        entry.spend_delta = after - before;
        entry.spent_after = after;
        *self.entries.last_mut().expect("entry just pushed") = entry.clone();
        Ok(entry)
    }

    fn require(&self, mode: LedgerMode) -> Result<()> {
        if self.header.mode != mode {
            return Err(Error::Ledger(format!("operation needs a {mode} ledger, this one is {}", self.header.mode)));
        }
        Ok(())
    }

    /// Spend τ̂ if it stays within the stratum budget after adding this trial.
    /// A rejected proposal leaves the ledger untouched.
    pub fn propose(
        &mut self,
        trial_id: &str,
        m: u32,
        failure_type: FailureRegion,
        alpha: f64,
        stratum: Option<String>,
        timestamp: Option<u64>,
    ) -> Result<Decision> {
        self.require(LedgerMode::Frequentist)?;
        if m < 1 || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("proposal needs m >= 1 and alpha in (0, 1), got m={m} alpha={alpha}")));
        }
        let key = stratum_key(&stratum);
        let acc = self.account(&key);
        let n = (acc.n + 1) as f64;
        let projected = (acc.sum_delta + delta(self.header.rho_for(&key), m, failure_type)) * (acc.sum_alpha + alpha) / n;
        if projected > self.header.budget_for(&key) {
            return Ok(Decision::Rejected { projected });
        }
        let payload = EntryPayload::Proposal { m, failure_type, alpha };
        let entry = self.push(trial_id, EntryKind::Proposal, stratum, payload, timestamp, None)?;
        Ok(Decision::Accepted { projected, entry: Box::new(entry) })
    }

    fn check_model(&self, model: &PriorModel) -> Result<()> {
        match &self.header.model_hash {
            Some(hash) if *hash != model.content_hash() => {
                Err(Error::Ledger("prior model does not match the one pinned in the ledger header".into()))
            }
            _ => Ok(()),
        }
    }

    fn classify(trial: &TrialRecord, model: Option<&PriorModel>) -> Result<Outcome> {
        let outcome = match model {
            Some(model) => {
                let mut resolved = trial.clone();
                resolved.policy = resolve_policy(&trial.policy, trial.m, model)?;
                classify_rejection(&resolved)?
            }
            None => classify_rejection(trial)?,
        };
        if let Some(declared) = trial.outcome {
            if declared != outcome {
                return Err(Error::CannotClassify {
                    trial_id: trial.trial_id.clone(),
                    reason: format!("record says {declared} but its policy gives {outcome}"),
                });
            }
        }
        Ok(outcome)
    }

    /// Log an observed outcome. Bayes ledgers charge G for positive trials;
    /// frequentist ledgers keep the entry for audit only.
    pub fn record_outcome(&mut self, trial: &TrialRecord, model: Option<&PriorModel>, timestamp: Option<u64>) -> Result<LedgerEntry> {
        trial.validate()?;
        if self.header.mode == LedgerMode::Bayes {
            let model = model.ok_or_else(|| Error::Ledger("bayes outcomes need the prior model".into()))?;
            self.check_model(model)?;
        }
        let outcome = Self::classify(trial, model)?;
        let z = trial.z_values().ok_or_else(|| Error::CannotClassify {
            trial_id: trial.trial_id.clone(),
            reason: "censored endpoint has no observed z".into(),
        })?;
        let result = match model {
            Some(model) => PositiveTrialResult::from_z(&trial.trial_id, trial.failure_type, z, model),
            None => PositiveTrialResult {
                trial_id: trial.trial_id.clone(),
                m: z.len(),
                failure_type: trial.failure_type,
                h_values: vec![0.0; z.len()],
                z_values: z,
                stratum: None,
            },
        }
        .with_stratum(trial.stratum.clone());
        let payload = EntryPayload::Outcome { outcome, result };
        self.push(&trial.trial_id, EntryKind::Outcome, trial.stratum.clone(), payload, timestamp, None)
    }

    /// Charge G for a trial accepted after the fact. The note is mandatory.
    pub fn record_adjustment(
        &mut self,
        trial: &TrialRecord,
        model: &PriorModel,
        note: &str,
        timestamp: Option<u64>,
    ) -> Result<LedgerEntry> {
        self.require(LedgerMode::Bayes)?;
        if note.trim().is_empty() {
            return Err(Error::Ledger("an adjustment needs a note".into()));
        }
        self.check_model(model)?;
        trial.validate()?;
        let z = trial.z_values().ok_or_else(|| Error::CannotClassify {
            trial_id: trial.trial_id.clone(),
            reason: "censored endpoint has no observed z".into(),
        })?;
        let result = PositiveTrialResult::from_z(&trial.trial_id, trial.failure_type, z, model)
            .with_stratum(trial.stratum.clone());
        let payload = EntryPayload::Adjustment { result };
        self.push(&trial.trial_id, EntryKind::Adjustment, trial.stratum.clone(), payload, timestamp, Some(note.to_string()))
    }

    pub fn status(&self) -> LedgerStatus {
        let mode = self.header.mode;
        let mut strata = BTreeMap::new();
        for (name, acc) in &self.accounts {
            let budget = self.header.budget_for(name);
            let spent = acc.spent(mode);
            let remaining_total_error = (mode == LedgerMode::Frequentist).then(|| {
                if acc.n == 0 || acc.sum_delta == 0.0 {
                    budget / self.header.rho_for(name)
                } else {
                    budget * acc.n as f64 / acc.sum_delta - acc.sum_alpha
                }
            });
            strata.insert(
                name.clone(),
                StratumStatus {
                    budget,
                    spent,
                    remaining: budget - spent,
                    n_trials: acc.trials(mode),
                    entries: acc.entries,
                    adjustments: acc.adjustments,
                    over_budget: acc.over_budget,
                    remaining_total_error,
                },
            );
        }
        let entries = self.entries.len() as u64;
        let adjustments: u64 = self.accounts.values().map(|a| a.adjustments).sum();
        let spent = strata.values().fold(0.0, |acc, s| acc + s.spent);
        let (remaining, remaining_total_error) = match strata.len() {
            0 => (
                self.header.budget,
                (mode == LedgerMode::Frequentist).then(|| self.header.budget / self.header.rho_for(DEFAULT_STRATUM)),
            ),
            1 => {
                let only = strata.values().next().expect("one stratum");
                (only.remaining, only.remaining_total_error)
            }
            _ => (strata.values().map(|s| s.remaining).sum(), None),
        };
        LedgerStatus {
            mode,
            budget: self.header.budget,
            spent,
            remaining,
            n_trials: self.accounts.values().map(|a| a.trials(mode)).sum(),
            entries,
            adjustment_fraction: if entries == 0 { 0.0 } else { adjustments as f64 / entries as f64 },
            over_budget: strata.values().any(|s| s.over_budget),
            remaining_total_error,
            strata,
        }
    }

    /// ω̂ recomputed from scratch over positive outcomes and adjustments of one stratum.
    pub fn recomputed_omega(&self, stratum: Option<&str>) -> Result<f64> {
        let key = stratum.unwrap_or(DEFAULT_STRATUM);
        let mut omega = 0.0;
        for e in self.entries.iter().filter(|e| stratum_key(&e.stratum) == key) {
            match &e.payload {
                EntryPayload::Outcome { outcome: Outcome::Positive, result } | EntryPayload::Adjustment { result } => {
                    omega += trial_contribution(result, self.header.selection)?;
                }
                _ => {}
            }
        }
        Ok(omega)
    }
}
