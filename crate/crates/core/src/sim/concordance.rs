//! Empirical checks of the concordance assumptions.
//!
//! First: per endpoint, E[α | θⱼ ≤ 0] ≤ E[α | θⱼ > 0].
//! Second: per trial, E[α | null region] ≤ E[α | otherwise].
//! Third (single-endpoint trials) and Fourth (each endpoint of multi-endpoint
//! trials): within z-bins holding both classes, Pr[null | bin, positive] ≤
//! Pr[null | bin, negative]. The assumptions condition on exact z, so the
//! binned check only approximates them. Every check passes when the observed
//! violation is within 3 standard errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const Z_BIN_WIDTH: f64 = 0.25;
// Relative slack so that equal means differing only by summation order still pass.
const ROUNDING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    n: u64,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sumsq += o.sumsq;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Squared standard error of the mean.
    fn se2(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        var / n
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct MeanPair {
    null: Moments,
    other: Moments,
}

impl MeanPair {
    fn merge(&mut self, o: &MeanPair) {
        self.null.merge(&o.null);
        self.other.merge(&o.other);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct BinCounts {
    pos: u64,
    pos_null: u64,
    neg: u64,
    neg_null: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ConcordanceAcc {
    first: Vec<MeanPair>,
    second: MeanPair,
    third: BTreeMap<i64, BinCounts>,
    fourth: Vec<BTreeMap<i64, BinCounts>>,
}

fn bin_of(z: f64) -> i64 {
    (z / Z_BIN_WIDTH).floor() as i64
}

fn grow<T: Default + Clone>(v: &mut Vec<T>, len: usize) {
    if v.len() < len {
        v.resize(len, T::default());
    }
}

impl ConcordanceAcc {
    /// Add one trial: trial-level α, per-endpoint truth and z, trial outcome.
    pub(crate) fn push(&mut self, alpha: f64, theta: &[f64], z: &[f64], null_trial: bool, positive: bool) {
        let m = theta.len();
        grow(&mut self.first, m);
        for (j, &t) in theta.iter().enumerate() {
            let pair = &mut self.first[j];
            if t <= 0.0 {
                pair.null.push(alpha);
            } else {
                pair.other.push(alpha);
            }
        }
        if null_trial {
            self.second.null.push(alpha);
        } else {
            self.second.other.push(alpha);
        }
        let count = |bins: &mut BTreeMap<i64, BinCounts>, z: f64, null: bool| {
            let b = bins.entry(bin_of(z)).or_default();
            if positive {
                b.pos += 1;
                b.pos_null += null as u64;
            } else {
                b.neg += 1;
                b.neg_null += null as u64;
            }
        };
        if m == 1 {
            count(&mut self.third, z[0], theta[0] <= 0.0);
        } else {
            grow(&mut self.fourth, m);
            for j in 0..m {
                count(&mut self.fourth[j], z[j], theta[j] <= 0.0);
            }
        }
    }

    pub(crate) fn merge(&mut self, o: &ConcordanceAcc) {
        grow(&mut self.first, o.first.len());
        for (a, b) in self.first.iter_mut().zip(&o.first) {
            a.merge(b);
        }
        self.second.merge(&o.second);
        let merge_bins = |into: &mut BTreeMap<i64, BinCounts>, from: &BTreeMap<i64, BinCounts>| {
            for (k, c) in from {
                let b = into.entry(*k).or_default();
                b.pos += c.pos;
                b.pos_null += c.pos_null;
                b.neg += c.neg;
                b.neg_null += c.neg_null;
            }
        };
        merge_bins(&mut self.third, &o.third);
        grow(&mut self.fourth, o.fourth.len());
        for (a, b) in self.fourth.iter_mut().zip(&o.fourth) {
            merge_bins(a, b);
        }
    }

    pub(crate) fn report(&self) -> ConcordanceReport {
        let first = self
            .first
            .iter()
            .enumerate()
            .map(|(j, p)| mean_check(&format!("first (endpoint {})", j + 1), p))
            .collect();
        let second = mean_check("second", &self.second);
        let third = (!self.third.is_empty()).then(|| binned_check("third", &self.third));
        let fourth = self
            .fourth
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(j, b)| binned_check(&format!("fourth (endpoint {})", j + 1), b))
            .collect();
        ConcordanceReport { first, second, third, fourth }
    }
}

/// Comparison of a null-side quantity against its non-null counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheck {
    pub name: String,
    pub null_mean: Option<f64>,
    pub other_mean: Option<f64>,
    pub n_null: u64,
    pub n_other: u64,
    /// null_mean − other_mean.
    pub difference: Option<f64>,
    pub se: f64,
    pub pass: bool,
}

fn mean_check(name: &str, p: &MeanPair) -> MeanCheck {
    let finite = |x: f64| x.is_finite().then_some(x);
    let (a, b) = (finite(p.null.mean()), finite(p.other.mean()));
    let difference = a.zip(b).map(|(a, b)| a - b);
    let se = (p.null.se2() + p.other.se2()).sqrt();
    MeanCheck {
        name: name.to_string(),
        null_mean: a,
        other_mean: b,
        n_null: p.null.n,
        n_other: p.other.n,
        difference,
        se,
        pass: difference.map(|d| d <= 3.0 * se + ROUNDING * a.unwrap_or(0.0).abs()).unwrap_or(true),
    }
}

/// Pooled within-bin difference Pr[null | positive] − Pr[null | negative].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCheck {
    pub name: String,
    pub bins_used: usize,
    /// Bins holding only positives or only negatives.
    pub bins_skipped: usize,
    pub positives_used: u64,
    pub difference: Option<f64>,
    pub se: f64,
    pub pass: bool,
}

fn binned_check(name: &str, bins: &BTreeMap<i64, BinCounts>) -> BinnedCheck {
    let used: Vec<&BinCounts> = bins.values().filter(|b| b.pos > 0 && b.neg > 0).collect();
    let positives_used: u64 = used.iter().map(|b| b.pos).sum();
    let (mut diff, mut var) = (0.0, 0.0);
    for b in &used {
        let w = b.pos as f64 / positives_used as f64;
        let pp = b.pos_null as f64 / b.pos as f64;
        let pn = b.neg_null as f64 / b.neg as f64;
        diff += w * (pp - pn);
        var += w * w * (pp * (1.0 - pp) / b.pos as f64 + pn * (1.0 - pn) / b.neg as f64);
    }
    let difference = (!used.is_empty()).then_some(diff);
    let se = var.sqrt();
    BinnedCheck {
        name: name.to_string(),
        bins_used: used.len(),
        bins_skipped: bins.len() - used.len(),
        positives_used,
        difference,
        se,
        pass: difference.map(|d| d <= 3.0 * se).unwrap_or(true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub first: Vec<MeanCheck>,
    pub second: MeanCheck,
    pub third: Option<BinnedCheck>,
    pub fourth: Vec<BinnedCheck>,
}

impl ConcordanceReport {
    pub fn all_pass(&self) -> bool {
        self.failures().is_empty()
    }

    /// Names of failed checks.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.first.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        if !self.second.pass {
            out.push(self.second.name.clone());
        }
        out.extend(self.third.iter().filter(|c| !c.pass).map(|c| c.name.clone()));
        out.extend(self.fourth.iter().filter(|c| !c.pass).map(|c| c.name.clone()));
        out
    }
}
