//! Trial record files.
//!
//! CSV holds one row per endpoint:
//!
//! ```text
//! trial_id,endpoint_index,m,failure_type,z,p_value,direction,censored,critical_z,nominal_alpha,h_floor,stratum,outcome
//! ```
//!
//! Exactly one of `z` and `p_value` is set on an uncensored row. On a censored
//! row `z` (the bound b in |Z| < b) or `p_value` (the threshold p₀ in p ≥ p₀)
//! may be given; with neither, p₀ defaults to [`DEFAULT_CENSOR_P`]. Trial-level
//! columns are repeated on every row of a trial and must agree.
//!
//! JSON is an array of nested [`TrialRecord`] objects.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmodel::ObservationSet;
use crate::trial::{
    EfficacyMeasure, FailureRegion, Observation, Outcome, PolicyMode, RejectionPolicy, TrialRecord,
    DEFAULT_CENSOR_P,
};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CsvRow {
    trial_id: String,
    endpoint_index: u32,
    m: usize,
    failure_type: String,
    z: Option<f64>,
    p_value: Option<f64>,
    direction: Option<String>,
    censored: Option<String>,
    critical_z: Option<f64>,
    nominal_alpha: Option<f64>,
    h_floor: Option<f64>,
    stratum: Option<String>,
    outcome: Option<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" | "n" => Some(false),
        "true" | "1" | "yes" | "y" => Some(true),
        _ => None,
    }
}

fn parse_direction(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "favorable" | "+" | "positive" | "1" => Some(true),
        "unfavorable" | "-" | "negative" | "-1" => Some(false),
        _ => None,
    }
}

fn non_empty(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Options for reading CSV records.
#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    /// Threshold p₀ for censored rows that carry neither `z` nor `p_value`.
    pub censor_p: f64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { censor_p: DEFAULT_CENSOR_P }
    }
}

fn row_observation(row: &CsvRow, line: usize, opts: &CsvOptions) -> Result<Observation> {
    let err = |message: String| Error::Row { row: line, message };
    let censored = match row.censored.as_deref() {
        None => false,
        Some(s) => parse_bool(s).ok_or_else(|| err(format!("bad censored flag {s:?}")))?,
    };
    if censored {
        return match (row.z, row.p_value) {
            (Some(_), Some(_)) => Err(err("censored row sets both z and p_value".into())),
            (Some(bound), None) if bound > 0.0 => Ok(Observation::Censored { low: -bound, high: bound }),
            (Some(bound), None) => Err(err(format!("censoring bound must be positive, got {bound}"))),
            (None, Some(p0)) => Observation::censored_above_p(p0).map_err(|e| err(e.to_string())),
            (None, None) => Observation::censored_above_p(opts.censor_p).map_err(|e| err(e.to_string())),
        };
    }
    match (row.z, row.p_value) {
        (Some(z), None) => Ok(Observation::Z { z }),
        (None, Some(p)) => {
            let dir = non_empty(&row.direction)
                .ok_or_else(|| err("p_value row needs a direction (favorable/unfavorable)".into()))?;
            let favorable = parse_direction(dir).ok_or_else(|| err(format!("bad direction {dir:?}")))?;
            Ok(Observation::PValue { p, favorable })
        }
        (Some(_), Some(_)) => Err(err("set exactly one of z and p_value".into())),
        (None, None) => Err(err("row has neither z nor p_value".into())),
    }
}

/// Parse CSV trial records. Trials appear in order of first row.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut trials: Vec<(TrialRecord, Vec<Option<f64>>, usize)> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Row { row: line, message: e.to_string() })?;
        let err = |message: String| Error::Row { row: line, message };
        if row.trial_id.is_empty() {
            return Err(err("empty trial_id".into()));
        }
        let failure: FailureRegion = row.failure_type.parse().map_err(|e: Error| err(e.to_string()))?;
        let outcome = non_empty(&row.outcome)
            .map(|s| s.parse::<Outcome>())
            .transpose()
            .map_err(|e| err(e.to_string()))?;
        let mode = match (row.nominal_alpha, row.h_floor) {
            (Some(_), None) => PolicyMode::AlphaLevel,
            (None, Some(_)) => PolicyMode::HThreshold,
            _ => return Err(err("set exactly one of nominal_alpha and h_floor".into())),
        };
        let measure = EfficacyMeasure { endpoint_index: row.endpoint_index, observation: row_observation(&row, line, opts)? };
        let stratum = non_empty(&row.stratum).map(str::to_string);
        match index.get(&row.trial_id) {
            Some(&k) => {
                let (t, crit, _) = &mut trials[k];
                if t.m != row.m
                    || t.failure_type != failure
                    || t.policy.nominal_alpha != row.nominal_alpha
                    || t.policy.h_floor != row.h_floor
                    || t.stratum != stratum
                    || t.outcome != outcome
                {
                    return Err(err(format!("trial-level columns disagree with earlier rows of {}", row.trial_id)));
                }
                t.measures.push(measure);
                crit.push(row.critical_z);
            }
            None => {
                index.insert(row.trial_id.clone(), trials.len());
                let policy = RejectionPolicy {
                    mode,
                    nominal_alpha: row.nominal_alpha,
                    h_floor: row.h_floor,
                    critical_z: None,
                };
                let record = TrialRecord {
                    trial_id: row.trial_id.clone(),
                    m: row.m,
                    failure_type: failure,
                    measures: vec![measure],
                    policy,
                    stratum,
                    outcome,
                };
                trials.push((record, vec![row.critical_z], line));
            }
        }
    }
    trials
        .into_iter()
        .map(|(mut t, crit, line)| {
            let mut order: Vec<usize> = (0..t.measures.len()).collect();
            order.sort_by_key(|&k| t.measures[k].endpoint_index);
            t.measures = order.iter().map(|&k| t.measures[k]).collect();
            let crit: Vec<Option<f64>> = order.iter().map(|&k| crit[k]).collect();
            t.policy.critical_z = if crit.iter().all(Option::is_none) {
                None
            } else if crit.iter().all(Option::is_some) {
                Some(crit.into_iter().flatten().collect())
            } else {
                return Err(Error::Row { row: line, message: format!("trial {}: critical_z set on some endpoints only", t.trial_id) });
            };
            t.validate().map_err(|e| Error::Row { row: line, message: e.to_string() })?;
            Ok(t)
        })
        .collect()
}

pub fn write_csv<W: Write>(writer: W, trials: &[TrialRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for t in trials {
        for (j, measure) in t.measures.iter().enumerate() {
            let mut row = CsvRow {
                trial_id: t.trial_id.clone(),
                endpoint_index: measure.endpoint_index,
                m: t.m,
                failure_type: t.failure_type.to_string(),
                critical_z: t.policy.critical_z.as_ref().map(|c| c[j]),
                nominal_alpha: t.policy.nominal_alpha,
                h_floor: t.policy.h_floor,
                stratum: t.stratum.clone(),
                outcome: t.outcome.map(|o| o.to_string()),
                censored: Some("false".into()),
                ..Default::default()
            };
            match measure.observation {
                Observation::Z { z } => row.z = Some(z),
                Observation::PValue { p, favorable } => {
                    row.p_value = Some(p);
                    row.direction = Some(if favorable { "favorable" } else { "unfavorable" }.into());
                }
                Observation::Censored { low, high } => {
                    if low != -high {
                        return Err(Error::InvalidRecord(format!(
                            "trial {}: asymmetric censor interval ({low}, {high}) has no CSV form; use JSON",
                            t.trial_id
                        )));
                    }
                    row.z = Some(high);
                    row.censored = Some("true".into());
                }
            }
            wtr.serialize(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_json<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let trials: Vec<TrialRecord> = serde_json::from_reader(reader)?;
    for t in &trials {
        t.validate()?;
    }
    Ok(trials)
}

pub fn write_json<W: Write>(writer: W, trials: &[TrialRecord]) -> Result<()> {
    serde_json::to_writer_pretty(writer, trials)?;
    Ok(())
}

/// Pool every endpoint of every record into an observation set for deconvolution.
pub fn observations(trials: &[TrialRecord]) -> ObservationSet {
    let mut set = ObservationSet::default();
    for t in trials {
        for measure in &t.measures {
            match (measure.z(), measure.censor_interval()) {
                (Some(z), _) => set.exact_z.push(z),
                (None, Some(interval)) => set.censored.push(interval),
                (None, None) => {}
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
trial_id,endpoint_index,m,failure_type,z,p_value,direction,censored,critical_z,nominal_alpha,h_floor,stratum,outcome
T1,1,1,B,2.1,,,false,,0.025,,onc,positive
T2,2,2,A,,0.2,unfavorable,,,0.025,,,
T2,1,2,A,,0.01,favorable,,,0.025,,,
T3,1,1,B,,,,true,,0.05,,,negative
T4,1,1,B,2.5,,,,,,0.97,,
";

    #[test]
    fn parses_flat_rows() {
        let trials = read_csv(SAMPLE.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(trials.len(), 4);
        assert_eq!(trials[0].stratum.as_deref(), Some("onc"));
        assert_eq!(trials[1].measures[0].endpoint_index, 1);
        assert!(trials[1].measures[1].z().unwrap() < 0.0);
        let (low, high) = trials[2].measures[0].censor_interval().unwrap();
        assert!((high - 1.959_963_984_540_054).abs() < 1e-12 && low == -high);
        assert_eq!(trials[3].policy.mode, PolicyMode::HThreshold);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let trials = read_csv(SAMPLE.as_bytes(), &CsvOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &trials).unwrap();
        let again = read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(trials, again);
        let mut js = Vec::new();
        write_json(&mut js, &trials).unwrap();
        assert_eq!(read_json(js.as_slice()).unwrap(), trials);
    }

    #[test]
    fn reports_row_numbers() {
        let bad = "trial_id,endpoint_index,m,failure_type,z,p_value,direction,censored,critical_z,nominal_alpha,h_floor,stratum,outcome\n\
                   T1,1,1,B,1.0,,,,,0.025,,,\n\
                   T2,1,1,B,1.0,0.3,,,,0.025,,,\n";
        match read_csv(bad.as_bytes(), &CsvOptions::default()) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observation_pool() {
        let trials = read_csv(SAMPLE.as_bytes(), &CsvOptions::default()).unwrap();
        let obs = observations(&trials);
        assert_eq!(obs.exact_z.len(), 4);
        assert_eq!(obs.censored.len(), 1);
    }
}
