//! JSON-lines ledger file: one header line, then one entry per line.
//!
//! Every append is flushed and fsynced before the call returns. Single writer
//! only; concurrent processes must coordinate externally.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Decision, Ledger, LedgerEntry, LedgerHeader, LedgerStatus};
use crate::error::{Error, Result};
use crate::gmodel::PriorModel;
use crate::trial::{FailureRegion, TrialRecord};

#[derive(Debug)]
pub struct FileLedger {
    path: PathBuf,
    ledger: Ledger,
}

fn append_line(path: &Path, line: &str, create: bool) -> Result<()> {
    let mut file = if create {
        OpenOptions::new().write(true).create_new(true).open(path)?
    } else {
        OpenOptions::new().append(true).open(path)?
    };
    file.write_all(line.as_bytes())?;
    file.write_all(b"\n")?;
    file.sync_all()?;
    Ok(())
}

impl FileLedger {
    /// Create a new ledger file; fails if `path` exists.
    pub fn create(path: impl AsRef<Path>, header: LedgerHeader) -> Result<Self> {
        let ledger = Ledger::init(header)?;
        let path = path.as_ref().to_path_buf();
        append_line(&path, &serde_json::to_string(ledger.header())?, true)?;
        Ok(Self { path, ledger })
    }

    /// Load and replay a ledger file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let reader = BufReader::new(File::open(&path)?);
        let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let header: LedgerHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| Error::CorruptLedger(format!("line 1: bad header: {e}")))?,
            None => return Err(Error::CorruptLedger("empty ledger file".into())),
        };
        let mut entries = Vec::new();
        for (i, line) in lines {
            let entry: LedgerEntry = serde_json::from_str(&line?)
                .map_err(|e| Error::CorruptLedger(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        let ledger = Ledger::replay(header, entries)?;
        Ok(Self { path, ledger })
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn persist(&self, entry: &LedgerEntry) -> Result<()> {
        append_line(&self.path, &serde_json::to_string(entry)?, false)
    }

    pub fn propose(
        &mut self,
        trial_id: &str,
        m: u32,
        failure_type: FailureRegion,
        alpha: f64,
        stratum: Option<String>,
        timestamp: Option<u64>,
    ) -> Result<Decision> {
        let mut next = self.ledger.clone();
        let decision = next.propose(trial_id, m, failure_type, alpha, stratum, timestamp)?;
        if let Decision::Accepted { entry, .. } = &decision {
            self.persist(entry)?;
            self.ledger = next;
        }
        Ok(decision)
    }

    pub fn record_outcome(&mut self, trial: &TrialRecord, model: Option<&PriorModel>, timestamp: Option<u64>) -> Result<LedgerEntry> {
        let mut next = self.ledger.clone();
        let entry = next.record_outcome(trial, model, timestamp)?;
        self.persist(&entry)?;
        self.ledger = next;
        Ok(entry)
    }

    pub fn record_adjustment(
        &mut self,
        trial: &TrialRecord,
        model: &PriorModel,
        note: &str,
        timestamp: Option<u64>,
    ) -> Result<LedgerEntry> {
        let mut next = self.ledger.clone();
        let entry = next.record_adjustment(trial, model, note, timestamp)?;
        self.persist(&entry)?;
        self.ledger = next;
        Ok(entry)
    }

    pub fn status(&self) -> LedgerStatus {
        self.ledger.status()
    }
}
