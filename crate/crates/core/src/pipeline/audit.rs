//! Row-partition bookkeeping that keeps subset B sealed until the final
//! scoring step and records every stage's data access.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// SHA-256 over a sorted list of row ids.
pub fn rows_digest(rows: &[usize]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for r in sorted {
        h.update((r as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// The A/B row partition as written to `split.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub config_hash: String,
    pub seed: u64,
    pub a_rows: Vec<usize>,
    pub b_rows: Vec<usize>,
}

impl SplitRecord {
    pub fn same_partition(&self, other: &SplitRecord) -> bool {
        self.a_rows == other.a_rows && self.b_rows == other.b_rows
    }
}

/// One recorded read of dataset rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub stage: String,
    pub n_rows: usize,
    pub rows_digest: String,
    /// How many of the rows read belong to subset B.
    pub b_rows_read: usize,
}

/// Subsets A and B with B held back. Every hand-out of A is logged; B can
/// be unsealed exactly once, and only that event may read B rows.
#[derive(Debug)]
pub struct SealedSplit {
    a: Dataset,
    b: Dataset,
    b_ids: BTreeSet<usize>,
    events: Vec<AccessEvent>,
    unsealed: bool,
}

impl SealedSplit {
    pub fn new(a: Dataset, b: Dataset) -> Result<SealedSplit> {
        let b_ids: BTreeSet<usize> = b.row_ids().iter().copied().collect();
        if a.row_ids().iter().any(|r| b_ids.contains(r)) {
            return Err(Error::Protocol("subsets A and B share rows".into()));
        }
        Ok(SealedSplit {
            a,
            b,
            b_ids,
            events: Vec::new(),
            unsealed: false,
        })
    }

    pub fn record(&self, config_hash: &str, seed: u64) -> SplitRecord {
        SplitRecord {
            config_hash: config_hash.to_string(),
            seed,
            a_rows: self.a.row_ids().to_vec(),
            b_rows: self.b.row_ids().to_vec(),
        }
    }

    fn log(&mut self, stage: &str, rows: &[usize]) {
        let b_rows_read = rows.iter().filter(|r| self.b_ids.contains(r)).count();
        self.events.push(AccessEvent {
            stage: stage.to_string(),
            n_rows: rows.len(),
            rows_digest: rows_digest(rows),
            b_rows_read,
        });
    }

    /// Row ids of subset A. Ids are bookkeeping, not data, so this is not
    /// logged.
    pub fn a_row_ids(&self) -> &[usize] {
        self.a.row_ids()
    }

    /// Subset A for `stage`; the read is logged.
    pub fn a_for(&mut self, stage: &str) -> &Dataset {
        let rows = self.a.row_ids().to_vec();
        self.log(stage, &rows);
        &self.a
    }

    /// Logs a stage that reads no rows at all (e.g. training on a corpus).
    pub fn note_no_rows(&mut self, stage: &str) {
        self.log(stage, &[]);
    }

    /// Adds events recorded by an earlier process (e.g. from a corpus
    /// sidecar), so the audit covers the whole run.
    pub fn import(&mut self, events: &[AccessEvent]) -> Result<()> {
        if self.unsealed {
            return Err(Error::Protocol("cannot import events after subset B was unsealed".into()));
        }
        self.events.extend_from_slice(events);
        Ok(())
    }

    /// Hands out A and B for final scoring. Allowed once.
    pub fn unseal(&mut self, stage: &str) -> Result<(&Dataset, &Dataset)> {
        if self.unsealed {
            return Err(Error::Protocol("subset B was already unsealed".into()));
        }
        self.unsealed = true;
        let mut rows = self.a.row_ids().to_vec();
        rows.extend_from_slice(self.b.row_ids());
        self.log(stage, &rows);
        Ok((&self.a, &self.b))
    }

    pub fn events(&self) -> &[AccessEvent] {
        &self.events
    }

    /// Summary proving B was untouched before the final event.
    pub fn audit(&self) -> RowAudit {
        RowAudit::from_events(self.a.row_ids(), self.b.row_ids(), &self.events)
    }
}

/// Report section: the partition and every logged access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowAudit {
    pub a_rows: usize,
    pub b_rows: usize,
    pub a_digest: String,
    pub b_digest: String,
    pub disjoint: bool,
    pub events: Vec<AccessEvent>,
    /// B rows read by any event other than the last one.
    pub b_reads_before_final: usize,
    /// Number of events that read B at all.
    pub b_unseal_count: usize,
    /// True when B was read by exactly one event and that event came last.
    pub sealed_until_final: bool,
}

impl RowAudit {
    pub fn from_events(a: &[usize], b: &[usize], events: &[AccessEvent]) -> RowAudit {
        let b_set: BTreeSet<usize> = b.iter().copied().collect();
        let disjoint = a.iter().all(|r| !b_set.contains(r));
        let (before, last) = match events.split_last() {
            Some((last, before)) => (before, Some(last)),
            None => (events, None),
        };
        let b_reads_before_final: usize = before.iter().map(|e| e.b_rows_read).sum();
        let b_unseal_count = events.iter().filter(|e| e.b_rows_read > 0).count();
        RowAudit {
            a_rows: a.len(),
            b_rows: b.len(),
            a_digest: rows_digest(a),
            b_digest: rows_digest(b),
            disjoint,
            events: events.to_vec(),
            b_reads_before_final,
            b_unseal_count,
            sealed_until_final: disjoint
                && b_reads_before_final == 0
                && b_unseal_count == 1
                && last.is_some_and(|e| e.b_rows_read == b.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};

    fn sealed() -> SealedSplit {
        let p = make_synthetic_planted(&SyntheticSpec::new(2, 2, 40, 0.1, 1)).unwrap();
        let (a, b) = split_ab(&p.dataset, 0.75, 1).unwrap();
        SealedSplit::new(a, b).unwrap()
    }

    #[test]
    fn clean_run_passes() {
        let mut s = sealed();
        assert_eq!(s.a_for("collect").n_samples(), 30);
        s.note_no_rows("train");
        s.a_for("select");
        let (_, b) = s.unseal("report").unwrap();
        assert_eq!(b.n_samples(), 10);
        let audit = s.audit();
        assert!(audit.sealed_until_final, "{audit:?}");
        assert_eq!(audit.events.len(), 4);
        assert_eq!(audit.events[3].b_rows_read, 10);
        assert!(s.unseal("again").is_err());
    }

    #[test]
    fn early_b_read_is_flagged() {
        let s = sealed();
        let b = s.b.row_ids().to_vec();
        let a = s.a.row_ids().to_vec();
        let mut events = vec![AccessEvent {
            stage: "collect".into(),
            n_rows: 1,
            rows_digest: rows_digest(&b[..1]),
            b_rows_read: 1,
        }];
        let mut all = a.clone();
        all.extend(&b);
        events.push(AccessEvent {
            stage: "report".into(),
            n_rows: all.len(),
            rows_digest: rows_digest(&all),
            b_rows_read: b.len(),
        });
        let audit = RowAudit::from_events(&a, &b, &events);
        assert_eq!(audit.b_reads_before_final, 1);
        assert!(!audit.sealed_until_final);
        // Never unsealed also fails: the report must score on B.
        assert!(!RowAudit::from_events(&a, &b, &events[..0]).sealed_until_final);
    }

    #[test]
    fn digest_ignores_order() {
        assert_eq!(rows_digest(&[3, 1, 2]), rows_digest(&[1, 2, 3]));
        assert_ne!(rows_digest(&[1, 2]), rows_digest(&[1, 3]));
    }
}
