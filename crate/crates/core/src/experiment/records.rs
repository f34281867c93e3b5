//! Line-delimited JSON run records and a reader for them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::EpochRecord;

/// One cell of an ablation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub cell: String,
    pub mode: String,
    pub variant: String,
    pub position: String,
    pub blocks: String,
    pub uar: f64,
    pub war: f64,
    pub trainable: usize,
    pub total: usize,
    pub best_epoch: usize,
    /// SHA-256 of the backbone tensors after training.
    pub backbone_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Epoch(EpochRecord),
    Sweep(SweepRow),
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Parses every non-blank line of a log.
pub fn read_records(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Usage(format!("record on line {} is malformed: {e}", n + 1)))
        })
        .collect()
}

pub fn write_records<'r>(records: impl IntoIterator<Item = &'r Record>) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Fixed-width table of sweep rows.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:>8} {:>8} {:>12} {:>12}",
        "cell", "UAR", "WAR", "trainable", "total"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<22} {:>8.2} {:>8.2} {:>12} {:>12}",
            r.cell,
            100.0 * r.uar,
            100.0 * r.war,
            r.trainable,
            r.total
        );
    }
    s
}
