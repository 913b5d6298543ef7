//! Per-round byte and compute accounting, and comparison of runs against
//! an end-to-end baseline.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Broadcast,
    Upload,
}

/// One sealed blob sent between the server and a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub round: usize,
    pub unit: usize,
    pub client: usize,
    pub direction: Direction,
    pub bytes: u64,
}

/// One communication round. `round` counts from 1 across the whole run and
/// `unit` counts trained units from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    pub round: usize,
    pub unit: usize,
    pub bytes_broadcast: u64,
    pub bytes_upload: u64,
    pub cost_units_client: u64,
    pub accuracy: f64,
    pub wall_time: f64,
}

impl RoundLedger {
    pub fn bytes(&self) -> u64 {
        self.bytes_broadcast + self.bytes_upload
    }
}

/// Sums the transfers of one round per direction.
pub fn account_round(
    round: usize,
    unit: usize,
    transfers: &[Transfer],
    cost_units_client: u64,
    accuracy: f64,
    wall_time: f64,
) -> RoundLedger {
    let sum = |d: Direction| {
        transfers
            .iter()
            .filter(|t| t.direction == d)
            .map(|t| t.bytes)
            .sum()
    };
    RoundLedger {
        round,
        unit,
        bytes_broadcast: sum(Direction::Broadcast),
        bytes_upload: sum(Direction::Upload),
        cost_units_client,
        accuracy,
        wall_time,
    }
}

/// Rounds and cumulative bytes until accuracy first reaches `target`.
pub fn rounds_to_target(ledgers: &[RoundLedger], target: f64) -> Option<(usize, u64)> {
    let mut bytes = 0;
    for (i, row) in ledgers.iter().enumerate() {
        bytes += row.bytes();
        if row.accuracy >= target {
            return Some((i + 1, bytes));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub target: f64,
    pub rounds: usize,
    pub bytes: u64,
    pub baseline_rounds: usize,
    pub baseline_bytes: u64,
    pub round_ratio: f64,
    pub traffic_ratio: f64,
}

/// Rounds and traffic a run needs to first reach `target`, relative to the
/// end-to-end baseline.
pub fn compare_to_e2e(
    ppfl: &[RoundLedger],
    e2e: &[RoundLedger],
    target: f64,
) -> Result<Comparison> {
    let missing = |run: &str| Error::TargetNotReached {
        target,
        run: run.to_string(),
    };
    let (rounds, bytes) = rounds_to_target(ppfl, target).ok_or_else(|| missing("candidate"))?;
    let (baseline_rounds, baseline_bytes) =
        rounds_to_target(e2e, target).ok_or_else(|| missing("baseline"))?;
    Ok(Comparison {
        target,
        rounds,
        bytes,
        baseline_rounds,
        baseline_bytes,
        round_ratio: rounds as f64 / baseline_rounds as f64,
        traffic_ratio: bytes as f64 / baseline_bytes as f64,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub final_accuracy: f64,
    pub comparison: Option<Comparison>,
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<28} {:>9} {:>8} {:>14} {:>10} {:>10}\n",
        "run", "final acc", "rounds", "bytes", "rounds x", "traffic x"
    );
    for r in rows {
        match &r.comparison {
            Some(c) => out.push_str(&format!(
                "{:<28} {:>9.4} {:>8} {:>14} {:>10.3} {:>10.3}\n",
                r.run, r.final_accuracy, c.rounds, c.bytes, c.round_ratio, c.traffic_ratio
            )),
            None => out.push_str(&format!(
                "{:<28} {:>9.4} {:>8} {:>14} {:>10} {:>10}\n",
                r.run, r.final_accuracy, "-", "-", "-", "-"
            )),
        }
    }
    out
}
