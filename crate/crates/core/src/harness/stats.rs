//! Layer-by-zone results tables, CSV serialization, and multi-run statistics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Which score populates a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    F1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Em => "em",
            Metric::F1 => "f1",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "em" | "exact" => Ok(Metric::Em),
            "f1" => Ok(Metric::F1),
            other => Err(format!("unknown metric '{other}' (expected em or f1)")),
        }
    }
}

/// The exact column header of `results.csv`.
pub const CSV_HEADER: &str = "layer,all,q2,q2p,p2q,p2";

/// Round half-to-even at three decimals.
pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round_ties_even() / 1000.0
}

/// `L x 5` grid of score percentages: rows are layers 1..L, columns are
/// all, q2, q2p, p2q, p2 in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub metric: Metric,
    pub rows: Vec<[f64; 5]>,
}

impl ResultsTable {
    pub fn new(metric: Metric, rows: Vec<[f64; 5]>) -> Result<Self, HarnessError> {
        for (i, row) in rows.iter().enumerate() {
            for v in row {
                if !(0.0..=100.0).contains(v) {
                    return Err(HarnessError::Csv(format!(
                        "layer {} value {v} outside [0, 100]",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { metric, rows })
    }

    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    /// CSV with 1-based layer labels and three-decimal values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                i + 1,
                row[0],
                row[1],
                row[2],
                row[3],
                row[4]
            ));
        }
        out
    }

    pub fn from_csv(text: &str, metric: Metric) -> Result<Self, HarnessError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::Csv("empty file".into()))?;
        if header.trim() != CSV_HEADER {
            return Err(HarnessError::Csv(format!(
                "header must be exactly '{CSV_HEADER}', got '{header}'"
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 6 {
                return Err(HarnessError::Csv(format!(
                    "row {}: expected 6 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let label: usize = fields[0]
                .parse()
                .map_err(|_| HarnessError::Csv(format!("row {}: bad layer label", i + 1)))?;
            if label != i + 1 {
                return Err(HarnessError::Csv(format!(
                    "row {}: layer label {label} out of order",
                    i + 1
                )));
            }
            let mut row = [0.0; 5];
            for (j, field) in fields[1..].iter().enumerate() {
                row[j] = field
                    .parse()
                    .map_err(|_| HarnessError::Csv(format!("row {}: bad value '{field}'", i + 1)))?;
            }
            rows.push(row);
        }
        Self::new(metric, rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn read_csv(path: &Path, metric: Metric) -> Result<Self, HarnessError> {
        Self::from_csv(&std::fs::read_to_string(path)?, metric)
    }
}

/// Elementwise mean of same-shape, same-metric tables, re-rounded to three
/// decimals.
pub fn average_runs(tables: &[ResultsTable]) -> Result<ResultsTable, HarnessError> {
    let first = tables
        .first()
        .ok_or_else(|| HarnessError::TableMismatch("no tables to average".into()))?;
    for t in tables {
        if t.num_layers() != first.num_layers() {
            return Err(HarnessError::TableMismatch(format!(
                "{} layers vs {}",
                t.num_layers(),
                first.num_layers()
            )));
        }
        if t.metric != first.metric {
            return Err(HarnessError::TableMismatch(format!(
                "metric {} vs {}",
                t.metric, first.metric
            )));
        }
    }
    let n = tables.len() as f64;
    let rows = (0..first.num_layers())
        .map(|i| {
            let mut row = [0.0; 5];
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = round3(tables.iter().map(|t| t.rows[i][j]).sum::<f64>() / n);
            }
            row
        })
        .collect();
    ResultsTable::new(first.metric, rows)
}

/// Per-column sample standard deviation (n-1 denominator) of the layerwise
/// differences `b - a`. Returns one value per zone column.
///
/// The sample estimator is the one that reproduces the published
/// multi-run comparison row; see the stats fixtures in the test suite.
pub fn stddev_of_difference(
    a: &ResultsTable,
    b: &ResultsTable,
) -> Result<[f64; 5], HarnessError> {
    if a.num_layers() != b.num_layers() {
        return Err(HarnessError::TableMismatch(format!(
            "{} layers vs {}",
            a.num_layers(),
            b.num_layers()
        )));
    }
    let n = a.num_layers();
    if n < 2 {
        return Err(HarnessError::TableMismatch(
            "need at least 2 layers for a sample standard deviation".into(),
        ));
    }
    let mut out = [0.0; 5];
    for (j, slot) in out.iter_mut().enumerate() {
        let diffs: Vec<f64> = (0..n).map(|i| b.rows[i][j] - a.rows[i][j]).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        *slot = var.sqrt();
    }
    Ok(out)
}
