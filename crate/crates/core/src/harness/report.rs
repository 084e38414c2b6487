//! Metrics CSV files and the cross-run comparison table.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::MetricsRecord;

pub const CSV_COLUMNS: [&str; 6] = ["k", "t_sim_s", "loss_global", "acc_test", "traffic_bits", "event"];

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Schema(format!(
            "{}: columns {:?}, expected {:?}",
            path.display(),
            header,
            CSV_COLUMNS
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub rounds: usize,
    pub final_t_sim_s: f64,
    pub final_acc_test: f64,
    pub final_loss_global: f64,
    pub total_traffic_bits: u128,
    /// First simulated time with accuracy at or above the threshold.
    pub time_to_threshold_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub threshold: Option<f64>,
    pub rows: Vec<CompareRow>,
}

impl fmt::Display for CompareTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut header = vec!["run", "rounds", "t_sim_s", "acc_test", "loss_global", "traffic_bits"];
        if self.threshold.is_some() {
            header.push("time_to_threshold_s");
        }
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut line = vec![
                r.name.clone(),
                r.rounds.to_string(),
                format!("{:.3}", r.final_t_sim_s),
                format!("{:.4}", r.final_acc_test),
                format!("{:.6}", r.final_loss_global),
                r.total_traffic_bits.to_string(),
            ];
            if self.threshold.is_some() {
                line.push(r.time_to_threshold_s.map_or("-".into(), |t| format!("{t:.3}")));
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        for l in lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(f, "{}", cells.join("  ").trim_end())?;
        }
        Ok(())
    }
}

pub fn compare_rows(name: &str, records: &[MetricsRecord], threshold: Option<f64>) -> Result<CompareRow> {
    let last = records
        .last()
        .ok_or_else(|| Error::Schema(format!("{name}: metrics file has no rows")))?;
    Ok(CompareRow {
        name: name.to_string(),
        rounds: last.k,
        final_t_sim_s: last.t_sim_s,
        final_acc_test: last.acc_test,
        final_loss_global: last.loss_global,
        total_traffic_bits: last.traffic_bits,
        time_to_threshold_s: threshold
            .and_then(|th| records.iter().find(|r| r.acc_test >= th).map(|r| r.t_sim_s)),
    })
}

/// One row per metrics file: final accuracy and loss, total traffic, and
/// time to reach `threshold` accuracy when given.
pub fn compare_report(paths: &[PathBuf], threshold: Option<f64>) -> Result<CompareTable> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one metrics file".into()));
    }
    let rows = paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            compare_rows(&name, &read_metrics_csv(p)?, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareTable { threshold, rows })
}
