//! Evaluation reports and result tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthResult {
    pub length: usize,
    pub accuracy: f64,
    pub samples: usize,
}

/// Exact-match accuracy per evaluation length for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub model: String,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub results: Vec<LengthResult>,
}

impl EvalReport {
    pub fn accuracy_at(&self, length: usize) -> Option<f64> {
        self.results.iter().find(|r| r.length == length).map(|r| r.accuracy)
    }

    pub const CSV_HEADER: &'static str = "task,model,length,accuracy,samples,config_hash,checkpoint";

    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{},{},{}",
                self.task, self.model, r.length, r.accuracy, r.samples, self.config_hash, self.checkpoint_id
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    /// Parses every report contained in `text` (header lines are skipped).
    pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>> {
        let mut out: Vec<EvalReport> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() || line.starts_with("task,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || LabError::Format {
                what: "report csv",
                detail: line.to_string(),
            };
            if f.len() != 7 {
                return Err(bad());
            }
            let r = LengthResult {
                length: f[2].parse().map_err(|_| bad())?,
                accuracy: f[3].parse().map_err(|_| bad())?,
                samples: f[4].parse().map_err(|_| bad())?,
            };
            match out
                .iter_mut()
                .find(|e| e.task == f[0] && e.model == f[1] && e.config_hash == f[5] && e.checkpoint_id == f[6])
            {
                Some(e) => e.results.push(r),
                None => out.push(EvalReport {
                    task: f[0].into(),
                    model: f[1].into(),
                    config_hash: f[5].into(),
                    checkpoint_id: f[6].into(),
                    results: vec![r],
                }),
            }
        }
        Ok(out)
    }
}

/// Tasks by models by lengths, accuracies in percent with one decimal.
pub fn render_table(reports: &[EvalReport]) -> String {
    let lengths: BTreeSet<usize> = reports.iter().flat_map(|r| r.results.iter().map(|x| x.length)).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Task".to_string(), "Model".to_string()];
    header.extend(lengths.iter().map(|l| l.to_string()));
    rows.push(header);
    let mut last_task = "";
    for r in reports {
        let task = if r.task == last_task { String::new() } else { r.task.clone() };
        last_task = &r.task;
        let mut row = vec![task, r.model.clone()];
        for &l in &lengths {
            row.push(r.accuracy_at(l).map_or("-".into(), |a| format!("{:.1}", a * 100.0)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c < 2 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
