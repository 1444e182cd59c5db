//! Results tables: rows are variants, columns are languages then AVGz; cells
//! are seed means ×100 with two decimals.

use std::fmt::Write as _;
use std::path::Path;

use super::eval::{EvalReport, AVG_Z};
use crate::error::{Error, Result};
use crate::synthlang::TaskKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub task: TaskKind,
    /// Language codes in display order, ending with [`AVG_Z`].
    pub columns: Vec<String>,
    /// `(variant, cells)`; a missing cell (failed run) is `None`.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl ResultsTable {
    /// Builds the table for `task` from per-seed reports (AVGz rows are
    /// recomputed, not read). Cells average over seeds; AVGz averages the
    /// non-source language means.
    pub fn from_reports(
        task: TaskKind,
        reports: &[EvalReport],
        variants: &[String],
        languages: &[String],
        source: &str,
    ) -> Self {
        let mut columns = languages.to_vec();
        columns.push(AVG_Z.to_string());
        let rows = variants
            .iter()
            .map(|variant| {
                let means: Vec<Option<f64>> = languages
                    .iter()
                    .map(|lang| {
                        let values: Vec<f64> = reports
                            .iter()
                            .filter(|r| r.task == task && &r.variant == variant && &r.language == lang)
                            .map(|r| r.value)
                            .collect();
                        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
                    })
                    .collect();
                let zero_shot: Vec<Option<f64>> = languages
                    .iter()
                    .zip(&means)
                    .filter(|(l, _)| l.as_str() != source)
                    .map(|(_, m)| *m)
                    .collect();
                let avg = if zero_shot.is_empty() || zero_shot.iter().any(Option::is_none) {
                    None
                } else {
                    Some(zero_shot.iter().flatten().sum::<f64>() / zero_shot.len() as f64)
                };
                let mut cells = means;
                cells.push(avg);
                (variant.clone(), cells)
            })
            .collect();
        ResultsTable { task, columns, rows }
    }

    pub fn value(&self, variant: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(v, _)| v == variant)?.1[c]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{}\n", self.columns.join(","));
        for (variant, cells) in &self.rows {
            let cells: Vec<String> = cells.iter().map(|c| cell(*c)).collect();
            let _ = writeln!(out, "{variant},{}", cells.join(","));
        }
        out
    }

    /// Parses [`Self::to_csv`] output; cell values come back divided by 100.
    pub fn from_csv(task: TaskKind, text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: "<csv>".into(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty table"))?;
        let mut head = header.split(',');
        if head.next() != Some("variant") {
            return Err(err(1, "first column must be `variant`"));
        }
        let columns: Vec<String> = head.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let variant = fields.next().unwrap_or_default().to_string();
            let cells = fields
                .map(|f| match f {
                    "-" => Ok(None),
                    v => v
                        .parse::<f64>()
                        .map(|v| Some(v / 100.0))
                        .map_err(|_| err(i + 2, "bad cell value")),
                })
                .collect::<Result<Vec<_>>>()?;
            if cells.len() != columns.len() {
                return Err(err(i + 2, "wrong number of cells"));
            }
            rows.push((variant, cells));
        }
        Ok(ResultsTable { task, columns, rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "### {} ({}, ×100, mean over seeds)\n\n| variant | {} |\n|---|{}\n",
            self.task,
            self.task.metric_name(),
            self.columns.join(" | "),
            "---:|".repeat(self.columns.len())
        );
        for (variant, cells) in &self.rows {
            let cells: Vec<String> = cells.iter().map(|c| cell(*c)).collect();
            let _ = writeln!(out, "| {variant} | {} |", cells.join(" | "));
        }
        out
    }

    /// Writes `results.<task>.csv` and `results.<task>.md` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("results.{}.csv", self.task)), self.to_csv())?;
        std::fs::write(dir.join(format!("results.{}.md", self.task)), self.to_markdown())?;
        Ok(())
    }
}
