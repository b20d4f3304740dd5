//! Column-oriented text tables of the training curves.
//!
//! Each table has a tab-separated header line naming its columns and one row
//! per metrics record. Missing values are written as `nan`. Numbers use the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;

use super::train::MetricsRecord;
use crate::error::{CsrnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotSeries {
    pub fn to_text(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push('\t');
                }
                if v.is_nan() {
                    out.push_str("nan");
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CsrnError::Parse("empty plot data".into()))?;
        let columns: Vec<String> = header.split('\t').map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row = line
                .split('\t')
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| CsrnError::Parse(format!("row {}: bad number {f:?}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(CsrnError::Parse(format!(
                    "row {} has {} fields, header has {}",
                    n + 1,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(PlotSeries {
            name: name.to_owned(),
            columns,
            rows,
        })
    }
}

/// Error curves (`error`) and goodness/accuracy curves (`score`).
pub fn emit_plot_data(records: &[MetricsRecord]) -> Vec<PlotSeries> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    vec![
        PlotSeries {
            name: "error".into(),
            columns: vec!["cycle".into(), "train_sse".into(), "test_sse".into()],
            rows: records
                .iter()
                .map(|r| vec![r.cycle as f64, r.train_sse, opt(r.test_sse)])
                .collect(),
        },
        PlotSeries {
            name: "score".into(),
            columns: vec![
                "cycle".into(),
                "train_score".into(),
                "test_score".into(),
                "settled_fraction".into(),
            ],
            rows: records
                .iter()
                .map(|r| {
                    vec![
                        r.cycle as f64,
                        r.train_score,
                        opt(r.test_score),
                        r.settled_fraction,
                    ]
                })
                .collect(),
        },
    ]
}
