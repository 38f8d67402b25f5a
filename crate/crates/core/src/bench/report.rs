//! Tabular output of cost reports and measurements. Both formats render
//! every value through the same formatter, so they agree digit for digit.

use std::path::Path;

use super::{CostReport, Regime, Throughput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

pub const COLUMNS: [&str; 13] = [
    "label",
    "regime",
    "resolution",
    "encoder_blocks",
    "patch_tokens",
    "encoder_tokens",
    "decoder_tokens",
    "attention_flops",
    "mlp_flops",
    "total_flops",
    "activation_elements",
    "step_ms",
    "imgs_per_sec",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub regime: Regime,
    pub resolution: usize,
    pub encoder_blocks: usize,
    /// First-stage patch tokens of the full input.
    pub patch_tokens: usize,
    /// Tokens entering the first encoder block.
    pub encoder_tokens: usize,
    pub decoder_tokens: usize,
    pub attention_flops: f64,
    pub mlp_flops: f64,
    pub total_flops: f64,
    pub activation_elements: f64,
    /// Measured columns; empty for analytic rows.
    pub step_ms: Option<f64>,
    pub imgs_per_sec: Option<f64>,
}

impl ReportRow {
    pub fn from_cost(label: impl Into<String>, c: &CostReport) -> Self {
        ReportRow {
            label: label.into(),
            regime: c.regime,
            resolution: c.resolution,
            encoder_blocks: c.encoder_blocks,
            patch_tokens: c.token_counts[0],
            encoder_tokens: c.encoder_tokens,
            decoder_tokens: c.decoder_tokens,
            attention_flops: c.attention_flops,
            mlp_flops: c.mlp_flops,
            total_flops: c.total_flops,
            activation_elements: c.activation_elements,
            step_ms: None,
            imgs_per_sec: None,
        }
    }

    pub fn from_measurement(label: impl Into<String>, t: &Throughput) -> Self {
        ReportRow {
            step_ms: Some(t.step_ms),
            imgs_per_sec: Some(t.imgs_per_sec),
            ..ReportRow::from_cost(label, &t.cost)
        }
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.label.clone(),
            self.regime.to_string(),
            self.resolution.to_string(),
            self.encoder_blocks.to_string(),
            self.patch_tokens.to_string(),
            self.encoder_tokens.to_string(),
            self.decoder_tokens.to_string(),
            self.attention_flops.to_string(),
            self.mlp_flops.to_string(),
            self.total_flops.to_string(),
            self.activation_elements.to_string(),
            opt(self.step_ms),
            opt(self.imgs_per_sec),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        if cells.len() != COLUMNS.len() {
            return Err(bad(format!("{} fields, expected {}", cells.len(), COLUMNS.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, col: &str) -> Result<T> {
            s.parse().map_err(|_| bad(format!("column {col}: {s:?}")))
        }
        let opt = |s: &str, col: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, col).map(Some)
            }
        };
        Ok(ReportRow {
            label: cells[0].to_string(),
            regime: cells[1].parse()?,
            resolution: num(cells[2], COLUMNS[2])?,
            encoder_blocks: num(cells[3], COLUMNS[3])?,
            patch_tokens: num(cells[4], COLUMNS[4])?,
            encoder_tokens: num(cells[5], COLUMNS[5])?,
            decoder_tokens: num(cells[6], COLUMNS[6])?,
            attention_flops: num(cells[7], COLUMNS[7])?,
            mlp_flops: num(cells[8], COLUMNS[8])?,
            total_flops: num(cells[9], COLUMNS[9])?,
            activation_elements: num(cells[10], COLUMNS[10])?,
            step_ms: opt(cells[11], COLUMNS[11])?,
            imgs_per_sec: opt(cells[12], COLUMNS[12])?,
        })
    }
}

fn bad(reason: String) -> Error {
    Error::Format { what: "report", reason }
}

/// Renders rows as CSV (header always present) or as an aligned text table.
pub fn report_emit(rows: &[ReportRow], format: ReportFormat) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(ReportRow::cells).collect();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS).expect("in-memory write");
            for c in &cells {
                w.write_record(c).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Text => {
            let widths: Vec<usize> = (0..COLUMNS.len())
                .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
                .collect();
            let line = |values: Vec<&str>| {
                let parts: Vec<String> = values.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
                parts.join("  ").trim_end().to_string() + "\n"
            };
            let mut out = line(COLUMNS.to_vec());
            for c in &cells {
                out += &line(c.iter().map(String::as_str).collect());
            }
            out
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow], format: ReportFormat) -> Result<()> {
    std::fs::write(path, report_emit(rows, format))?;
    Ok(())
}

/// Reads CSV written by [`report_emit`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(COLUMNS) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            ReportRow::from_cells(&rec.iter().collect::<Vec<_>>())
        })
        .collect()
}
