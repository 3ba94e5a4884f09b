use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, MetricReport};

/// A rendered report: ordered column names and string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub const TABLE3_COLUMNS: [&str; 11] = [
    "Model",
    "Encoder",
    "Virtual Token",
    "Trainable Parameters",
    "Rouge-1",
    "Rouge-2",
    "Rouge-L",
    "BLEU",
    "BERTScore",
    "Overall",
    "Status",
];

pub const TABLE4_COLUMNS: [&str; 9] = [
    "Model",
    "Initiate Method",
    "Trainable Parameters",
    "Training Duration",
    "Rouge-1",
    "Rouge-2",
    "Rouge-L",
    "BLEU",
    "BERT Score",
];

pub const TABLE6_COLUMNS: [&str; 7] = ["Model", "Sample", "Rouge-1", "Rouge-2", "Rouge-L", "BERTScore", "BLEU"];

pub fn cell(v: f64) -> String {
    format!("{v:.4}")
}

pub fn optional_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

fn rounded(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Overall cell computed from the printed metric cells, so every row's
/// Overall is the mean of what the row shows.
pub fn overall_cell(r: &MetricReport) -> String {
    cell(aggregate(
        rounded(r.rouge1),
        rounded(r.rouge2),
        rounded(r.rouge_l),
        rounded(r.bleu),
        r.bertscore.map(rounded),
    ))
}

/// `XhYYmZZs`, matching the hours-and-minutes style of published durations.
pub fn format_duration(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{}h{:02}m{:02}s", total / 3600, (total / 60) % 60, total % 60)
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match columns");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { columns, rows })
    }

    /// Array of objects keyed by column name, in column order.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .zip(r)
                    .map(|(c, v)| (c.clone(), serde_json::Value::String(v.clone())))
                    .collect()
            })
            .collect();
        Ok(serde_json::to_string_pretty(&rows)? + "\n")
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.columns);
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, self.to_json()?).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}
