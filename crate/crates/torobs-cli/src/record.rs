//! Run records and their canonical export. Both file formats render
//! floats with 17 significant digits and sort every key, so reruns with
//! an equal (config, seed) pair produce byte-identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

/// One value in a result table or summary.
#[derive(Clone, Debug)]
pub enum Cell {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Console form; floats stay short here, the files carry full precision.
    pub fn display(&self) -> String {
        match self {
            Cell::Null => "-".into(),
            Cell::Bool(b) => b.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:.6e}"),
            Cell::Text(t) => t.clone(),
        }
    }
}

/// Column-named result rows, the exportable payload of a run.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Everything a run leaves behind. The wall-clock duration is printed to
/// the console only; keeping it out of the canonical files is what makes
/// reruns byte-identical.
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub version: String,
    pub duration_seconds: f64,
    pub table: Table,
    pub summary: BTreeMap<&'static str, Cell>,
    pub diagnostics: Vec<String>,
}

/// 17 significant digits; round-trips every f64 exactly.
fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // non-finite values have no JSON number form; surface them
        // verbatim so a bad run is visible in its record
        format!("{x}")
    }
}

fn json_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn json_cell(cell: &Cell, out: &mut String) {
    match cell {
        Cell::Null => out.push_str("null"),
        Cell::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Cell::Int(i) => out.push_str(&i.to_string()),
        Cell::Float(x) if x.is_finite() => out.push_str(&fmt_float(*x)),
        Cell::Float(x) => json_string(&fmt_float(*x), out),
        Cell::Text(s) => json_string(s, out),
    }
}

/// Re-renders a parsed JSON value with sorted keys and canonical floats.
/// serde_json's default map is ordered, so objects come out sorted.
fn json_value(v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Null => out.push_str("null"),
        serde_json::Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        serde_json::Value::String(s) => json_string(s, out),
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                json_value(item, out);
            }
            out.push(']');
        }
        serde_json::Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                json_string(k, out);
                out.push(':');
                json_value(item, out);
            }
            out.push('}');
        }
    }
}

impl RunRecord {
    /// The canonical JSON document: one object, keys sorted at every
    /// level, no volatile fields.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push_str("{\"config\":");
        let cfg = serde_json::to_value(&self.config).expect("config serializes");
        json_value(&cfg, &mut out);
        out.push_str(",\"diagnostics\":[");
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            json_string(d, &mut out);
        }
        out.push_str("],\"summary\":{");
        for (i, (k, cell)) in self.summary.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            json_string(k, &mut out);
            out.push(':');
            json_cell(cell, &mut out);
        }
        out.push_str("},\"table\":{\"columns\":[");
        for (i, c) in self.table.columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            json_string(c, &mut out);
        }
        out.push_str("],\"rows\":[");
        for (i, row) in self.table.rows.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for (j, cell) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                json_cell(cell, &mut out);
            }
            out.push(']');
        }
        out.push_str("]},\"version\":");
        json_string(&self.version, &mut out);
        out.push('}');
        out.push('\n');
        out
    }

    /// RFC-4180 CSV of the result table: UTF-8, CRLF, header row.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(&self.table.columns)
            .expect("in-memory write");
        for row in &self.table.rows {
            let rendered: Vec<String> = row
                .iter()
                .map(|cell| match cell {
                    Cell::Null => String::new(),
                    Cell::Bool(b) => b.to_string(),
                    Cell::Int(i) => i.to_string(),
                    Cell::Float(x) => fmt_float(*x),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            w.write_record(&rendered).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Writes <stem>.json and <stem>.csv, creating parent directories.
    pub fn export(&self, stem: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        if let Some(parent) = stem.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json_path = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        std::fs::File::create(&json_path)?.write_all(self.to_json().as_bytes())?;
        std::fs::File::create(&csv_path)?.write_all(&self.to_csv())?;
        Ok((json_path, csv_path))
    }
}
