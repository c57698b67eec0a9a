//! Dataset CSV I/O with `.segments.json` / `.columns.json` sidecars, and graph files.
//!
//! The CSV header is `timestamp,<col1>,<col2>,...`; each row starts with the
//! sample offset in seconds. Values are written with Rust's shortest
//! round-trip float formatting, so a save/load cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::model::{Dataset, KpiMeta, Segment};

/// Column names with this prefix are read as chaos variables when no column sidecar exists.
pub const CHAOS_PREFIX: &str = "chaos_";

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

pub fn segments_path(csv_path: &Path) -> PathBuf {
    sidecar(csv_path, "segments")
}

pub fn columns_path(csv_path: &Path) -> PathBuf {
    sidecar(csv_path, "columns")
}

fn format_timestamp(row: usize, period: f64) -> String {
    let t = row as f64 * period;
    if t.fract() == 0.0 && t.abs() < 9.0e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Serializes the value matrix as CSV text.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(dataset.values().len() * 10);
    out.push_str("timestamp");
    for c in dataset.columns() {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for r in 0..dataset.n_rows() {
        out.push_str(&format_timestamp(r, dataset.sample_period_s()));
        for v in dataset.row(r) {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parses CSV text. Column kinds follow the `chaos_` naming convention unless
/// `meta` supplies them.
pub fn dataset_from_csv(text: &str, meta: Option<Vec<KpiMeta>>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::SchemaError(e.to_string()))?
        .clone();
    if headers.get(0).map(str::trim) != Some("timestamp") {
        return Err(Error::SchemaError("first header must be `timestamp`".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::SchemaError("no value columns".into()));
    }
    if let Some(blank) = names.iter().position(String::is_empty) {
        return Err(Error::SchemaError(format!("header {} is empty", blank + 2)));
    }
    let columns = match meta {
        Some(meta) => {
            let meta_names: Vec<&str> = meta.iter().map(|m| m.name.as_str()).collect();
            if meta_names != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::SchemaError(
                    "column sidecar does not match CSV header".into(),
                ));
            }
            meta
        }
        None => names
            .iter()
            .map(|n| {
                if n.starts_with(CHAOS_PREFIX) {
                    KpiMeta::chaos(n.clone())
                } else {
                    KpiMeta::kpi(n.clone())
                }
            })
            .collect(),
    };
    let width = names.len();
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 1 {
            return Err(Error::ParseError {
                line,
                column: record.len().min(width + 1),
                message: format!("expected {} fields, found {}", width + 1, record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::ParseError {
                line,
                column: i + 1,
                message: if field.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("`{field}` is not a number")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::ParseError {
                    line,
                    column: i + 1,
                    message: format!("non-finite value `{field}`"),
                });
            }
            if i == 0 {
                stamps.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let period = if stamps.len() >= 2 { stamps[1] - stamps[0] } else { 1.0 };
    if !(period > 0.0) {
        return Err(Error::SchemaError("timestamps must increase".into()));
    }
    for (i, t) in stamps.iter().enumerate() {
        let expected = stamps[0] + i as f64 * period;
        if (t - expected).abs() > 1e-6 * period.max(1.0) {
            return Err(Error::SchemaError(format!(
                "irregular sampling at row {i}: timestamp {t}, expected {expected}"
            )));
        }
    }
    Dataset::from_row_major(columns, values)?.with_sample_period(period)
}

/// Writes the CSV plus its segments and columns sidecars.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(dataset))?;
    fs::write(
        segments_path(path),
        serde_json::to_string_pretty(dataset.segments())?,
    )?;
    fs::write(
        columns_path(path),
        serde_json::to_string_pretty(dataset.columns())?,
    )?;
    Ok(())
}

/// Loads a CSV and any sidecars found next to it.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let cols = columns_path(path);
    let meta = if cols.exists() {
        Some(serde_json::from_str::<Vec<KpiMeta>>(&fs::read_to_string(cols)?)?)
    } else {
        None
    };
    let dataset = dataset_from_csv(&text, meta)?;
    let segs = segments_path(path);
    if segs.exists() {
        let segments: Vec<Segment> = serde_json::from_str(&fs::read_to_string(segs)?)?;
        dataset.with_segments(segments)
    } else {
        Ok(dataset)
    }
}

/// Writes `graph.json` and a sibling `.dot` file.
pub fn save_graph(graph: &CausalGraph, path: &Path) -> Result<()> {
    fs::write(path, graph.to_json())?;
    fs::write(path.with_extension("dot"), graph.to_dot())?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<CausalGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
