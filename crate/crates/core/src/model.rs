//! Shared data model: KPI metadata, labeled segments and the sampled KPI matrix.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a column is a monitored KPI or an injected chaos knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KpiKind {
    Kpi,
    ChaosVariable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiMeta {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub kind: KpiKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl KpiMeta {
    pub fn kpi(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            unit: String::new(),
            kind: KpiKind::Kpi,
            description: None,
        }
    }

    pub fn chaos(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            unit: String::new(),
            kind: KpiKind::ChaosVariable,
            description: None,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn is_chaos(&self) -> bool {
        self.kind == KpiKind::ChaosVariable
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentKind {
    Baseline,
    Chaos { variable: String, level: usize },
    Anomaly { kind: String },
}

/// A labeled half-open row range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentRecord", into = "SegmentRecord")]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn baseline(start: usize, end: usize) -> Self {
        Self {
            kind: SegmentKind::Baseline,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn is_baseline(&self) -> bool {
        self.kind == SegmentKind::Baseline
    }
}

/// Flat wire form used by the `.segments.json` sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentRecord {
    kind: String,
    variable: Option<String>,
    level: Option<usize>,
    anomaly_kind: Option<String>,
    start: usize,
    end: usize,
}

impl TryFrom<SegmentRecord> for Segment {
    type Error = String;

    fn try_from(r: SegmentRecord) -> std::result::Result<Self, String> {
        let kind = match r.kind.as_str() {
            "baseline" => SegmentKind::Baseline,
            "chaos" => SegmentKind::Chaos {
                variable: r.variable.ok_or("chaos segment without `variable`")?,
                level: r.level.ok_or("chaos segment without `level`")?,
            },
            "anomaly" => SegmentKind::Anomaly {
                kind: r.anomaly_kind.ok_or("anomaly segment without `anomaly_kind`")?,
            },
            other => return Err(format!("unknown segment kind `{other}`")),
        };
        Ok(Segment {
            kind,
            start: r.start,
            end: r.end,
        })
    }
}

impl From<Segment> for SegmentRecord {
    fn from(s: Segment) -> Self {
        let (kind, variable, level, anomaly_kind) = match s.kind {
            SegmentKind::Baseline => ("baseline", None, None, None),
            SegmentKind::Chaos { variable, level } => ("chaos", Some(variable), Some(level), None),
            SegmentKind::Anomaly { kind } => ("anomaly", None, None, Some(kind)),
        };
        SegmentRecord {
            kind: kind.to_string(),
            variable,
            level,
            anomaly_kind,
            start: s.start,
            end: s.end,
        }
    }
}

/// Uniformly sampled KPI matrix (row-major) with column metadata and segment labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<KpiMeta>,
    values: Vec<f64>,
    n_rows: usize,
    segments: Vec<Segment>,
    sample_period_s: f64,
}

impl Dataset {
    /// Builds a dataset from a row-major value buffer.
    pub fn from_row_major(columns: Vec<KpiMeta>, values: Vec<f64>) -> Result<Self> {
        let width = columns.len();
        if width == 0 {
            return Err(Error::InvalidDataset("no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::SchemaError(format!("duplicate column `{}`", c.name)));
            }
        }
        if !values.len().is_multiple_of(width) {
            return Err(Error::InvalidDataset(format!(
                "{} values do not fill rows of width {width}",
                values.len()
            )));
        }
        let n_rows = values.len() / width;
        if n_rows == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column `{}`",
                pos / width,
                columns[pos % width].name
            )));
        }
        Ok(Self {
            columns,
            values,
            n_rows,
            segments: Vec::new(),
            sample_period_s: 1.0,
        })
    }

    pub fn from_rows(columns: Vec<KpiMeta>, rows: &[Vec<f64>]) -> Result<Self> {
        let width = columns.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} entries, expected {width}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_row_major(columns, values)
    }

    /// Builds a dataset from equally long columns.
    pub fn from_columns(columns: Vec<KpiMeta>, data: &[Vec<f64>]) -> Result<Self> {
        if data.len() != columns.len() {
            return Err(Error::InvalidDataset(format!(
                "{} data columns for {} headers",
                data.len(),
                columns.len()
            )));
        }
        let n = data.first().map_or(0, Vec::len);
        if data.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidDataset("columns have unequal lengths".into()));
        }
        let mut values = Vec::with_capacity(n * data.len());
        for r in 0..n {
            values.extend(data.iter().map(|c| c[r]));
        }
        Self::from_row_major(columns, values)
    }

    pub fn with_segments(mut self, mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by_key(|s| (s.start, s.end));
        for s in &segments {
            if s.start >= s.end || s.end > self.n_rows {
                return Err(Error::InvalidDataset(format!(
                    "segment [{}, {}) outside 0..{}",
                    s.start, s.end, self.n_rows
                )));
            }
        }
        for pair in segments.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::InvalidDataset(format!(
                    "segments [{}, {}) and [{}, {}) overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        self.segments = segments;
        Ok(self)
    }

    pub fn with_sample_period(mut self, period_s: f64) -> Result<Self> {
        if !(period_s.is_finite() && period_s > 0.0) {
            return Err(Error::InvalidDataset(format!("bad sample period {period_s}")));
        }
        self.sample_period_s = period_s;
        Ok(self)
    }

    pub fn columns(&self) -> &[KpiMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn sample_period_s(&self) -> f64 {
        self.sample_period_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn meta(&self, name: &str) -> Result<&KpiMeta> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column_at(&self, col: usize) -> Vec<f64> {
        let w = self.columns.len();
        self.values.iter().skip(col).step_by(w).copied().collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column_at(self.column_index(name)?))
    }

    /// Values of `name` restricted to the given rows.
    pub fn column_rows(&self, name: &str, rows: &[usize]) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        Ok(rows.iter().map(|&r| self.value(r, c)).collect())
    }

    pub fn chaos_variables(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.is_chaos())
            .map(|c| c.name.clone())
            .collect()
    }

    /// Rows covered by baseline segments; every row when no baseline segment is labeled.
    pub fn baseline_rows(&self) -> Vec<usize> {
        let rows: Vec<usize> = self
            .segments
            .iter()
            .filter(|s| s.is_baseline())
            .flat_map(|s| s.start..s.end)
            .collect();
        if rows.is_empty() {
            (0..self.n_rows).collect()
        } else {
            rows
        }
    }

    /// Per-column mean over rows `[start, end)`.
    pub fn window_mean(&self, start: usize, end: usize) -> Result<BTreeMap<String, f64>> {
        if start >= end || end > self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "window {start}:{end} outside 0..{}",
                self.n_rows
            )));
        }
        let n = (end - start) as f64;
        let mut sums = vec![0.0; self.columns.len()];
        for r in start..end {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        Ok(self
            .columns
            .iter()
            .zip(sums)
            .map(|(c, s)| (c.name.clone(), s / n))
            .collect())
    }

    /// Projects onto the named columns, keeping segments.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        let columns = idx.iter().map(|&i| self.columns[i].clone()).collect();
        let mut values = Vec::with_capacity(self.n_rows * idx.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            values.extend(idx.iter().map(|&i| row[i]));
        }
        let mut out = Dataset::from_row_major(columns, values)?;
        out.segments = self.segments.clone();
        out.sample_period_s = self.sample_period_s;
        Ok(out)
    }

    /// Keeps only the given rows; segment labels are dropped.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let mut values = Vec::with_capacity(rows.len() * self.columns.len());
        for &r in rows {
            if r >= self.n_rows {
                return Err(Error::InvalidArgument(format!("row {r} out of range")));
            }
            values.extend_from_slice(self.row(r));
        }
        let mut out = Dataset::from_row_major(self.columns.clone(), values)?;
        out.sample_period_s = self.sample_period_s;
        Ok(out)
    }

    /// Returns a copy with column `name` mapped through `f`.
    pub fn map_column(&self, name: &str, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        let c = self.column_index(name)?;
        let w = self.columns.len();
        let mut out = self.clone();
        for r in 0..self.n_rows {
            out.values[r * w + c] = f(out.values[r * w + c]);
        }
        if let Some(pos) = out.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite value at row {}", pos / w)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::from_rows(
            vec![KpiMeta::kpi("a"), KpiMeta::chaos("chaos_x")],
            &[vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_columns() {
        let err = Dataset::from_rows(vec![KpiMeta::kpi("a"), KpiMeta::kpi("a")], &[vec![1.0, 2.0]]);
        assert!(matches!(err, Err(Error::SchemaError(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let err = Dataset::from_rows(vec![KpiMeta::kpi("a")], &[vec![f64::NAN]]);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn rejects_overlapping_segments() {
        let d = tiny();
        let err = d.with_segments(vec![Segment::baseline(0, 2), Segment::baseline(1, 3)]);
        assert!(err.is_err());
        let err = tiny().with_segments(vec![Segment::baseline(0, 4)]);
        assert!(err.is_err());
    }

    #[test]
    fn baseline_rows_fall_back_to_all() {
        let d = tiny();
        assert_eq!(d.baseline_rows(), vec![0, 1, 2]);
        let d = d
            .with_segments(vec![
                Segment::baseline(0, 1),
                Segment {
                    kind: SegmentKind::Chaos {
                        variable: "chaos_x".into(),
                        level: 0,
                    },
                    start: 1,
                    end: 2,
                },
                Segment::baseline(2, 3),
            ])
            .unwrap();
        assert_eq!(d.baseline_rows(), vec![0, 2]);
    }

    #[test]
    fn window_mean_and_columns() {
        let d = tiny();
        let m = d.window_mean(0, 3).unwrap();
        assert_eq!(m["a"], 2.0);
        assert_eq!(d.column("chaos_x").unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(d.chaos_variables(), vec!["chaos_x".to_string()]);
        assert!(d.window_mean(2, 2).is_err());
    }

    #[test]
    fn segment_wire_format() {
        let s = Segment {
            kind: SegmentKind::Chaos {
                variable: "chaos_cpu_stress".into(),
                level: 2,
            },
            start: 5,
            end: 9,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"chaos","variable":"chaos_cpu_stress","level":2,"anomaly_kind":null,"start":5,"end":9}"#
        );
        let back: Segment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad: std::result::Result<Segment, _> =
            serde_json::from_str(r#"{"kind":"chaos","variable":null,"level":1,"anomaly_kind":null,"start":0,"end":1}"#);
        assert!(bad.is_err());
    }
}
