//! Case-count ingestion (`date,cases,deaths` with ISO dates, cumulative
//! counts), daily differences, trailing moving averages, and bit-stable
//! CSV/JSON output of tabular results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the default directory for data files.
pub const DATA_DIR_ENV: &str = "EPIKIT_DATA_DIR";

/// Cumulative case and death counts by date.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseSeries {
    pub dates: Vec<NaiveDate>,
    pub cases: Vec<u64>,
    pub deaths: Vec<u64>,
    /// Non-fatal problems such as decreasing cumulative counts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CaseSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Days since the first date.
    pub fn day_offsets(&self) -> Vec<f64> {
        let Some(first) = self.dates.first() else {
            return vec![];
        };
        self.dates
            .iter()
            .map(|d| (*d - *first).num_days() as f64)
            .collect()
    }
}

/// Resolve `path`, falling back to `$EPIKIT_DATA_DIR/path` for relative
/// paths that do not exist as given.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

pub fn read_case_csv(path: &Path) -> Result<CaseSeries> {
    let path = resolve_data_path(path);
    let text = fs::read_to_string(&path)?;
    parse_case_csv(&text, &path)
}

/// Parse CSV text; `path` is only used in error messages.
pub fn parse_case_csv(text: &str, path: &Path) -> Result<CaseSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let bad = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        reason,
    };
    let headers = rdr.headers()?.clone();
    let want = ["date", "cases", "deaths"];
    if headers.len() < 3 || headers.iter().take(3).zip(want).any(|(h, w)| h != w) {
        return Err(bad(1, format!("expected header date,cases,deaths, got {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut out = CaseSeries::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(bad(line, format!("expected 3 fields, found {}", rec.len())));
        }
        if rec.iter().any(str::is_empty) {
            return Err(bad(line, "missing field".into()));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| bad(line, format!("bad date {:?}: {e}", &rec[0])))?;
        let cases: u64 = rec[1]
            .parse()
            .map_err(|_| bad(line, format!("bad case count {:?}", &rec[1])))?;
        let deaths: u64 = rec[2]
            .parse()
            .map_err(|_| bad(line, format!("bad death count {:?}", &rec[2])))?;
        if let Some(prev) = out.dates.last() {
            if date <= *prev {
                return Err(bad(line, format!("date {date} does not follow {prev}")));
            }
            if cases < *out.cases.last().unwrap() {
                out.warnings.push(format!("line {line}: cumulative cases decrease on {date}"));
            }
            if deaths < *out.deaths.last().unwrap() {
                out.warnings.push(format!("line {line}: cumulative deaths decrease on {date}"));
            }
        }
        out.dates.push(date);
        out.cases.push(cases);
        out.deaths.push(deaths);
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

pub fn write_case_csv(series: &CaseSeries, path: &Path) -> Result<()> {
    let mut s = String::from("date,cases,deaths\n");
    for ((d, c), k) in series.dates.iter().zip(&series.cases).zip(&series.deaths) {
        let _ = writeln!(s, "{},{c},{k}", d.format("%Y-%m-%d"));
    }
    fs::write(path, s)?;
    Ok(())
}

/// First differences of a cumulative series.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Differences {
    pub values: Vec<i64>,
    /// Indices (into `values`) of negative differences.
    pub negative_at: Vec<usize>,
}

pub fn daily_new(cumulative: &[u64]) -> Result<Differences> {
    if cumulative.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: cumulative.len(),
        });
    }
    let values: Vec<i64> = cumulative
        .windows(2)
        .map(|w| w[1] as i64 - w[0] as i64)
        .collect();
    let negative_at = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0)
        .map(|(i, _)| i)
        .collect();
    Ok(Differences { values, negative_at })
}

/// Trailing mean over the last `min(window, i + 1)` points.
pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be >= 1".into()));
    }
    Ok((0..x.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            x[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect())
}

/// A table cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Column-ordered output with optional `key = value` metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: Vec<(String, Cell)>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: vec![],
            meta: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Cell>) -> Self {
        self.meta.push((key.to_string(), value.into()));
        self
    }

    /// Numeric column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[j] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Float with 17 significant digits. Negative zero prints as zero.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        format!("{:.16e}", 0.0)
    } else if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cell_csv(c: &Cell) -> String {
    match c {
        Cell::Num(v) => fmt_f64(*v),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) => csv_field(s),
    }
}

fn cell_json(c: &Cell) -> String {
    match c {
        Cell::Num(v) if v.is_finite() => fmt_f64(*v),
        // JSON has no non-finite numbers.
        Cell::Num(v) => serde_json::to_string(&fmt_f64(*v)).unwrap(),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) => serde_json::to_string(s).unwrap(),
    }
}

/// CSV text: `# key = value` comment lines for metadata, a header, then rows.
pub fn table_to_csv(t: &Table) -> String {
    let mut s = String::new();
    for (k, v) in &t.meta {
        let v = match v {
            Cell::Text(x) => x.clone(),
            other => cell_csv(other),
        };
        let _ = writeln!(s, "# {k} = {v}");
    }
    let header: Vec<String> = t.columns.iter().map(|c| csv_field(c)).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(cell_csv).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// JSON text `{"meta": {...}, "columns": [...], "rows": [[...]]}`.
pub fn table_to_json(t: &Table) -> String {
    let mut s = String::from("{\n  \"meta\": {");
    for (i, (k, v)) in t.meta.iter().enumerate() {
        let sep = if i == 0 { "" } else { "," };
        let _ = write!(s, "{sep}\n    {}: {}", serde_json::to_string(k).unwrap(), cell_json(v));
    }
    if !t.meta.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("},\n  \"columns\": [");
    let cols: Vec<String> = t.columns.iter().map(|c| serde_json::to_string(c).unwrap()).collect();
    s.push_str(&cols.join(", "));
    s.push_str("],\n  \"rows\": [");
    for (i, row) in t.rows.iter().enumerate() {
        let sep = if i == 0 { "" } else { "," };
        let cells: Vec<String> = row.iter().map(cell_json).collect();
        let _ = write!(s, "{sep}\n    [{}]", cells.join(", "));
    }
    if !t.rows.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    s
}

pub fn render(t: &Table, format: Format) -> String {
    match format {
        Format::Csv => table_to_csv(t),
        Format::Json => table_to_json(t),
    }
}

pub fn write_outputs(t: &Table, format: Format, path: &Path) -> Result<()> {
    fs::write(path, render(t, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CaseSeries> {
        parse_case_csv(text, Path::new("mem.csv"))
    }

    #[test]
    fn two_rows() {
        let s = parse("date,cases,deaths\n2020-03-01,30,1\n2020-03-02,53,2\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.cases, vec![30, 53]);
        assert!(s.warnings.is_empty());
        assert_eq!(s.day_offsets(), vec![0.0, 1.0]);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(parse("date,cases,deaths\n"), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn decreasing_row_warns() {
        let s = parse("date,cases,deaths\n2020-03-01,30,1\n2020-03-02,25,2\n").unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].contains("line 3"));
    }

    #[test]
    fn missing_field_reports_line() {
        match parse("date,cases,deaths\n2020-03-01,30,1\n2020-03-02,,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("date,cases,deaths\n2020-03-01,30\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn differences() {
        assert_eq!(daily_new(&[10, 15, 15]).unwrap().values, vec![5, 0]);
        let d = daily_new(&[10, 8, 9]).unwrap();
        assert_eq!(d.values, vec![-2, 1]);
        assert_eq!(d.negative_at, vec![0]);
        assert!(matches!(daily_new(&[3]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn moving_average_impulse() {
        let mut x = vec![0.0; 20];
        x[10] = 7.0;
        let m = moving_average(&x, 7).unwrap();
        for (i, v) in m.iter().enumerate() {
            let want = if (10..17).contains(&i) { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-15, "{i}: {v}");
        }
        assert_eq!(moving_average(&[3.0; 5], 7).unwrap(), vec![3.0; 5]);
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_and_json_render() {
        let t = Table::new(["t", "label"])
            .with_meta("r0", 7.0);
        let mut t = t;
        t.push(vec![1.5.into(), "a,b".into()]);
        let csv = table_to_csv(&t);
        assert_eq!(csv, "# r0 = 7.0000000000000000e0\nt,label\n1.5000000000000000e0,\"a,b\"\n");
        let json: serde_json::Value = serde_json::from_str(&table_to_json(&t)).unwrap();
        assert_eq!(json["rows"][0][1], "a,b");
        assert_eq!(json["meta"]["r0"], 7.0);
    }
}
