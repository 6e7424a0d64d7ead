//! CSV dialect shared by every command: comma separated, header row, LF line
//! endings, floats with 17 significant digits.

use std::path::Path;

use nalgebra::DMatrix;
use noisygp::RawData;

use crate::error::{CliError, CliResult};

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

/// A header and rows of floats, written in one go.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| fmt_float(v))).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_bytes(path, &self.to_bytes())
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn x_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|k| format!("x_{k}")).collect()
    }
}

pub fn raw_table(raw: &RawData) -> Table {
    let d = raw.dim();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
    header.push("y".into());
    let mut t = Table::new(header);
    for i in 0..raw.len() {
        let mut row = raw.row(i);
        row.push(raw.y[i]);
        t.rows.push(row);
    }
    t
}

/// Parsed numeric CSV: header names and rows.
pub struct Parsed {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_numeric(path: &Path) -> CliResult<Parsed> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| data_err(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| data_err(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(data_err("missing header row".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .enumerate()
            .map(|(k, field)| match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(data_err(format!("line {line}, column '{}': '{field}' is not a finite number", header[k]))),
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Parsed { header, rows })
}

/// Reads a dataset with columns `x_1..x_d, y` (a single input column may be named `x`).
pub fn read_raw(path: &Path) -> CliResult<RawData> {
    let parsed = read_numeric(path)?;
    if parsed.header.len() < 2 || parsed.header.last().map(String::as_str) != Some("y") {
        return Err(CliError::Data(format!("{}: expected columns x_1..x_d, y; got {:?}", path.display(), parsed.header)));
    }
    if parsed.rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let d = parsed.header.len() - 1;
    let x = DMatrix::from_fn(parsed.rows.len(), d, |i, k| parsed.rows[i][k]);
    let y = parsed.rows.iter().map(|r| r[d]).collect();
    Ok(RawData::new(x, y)?)
}

/// Reads input points from the leading columns named `x` or `x_k`; other columns are ignored.
pub fn read_inputs(path: &Path) -> CliResult<DMatrix<f64>> {
    let parsed = read_numeric(path)?;
    let d = parsed.header.iter().take_while(|h| *h == "x" || h.starts_with("x_")).count();
    if d == 0 {
        return Err(CliError::Data(format!("{}: no x or x_k columns in {:?}", path.display(), parsed.header)));
    }
    Ok(DMatrix::from_fn(parsed.rows.len(), d, |i, k| parsed.rows[i][k]))
}
