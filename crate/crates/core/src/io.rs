//! Delimited matrix files, parameter directories and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GbmError, Result};
use crate::model::{Dims, GbmParams};

/// A numeric matrix with optional column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(data: DMatrix<f64>) -> Self {
        Self { header: None, data }
    }

    pub fn with_header(data: DMatrix<f64>, header: Vec<String>) -> Self {
        Self { header: Some(header), data }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> GbmError {
    GbmError::Io { path: path.display().to_string(), source }
}

/// Tab if the first nonblank line contains one, comma otherwise.
pub fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_table(&text, &path.display().to_string())
}

/// Parses delimited text. The first record is a header when any of its
/// fields is not a number. Errors carry 1-based line and column.
pub fn parse_table(text: &str, label: &str) -> Result<Table> {
    let parse_err = |line: usize, column: usize, message: String| GbmError::Parse {
        path: label.to_string(),
        line,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| parse_err(line, col + 1, format!("'{field}' is not a number")))?;
            values.push(v);
        }
        rows += 1;
    }
    let width = width.or_else(|| (rows > 0).then(|| values.len() / rows)).unwrap_or(0);
    if rows == 0 || width == 0 {
        return Err(parse_err(1, 1, "no numeric rows".into()));
    }
    Ok(Table { header, data: DMatrix::from_row_slice(rows, width, &values) })
}

/// Shortest decimal form that parses back to the same f64.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

/// Writes comma-separated rows with an optional header.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    fs::write(path, render_table(table)).map_err(|e| io_err(path, e))
}

pub fn render_table(table: &Table) -> String {
    let mut out = String::new();
    if let Some(h) = &table.header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in table.data.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| format_real(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, header: Option<Vec<String>>) -> Result<()> {
    write_table(path, &Table { header, data: m.clone() })
}

/// Writes integer counts without a decimal point.
pub fn write_counts(path: &Path, counts: &DMatrix<u64>) -> Result<()> {
    let mut out = String::new();
    for row in counts.row_iter() {
        let fields: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Column names `prefix1`, `prefix2`, …
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Scalars and shape of a parameter directory, stored as `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSummary {
    pub dims: Dims,
    pub omega: f64,
    pub d: Vec<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

pub const PARAMS_FILE: &str = "params.json";

/// Writes each block to `<dir>/<block>.csv` and the scalars to
/// `params.json`. Latent blocks are skipped when M = 0.
pub fn write_params(dir: &Path, p: &GbmParams, x_names: &[String], z_names: &[String]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let dims = p.dims();
    if x_names.len() != dims.k || z_names.len() != dims.l {
        return Err(GbmError::Shape("covariate names do not match K and L".into()));
    }
    let factors = numbered("factor", dims.m);
    let column = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let mut blocks: Vec<(&str, DMatrix<f64>, Vec<String>)> = vec![
        ("A", p.a.clone(), x_names.to_vec()),
        ("B", p.b.clone(), z_names.to_vec()),
        ("C", p.c.clone(), z_names.to_vec()),
        ("S", column(&p.s), vec!["s".into()]),
        ("T", column(&p.t), vec!["t".into()]),
    ];
    if dims.m > 0 {
        blocks.push(("D", column(&p.d), vec!["d".into()]));
        blocks.push(("U", p.u.clone(), factors.clone()));
        blocks.push(("V", p.v.clone(), factors));
    }
    let mut written = Vec::new();
    for (name, m, header) in blocks {
        let path = dir.join(format!("{name}.csv"));
        write_matrix(&path, &m, Some(header))?;
        written.push(path);
    }
    let summary = ParamsSummary {
        dims,
        omega: p.omega,
        d: p.d.iter().copied().collect(),
        x_names: x_names.to_vec(),
        z_names: z_names.to_vec(),
    };
    let path = dir.join(PARAMS_FILE);
    write_json(&path, &summary)?;
    written.push(path);
    Ok(written)
}

/// Reads a directory written by [`write_params`], checking every shape.
pub fn read_params(dir: &Path) -> Result<(GbmParams, ParamsSummary)> {
    let summary: ParamsSummary = read_json(&dir.join(PARAMS_FILE))?;
    let Dims { i, j, k, l, m } = summary.dims;
    let block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        let path = dir.join(format!("{name}.csv"));
        if !path.exists() {
            return Err(GbmError::Input(format!("parameter block {name} is missing: {}", path.display())));
        }
        let t = read_table(&path)?;
        if t.data.shape() != (rows, cols) {
            return Err(GbmError::Shape(format!(
                "{} is {}x{}, expected {rows}x{cols}",
                path.display(),
                t.data.nrows(),
                t.data.ncols()
            )));
        }
        Ok(t.data)
    };
    let vector = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let (d, u, v) = if m > 0 {
        (vector(block("D", m, 1)?), block("U", i, m)?, block("V", j, m)?)
    } else {
        (DVector::zeros(0), DMatrix::zeros(i, 0), DMatrix::zeros(j, 0))
    };
    let params = GbmParams {
        a: block("A", j, k)?,
        b: block("B", i, l)?,
        c: block("C", k, l)?,
        d,
        u,
        v,
        s: vector(block("S", i, 1)?),
        t: vector(block("T", j, 1)?),
        omega: summary.omega,
    };
    Ok((params, summary))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GbmError::Input(format!("cannot serialize: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| GbmError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Content hash of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        Ok(Self { role: role.into(), path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

/// Convergence outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub converged: bool,
    pub iterations: usize,
    pub final_log_posterior: f64,
    pub clamp_events: usize,
    pub warnings: Vec<String>,
}

/// Record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub convergence: Option<ConvergenceSummary>,
    pub started_unix_seconds: u64,
    pub wall_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
