//! CSV ingestion and artifact serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dbmt_core::nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Relative jitter tolerated in the sample spacing.
pub const JITTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub sample_rate: f64,
}

/// Parse a `t,y` CSV with a header line and uniform sampling.
pub fn parse_series(text: &str) -> Result<Series, CliError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| CliError::Input("input is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    if cols != ["t", "y"] {
        return Err(CliError::Input(format!("line 1: expected header `t,y`, found `{}`", header.trim())));
    }
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if fields.len() != 2 {
            return Err(CliError::Input(format!("line {lineno}: expected 2 fields, found {}", fields.len())));
        }
        let parse = |s: &str, name: &str| -> Result<f64, CliError> {
            let v: f64 = s.parse().map_err(|_| CliError::Input(format!("line {lineno}: cannot parse {name} value `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Input(format!("line {lineno}: {name} value `{s}` is not finite")))
            }
        };
        t.push(parse(fields[0], "t")?);
        y.push(parse(fields[1], "y")?);
    }
    if t.len() < 2 {
        return Err(CliError::Input("need at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(CliError::Input("time stamps must increase".into()));
    }
    for (i, w) in t.windows(2).enumerate() {
        let d = w[1] - w[0];
        if ((d - dt) / dt).abs() > JITTER_TOL {
            return Err(CliError::Input(format!(
                "line {}: non-uniform sampling (step {d} vs mean step {dt})",
                i + 3
            )));
        }
    }
    Ok(Series { t, y, sample_rate: 1.0 / dt })
}

/// 17 significant digits, enough for an exact round trip.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_num(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn column_csv(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x) + "\n").collect()
}

pub fn series_csv(t: &[f64], y: &[f64]) -> String {
    let mut out = String::from("t,y\n");
    for (a, b) in t.iter().zip(y) {
        out.push_str(&format!("{},{}\n", fmt_num(*a), fmt_num(*b)));
    }
    out
}

/// Two-column tidy CSV with a header.
pub fn tidy_csv(header: (&str, &str), rows: &[(f64, f64)]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (p, v) in rows {
        out.push_str(&format!("{},{}\n", fmt_num(*p), fmt_num(*v)));
    }
    out
}

#[cfg(test)]
/// Parse a headerless numeric matrix as written by [`matrix_csv`].
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| CliError::Input(format!("line {}: bad number `{f}`", i + 1))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files rendered in memory, written only once the whole run has succeeded.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.insert(name.to_string(), contents);
    }

    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v.as_bytes()))).collect()
    }

    /// Write every file through a temporary name and rename into place.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let mut staged = Vec::new();
        for (name, contents) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, contents) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(CliError::Io(format!("{}: {e}", tmp.display())));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::new();
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).map_err(|e| CliError::Io(format!("{}: {e}", dest.display())))?;
            written.push(dest);
        }
        Ok(written)
    }
}
