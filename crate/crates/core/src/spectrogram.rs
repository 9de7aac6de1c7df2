use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};

/// Estimator that produced a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dbmt,
    LogDbmt,
    Mt,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dbmt => "dbmt",
            Self::LogDbmt => "logdbmt",
            Self::Mt => "mt",
        }
    }
}

/// N×J power matrix with per-cell confidence bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub method: Method,
    pub power: DMatrix<f64>,
    pub ci_lo: DMatrix<f64>,
    pub ci_hi: DMatrix<f64>,
    /// Window start times in seconds.
    pub times: Vec<f64>,
    /// Window length in seconds, used for centre-time alignment.
    pub window_sec: f64,
    /// Bin frequencies in Hz.
    pub freqs: Vec<f64>,
    /// Free-form description of the estimator settings.
    pub meta: BTreeMap<String, String>,
}

impl Spectrogram {
    pub fn new(
        method: Method,
        power: DMatrix<f64>,
        ci_lo: DMatrix<f64>,
        ci_hi: DMatrix<f64>,
        times: Vec<f64>,
        window_sec: f64,
        freqs: Vec<f64>,
    ) -> Result<Self> {
        let shape = power.shape();
        if ci_lo.shape() != shape || ci_hi.shape() != shape {
            return Err(mismatch("confidence bands differ in shape from the power matrix"));
        }
        if times.len() != shape.0 || freqs.len() != shape.1 {
            return Err(mismatch(format!(
                "{} times and {} frequencies for a {}x{} spectrogram",
                times.len(),
                freqs.len(),
                shape.0,
                shape.1
            )));
        }
        Ok(Self { method, power, ci_lo, ci_hi, times, window_sec, freqs, meta: BTreeMap::new() })
    }

    pub fn n_windows(&self) -> usize {
        self.power.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.power.ncols()
    }

    pub fn centre_times(&self) -> Vec<f64> {
        self.times.iter().map(|t| t + 0.5 * self.window_sec).collect()
    }

    /// Row whose window centre is closest to `t`.
    pub fn nearest_row(&self, t: f64) -> usize {
        let centres = self.centre_times();
        let mut best = 0;
        for (i, c) in centres.iter().enumerate() {
            if (c - t).abs() < (centres[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }
}
