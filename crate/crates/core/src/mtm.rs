//! Sliding-window multitaper spectrogram with χ² confidence bands.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::gamma_lr;

use crate::error::{invalid, Error, Result};
use crate::spectrogram::{Method, Spectrogram};
use crate::tapers::{eigen_coefficients, FrequencyGrid, TaperSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtConfig {
    pub w: usize,
    pub b: f64,
    pub k: usize,
    pub j: usize,
    /// Fraction of each window shared with the next, in [0, 1).
    pub overlap: f64,
    pub ci_level: f64,
    /// Subtract each window's mean before tapering.
    pub demean: bool,
}

impl MtConfig {
    pub fn new(w: usize, tb: f64, k: usize, overlap: f64) -> Self {
        Self { w, b: tb / w as f64, k, j: w, overlap, ci_level: 0.95, demean: false }
    }

    pub fn hop(&self) -> usize {
        (self.w as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let kmax = TaperSet::max_tapers(self.w, self.b);
        if self.k == 0 || self.k > kmax {
            return Err(invalid(format!("taper count {} outside 1..={kmax}", self.k)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(invalid(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        if self.hop() == 0 {
            return Err(invalid("overlap leaves a hop of zero samples"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(invalid("ci_level must lie in (0, 1)"));
        }
        if self.j == 0 {
            return Err(invalid("grid needs at least one bin"));
        }
        Ok(())
    }
}

/// Inverse CDF of the χ² distribution with `dof` degrees of freedom.
///
/// Wilson–Hilferty start followed by safeguarded Newton steps on the
/// regularized incomplete gamma function.
pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability must lie in (0, 1), got {p}")));
    }
    if !(dof >= 1.0) {
        return Err(invalid(format!("degrees of freedom must be at least 1, got {dof}")));
    }
    let a = 0.5 * dof;
    let cdf = |x: f64| gamma_lr(a, 0.5 * x);
    let zp = statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p);
    let h = 2.0 / (9.0 * dof);
    let mut x = (dof * (1.0 - h + zp * h.sqrt()).powi(3)).max(1e-300);
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let density = ChiSquared::new(dof).expect("positive dof");
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() < 1e-12 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = statrs::distribution::Continuous::pdf(&density, x);
        let newton = x - f / d;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * x.max(1.0)
        };
    }
    let resid = (cdf(x) - p).abs();
    if resid < 1e-10 {
        Ok(x)
    } else {
        Err(Error::NonConvergence { iterations: 200, residual: resid })
    }
}

/// Start indices of overlapping windows.
pub fn window_starts(t: usize, w: usize, hop: usize) -> Vec<usize> {
    if t < w {
        return Vec::new();
    }
    (0..=(t - w) / hop).map(|i| i * hop).collect()
}

/// Multitaper spectrogram `Ŝ = (1/K) Σ_k |x̂⁽ᵏ⁾|²` over sliding windows.
pub fn mt_spectrogram(data: &[f64], sample_rate: f64, cfg: &MtConfig, taps: &TaperSet) -> Result<Spectrogram> {
    cfg.validate()?;
    if taps.w != cfg.w || taps.k != cfg.k {
        return Err(invalid("taper set does not match the configuration"));
    }
    if data.len() < cfg.w {
        return Err(invalid(format!("record of {} samples is shorter than one window ({})", data.len(), cfg.w)));
    }
    let grid = FrequencyGrid::new(cfg.j, sample_rate)?;
    let starts = window_starts(data.len(), cfg.w, cfg.hop());
    let rows: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let mut win = data[s..s + cfg.w].to_vec();
            if cfg.demean {
                let m = win.iter().sum::<f64>() / win.len() as f64;
                win.iter_mut().for_each(|v| *v -= m);
            }
            let x = eigen_coefficients(taps, &win, &grid)?;
            Ok((0..cfg.j).map(|b| x.column(b).iter().map(|c| c.norm_sqr()).sum::<f64>() / cfg.k as f64).collect())
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let power = DMatrix::from_fn(n, cfg.j, |t, b| rows[t][b]);
    let a = 1.0 - cfg.ci_level;
    let dof = 2.0 * cfg.k as f64;
    let q_hi = chi2_quantile(1.0 - a / 2.0, dof)?;
    let q_lo = chi2_quantile(a / 2.0, dof)?;
    let ci_lo = power.map(|s| dof * s / q_hi);
    let ci_hi = power.map(|s| dof * s / q_lo);
    let times = starts.iter().map(|&s| s as f64 / sample_rate).collect();
    Ok(Spectrogram::new(Method::Mt, power, ci_lo, ci_hi, times, cfg.w as f64 / sample_rate, grid.hz())?
        .with_meta("ci_method", "chi-squared with 2K degrees of freedom")
        .with_meta("overlap", format!("{}", cfg.overlap)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tapers::compute_dpss;

    #[test]
    fn chi2_quantiles() {
        assert!((chi2_quantile(0.5, 2.0).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-10);
        // Bisection on the incomplete gamma CDF gives 12.591587243743973.
        assert!((chi2_quantile(0.95, 6.0).unwrap() - 12.591_587_243_743_973).abs() < 1e-8);
        assert!(chi2_quantile(1e-12, 2.0).unwrap() < 1e-10);
        assert!(chi2_quantile(0.0, 2.0).is_err());
        assert!(chi2_quantile(1.0, 2.0).is_err());
        assert!(chi2_quantile(0.5, 0.5).is_err());
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let w = 64;
        let taps = compute_dpss(w, 3.0 / w as f64, 3).unwrap();
        let cfg = MtConfig::new(w, 3.0, 3, 0.5);
        let data: Vec<f64> = (0..640).map(|t| (2.0 * std::f64::consts::PI * 10.0 * t as f64 / 64.0).cos()).collect();
        let s = mt_spectrogram(&data, 1.0, &cfg, &taps).unwrap();
        for t in 0..s.n_windows() {
            let row = s.power.row(t);
            let argmax = (0..w / 2).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 10);
        }
    }

    #[test]
    fn hop_and_starts() {
        let cfg = MtConfig::new(300, 3.0, 3, 0.5);
        assert_eq!(cfg.hop(), 150);
        assert_eq!(window_starts(30000, 300, 150).len(), 199);
        assert!(MtConfig::new(300, 3.0, 3, 1.0).validate().is_err());
    }
}
