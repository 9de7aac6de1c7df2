//! Dynamic Bayesian multitaper estimation of eigen-coefficient tracks.
//!
//! Each taper's eigen-coefficients are modelled as `z_n = x_n + v_n` with
//! `x_n = α x_{n-1} + w_n`, `w_n ~ CN(0, diag Q)` and `v_n ~ CN(0, σ² I)`.
//! This is the per-bin form of the windowed model with Fourier observation
//! matrix, written in eigen-coefficient units so that |x|² is on the same
//! scale as a multitaper eigen-spectrum. The initial state `x_0` has a fixed
//! prior `CN(0, Q⁽⁰⁾)` and is smoothed along with the other states.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::lgss::{diag_smoother, SmootherResult};
use crate::spectrogram::{Method, Spectrogram};
use crate::stats::quantile_sorted;
use crate::tapers::{coefficient_track, compute_dpss, FrequencyGrid, TaperSet};

type CVec = DVector<Complex64>;

/// Relative floor applied to Q entries.
pub const Q_FLOOR: f64 = 1e-12;
const Q_ABS_FLOOR: f64 = 1e-300;
/// Upper clamp for α and θ.
pub const ALPHA_CLAMP: f64 = 1.0 - 1e-9;
pub const ALPHA_INIT: f64 = 0.5;

/// Settings for a DBMT fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbmtConfig {
    /// Window length in samples.
    pub w: usize,
    /// Taper half-bandwidth in cycles/sample.
    pub b: f64,
    pub k: usize,
    /// Number of frequency bins.
    pub j: usize,
    /// Measurement-noise variance in eigen-coefficient units.
    pub sigma2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub ci_level: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl DbmtConfig {
    /// Defaults for a window of `w` samples at time-bandwidth product `tb`.
    pub fn new(w: usize, tb: f64, k: usize, sigma2: f64) -> Self {
        Self {
            w,
            b: tb / w as f64,
            k,
            j: w,
            sigma2,
            tol: 1e-4,
            max_iter: 100,
            ci_level: 0.95,
            mc_samples: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 2 {
            return Err(invalid("window length must be at least 2"));
        }
        let kmax = TaperSet::max_tapers(self.w, self.b);
        if self.k == 0 || self.k > kmax {
            return Err(invalid(format!("taper count {} outside 1..={kmax}", self.k)));
        }
        if self.j == 0 {
            return Err(invalid("grid needs at least one bin"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(invalid(format!("tol must lie in (0, 1e-3], got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(invalid("ci_level must lie in (0, 1)"));
        }
        if self.mc_samples < 100 {
            return Err(invalid("mc_samples must be at least 100"));
        }
        Ok(())
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions { tol: self.tol, max_iter: self.max_iter }
    }
}

/// Non-overlapping windows cut from a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub windows: Vec<Vec<f64>>,
    /// Trailing samples that did not fill a window.
    pub dropped: usize,
}

/// Split `data` into `⌊T/W⌋` windows, dropping the remainder.
pub fn segment(data: &[f64], w: usize) -> Result<Segments> {
    if w == 0 {
        return Err(invalid("window length must be positive"));
    }
    if data.len() < w {
        return Err(invalid(format!("record of {} samples is shorter than one window ({w})", data.len())));
    }
    let windows: Vec<Vec<f64>> = data.chunks_exact(w).map(|c| c.to_vec()).collect();
    let dropped = data.len() - windows.len() * w;
    if dropped > 0 {
        log::warn!("dropping {dropped} trailing samples that do not fill a window of {w}");
    }
    Ok(Segments { windows, dropped })
}

/// Smoothed first and second moments for n = 0..N.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMoments {
    pub mean: Vec<CVec>,
    pub var: Vec<Vec<f64>>,
    /// `cross[n] = Cov(x_n, x_{n-1})` per bin; entry 0 unused.
    pub cross: Vec<Vec<f64>>,
}

impl SmoothedMoments {
    pub fn from_smoother(res: &SmootherResult) -> Self {
        Self {
            mean: res.x_smooth.clone(),
            var: res.p_smooth.iter().map(|p| p.diagonal()).collect(),
            cross: res.p_cross.iter().map(|p| p.diagonal()).collect(),
        }
    }

    fn n(&self) -> usize {
        self.mean.len() - 1
    }

    fn j(&self) -> usize {
        self.mean[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaUpdate {
    pub alpha: f64,
    /// Set when the denominator vanished or the value was clamped into [0, 1).
    pub flagged: bool,
}

/// Maximiser of the expected complete-data log-likelihood over α for fixed Q.
pub fn update_alpha(m: &SmoothedMoments, q: &[f64]) -> AlphaUpdate {
    let (mut num, mut den) = (0.0, 0.0);
    for t in 1..=m.n() {
        for b in 0..m.j() {
            let w = 1.0 / q[b];
            num += w * (m.cross[t][b] + (m.mean[t - 1][b].conj() * m.mean[t][b]).re);
            den += w * (m.var[t - 1][b] + m.mean[t - 1][b].norm_sqr());
        }
    }
    clamp_ratio(num, den)
}

pub(crate) fn clamp_ratio(num: f64, den: f64) -> AlphaUpdate {
    if !(den > 0.0) || !num.is_finite() {
        return AlphaUpdate { alpha: 0.0, flagged: true };
    }
    let raw = num / den;
    let alpha = raw.clamp(0.0, ALPHA_CLAMP);
    AlphaUpdate { alpha, flagged: alpha != raw }
}

/// Closed-form diagonal Q for a given α, floored at `1e-12 · mean`.
///
/// The initial state shares the prior `x_0 ~ CN(0, Q)`, so it enters the
/// average alongside the N transitions.
pub fn update_q(m: &SmoothedMoments, alpha: f64) -> Vec<f64> {
    let n = m.n();
    let mut q: Vec<f64> = (0..m.j())
        .map(|b| {
            let mut acc = m.mean[0][b].norm_sqr() + m.var[0][b];
            for t in 1..=n {
                let cur = m.mean[t][b].norm_sqr() + m.var[t][b];
                let prev = m.mean[t - 1][b].norm_sqr() + m.var[t - 1][b];
                let lag = (m.mean[t - 1][b].conj() * m.mean[t][b]).re + m.cross[t][b];
                acc += cur + alpha * alpha * prev - 2.0 * alpha * lag;
            }
            acc / (n + 1) as f64
        })
        .collect();
    floor_entries(&mut q);
    q
}

pub(crate) fn floor_entries(q: &mut [f64]) {
    let mean = q.iter().map(|v| v.max(0.0)).sum::<f64>() / q.len() as f64;
    let floor = (Q_FLOOR * mean).max(Q_ABS_FLOOR);
    q.iter_mut().for_each(|v| {
        if !(*v >= floor) {
            *v = floor;
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 100 }
    }
}

/// Denoised eigen-coefficients of one taper and the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTrack {
    pub taper: usize,
    /// Smoothed means for windows 1..N.
    pub mean: Vec<CVec>,
    /// Smoothed marginal variances for windows 1..N.
    pub var: Vec<Vec<f64>>,
    pub alpha: f64,
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative change of the stacked smoothed means at each iteration.
    pub rel_change: Vec<f64>,
    /// Observed-data negative log-likelihood of each parameter iterate, ending
    /// with the returned parameters.
    pub objective: Vec<f64>,
    pub flags: Vec<String>,
}

fn initial_q(z: &[CVec], sigma2: f64, alpha0: f64) -> Vec<f64> {
    let j = z[0].len();
    let n = z.len() as f64;
    let mut q: Vec<f64> = (0..j)
        .map(|b| {
            let p = z.iter().map(|v| v[b].norm_sqr()).sum::<f64>() / n;
            let signal = (p - sigma2).max(1e-2 * p).max(1e-6 * sigma2);
            signal * (1.0 - alpha0 * alpha0)
        })
        .collect();
    floor_entries(&mut q);
    q
}

pub(crate) fn relative_change<T, F>(cur: &[T], prev: &[T], dist: F) -> (f64, f64)
where
    F: Fn(&T, &T) -> (f64, f64),
{
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in cur.iter().zip(prev) {
        let (d, s) = dist(a, b);
        num += d;
        den += s;
    }
    (num, den)
}

fn mean_change(cur: &[CVec], prev: &[CVec]) -> f64 {
    let (num, den) = relative_change(cur, prev, |a, b| ((a - b).norm_squared(), b.norm_squared()));
    if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// EM fit on eigen-coefficient observations `z[n]`, n = 1..N, each of length J.
pub fn em_fit_coefficients(z: &[CVec], sigma2: f64, opts: &EmOptions) -> Result<EigenTrack> {
    if z.is_empty() {
        return Err(invalid("no windows to fit"));
    }
    let j = z[0].len();
    if z.iter().any(|v| v.len() != j) {
        return Err(mismatch("windows have different numbers of bins"));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2 must be positive"));
    }
    let mut alpha = ALPHA_INIT;
    let mut q = initial_q(z, sigma2, alpha);
    let prior_mean = CVec::zeros(j);

    let mut flags = Vec::new();
    let mut objective = Vec::new();
    let mut rel_change = Vec::new();
    let mut prev: Option<Vec<CVec>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut res = diag_smoother(alpha, &q, sigma2, z, &prior_mean, &q)?;
    loop {
        if !res.nll.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite likelihood at iteration {iterations}")));
        }
        objective.push(res.nll);
        if let Some(p) = &prev {
            let rc = mean_change(&res.x_smooth, p);
            rel_change.push(rc);
            if rc < opts.tol {
                converged = true;
                break;
            }
        }
        if iterations == opts.max_iter {
            break;
        }
        let moments = SmoothedMoments::from_smoother(&res);
        let au = update_alpha(&moments, &q);
        if au.flagged {
            flags.push(format!("alpha update clamped at iteration {}", iterations + 1));
        }
        alpha = au.alpha;
        q = update_q(&moments, alpha);
        iterations += 1;
        prev = Some(std::mem::take(&mut res.x_smooth));
        res = diag_smoother(alpha, &q, sigma2, z, &prior_mean, &q)?;
    }
    let var = res.p_smooth[1..].iter().map(|p| p.diagonal()).collect();
    Ok(EigenTrack {
        taper: 0,
        mean: res.x_smooth[1..].to_vec(),
        var,
        alpha,
        q,
        iterations,
        converged,
        rel_change,
        objective,
        flags,
    })
}

/// Fit taper `k` over a set of windows.
pub fn em_fit_taper(windows: &[Vec<f64>], taps: &TaperSet, k: usize, grid: &FrequencyGrid, cfg: &DbmtConfig) -> Result<EigenTrack> {
    let z = coefficient_track(taps, k, windows, grid)?;
    let mut track = em_fit_coefficients(&z, cfg.sigma2, &cfg.em_options())?;
    track.taper = k;
    Ok(track)
}

/// Average of per-taper powers with Monte Carlo confidence bands.
pub fn assemble_spectrogram(
    tracks: &[EigenTrack],
    cfg: &DbmtConfig,
    times: Vec<f64>,
    window_sec: f64,
    freqs: Vec<f64>,
) -> Result<Spectrogram> {
    if tracks.is_empty() {
        return Err(invalid("no tracks to assemble"));
    }
    let n = tracks[0].mean.len();
    let j = tracks[0].mean.first().map_or(0, |v| v.len());
    if tracks.iter().any(|t| t.mean.len() != n || t.var.len() != n || t.mean.iter().any(|v| v.len() != j)) {
        return Err(mismatch("tracks differ in shape"));
    }
    let kf = tracks.len() as f64;
    let power = DMatrix::from_fn(n, j, |t, b| tracks.iter().map(|tr| tr.mean[t][b].norm_sqr()).sum::<f64>() / kf);
    let p_lo = 0.5 * (1.0 - cfg.ci_level);
    let p_hi = 0.5 * (1.0 + cfg.ci_level);
    let samples = cfg.mc_samples;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut lo = vec![0.0; j];
            let mut hi = vec![0.0; j];
            let mut draws = vec![0.0; samples];
            for b in 0..j {
                for d in draws.iter_mut() {
                    let mut acc = 0.0;
                    for tr in tracks {
                        let s = (0.5 * tr.var[t][b].max(0.0)).sqrt();
                        let g1: f64 = StandardNormal.sample(&mut rng);
                        let g2: f64 = StandardNormal.sample(&mut rng);
                        let x = tr.mean[t][b] + Complex64::new(s * g1, s * g2);
                        acc += x.norm_sqr();
                    }
                    *d = acc / kf;
                }
                draws.sort_by(|a, b| a.total_cmp(b));
                let centre = power[(t, b)];
                lo[b] = quantile_sorted(&draws, p_lo).min(centre);
                hi[b] = quantile_sorted(&draws, p_hi).max(centre);
            }
            (lo, hi)
        })
        .collect();
    let ci_lo = DMatrix::from_fn(n, j, |t, b| rows[t].0[b]);
    let ci_hi = DMatrix::from_fn(n, j, |t, b| rows[t].1[b]);
    let spec = Spectrogram::new(Method::Dbmt, power, ci_lo, ci_hi, times, window_sec, freqs)?
        .with_meta("ci_method", "monte-carlo per-cell marginal")
        .with_meta("units", "eigen-spectrum (power per cycle/sample)");
    Ok(spec)
}

/// Robust noise-floor guess: median over bins of the time-averaged
/// multitaper eigen-spectrum of non-overlapping windows.
pub fn estimate_sigma2(data: &[f64], sample_rate: f64, w: usize, b: f64, k: usize, j: usize) -> Result<f64> {
    let seg = segment(data, w)?;
    let taps = compute_dpss(w, b, k)?;
    let grid = FrequencyGrid::new(j, sample_rate)?;
    let mut avg = vec![0.0; j];
    for win in &seg.windows {
        let x = crate::tapers::eigen_coefficients(&taps, win, &grid)?;
        for (bin, a) in avg.iter_mut().enumerate() {
            *a += x.column(bin).iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
    }
    let scale = (seg.windows.len() * k) as f64;
    avg.iter_mut().for_each(|a| *a /= scale);
    let m = crate::stats::median(&avg);
    if m > 0.0 && m.is_finite() {
        Ok(m)
    } else {
        Err(invalid("noise floor estimate is not positive; pass sigma2 explicitly"))
    }
}

/// Result of a full DBMT analysis.
#[derive(Debug, Clone)]
pub struct DbmtFit {
    pub spectrogram: Spectrogram,
    pub tracks: Vec<EigenTrack>,
    pub tapers: TaperSet,
    pub dropped: usize,
}

/// Segment a record, fit every taper in parallel and assemble the spectrogram.
pub fn fit(data: &[f64], sample_rate: f64, cfg: &DbmtConfig) -> Result<DbmtFit> {
    cfg.validate()?;
    let seg = segment(data, cfg.w)?;
    let taps = compute_dpss(cfg.w, cfg.b, cfg.k)?;
    let grid = FrequencyGrid::new(cfg.j, sample_rate)?;
    let tracks: Vec<EigenTrack> = (0..cfg.k)
        .into_par_iter()
        .map(|k| em_fit_taper(&seg.windows, &taps, k, &grid, cfg))
        .collect::<Result<_>>()?;
    let times = (0..seg.windows.len()).map(|t| (t * cfg.w) as f64 / sample_rate).collect();
    let window_sec = cfg.w as f64 / sample_rate;
    let mut spectrogram = assemble_spectrogram(&tracks, cfg, times, window_sec, grid.hz())?;
    let alphas: Vec<String> = tracks.iter().map(|t| format!("{:.6}", t.alpha)).collect();
    spectrogram.meta.insert("alpha".into(), alphas.join(","));
    Ok(DbmtFit { spectrogram, tracks, tapers: taps, dropped: seg.dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn segmentation() {
        assert_eq!(segment(&[0.0; 12], 4).unwrap().windows.len(), 3);
        let s = segment(&[0.0; 13], 4).unwrap();
        assert_eq!((s.windows.len(), s.dropped), (3, 1));
        assert_eq!(segment(&vec![0.0; 30000], 300).unwrap().windows.len(), 100);
        assert!(segment(&[0.0; 3], 4).is_err());
    }

    #[test]
    fn alpha_from_geometric_track() {
        let cc: f64 = 0.8;
        let n = 20;
        let m = SmoothedMoments {
            mean: (0..=n).map(|t| CVec::from_element(1, c(cc.powi(t as i32)))).collect(),
            var: vec![vec![0.0]; n + 1],
            cross: vec![vec![0.0]; n + 1],
        };
        assert!((update_alpha(&m, &[1.0]).alpha - cc).abs() < 1e-12);
    }

    #[test]
    fn alpha_from_trace_ratio() {
        let n = 5;
        let m = SmoothedMoments {
            mean: vec![CVec::zeros(3); n + 1],
            var: vec![vec![1.0; 3]; n + 1],
            cross: vec![vec![0.5; 3]; n + 1],
        };
        assert!((update_alpha(&m, &[1.0; 3]).alpha - 0.5).abs() < 1e-15);
        let q = update_q(&m, 0.0);
        assert!(q.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_states_flag_alpha() {
        let m = SmoothedMoments {
            mean: vec![CVec::zeros(2); 4],
            var: vec![vec![0.0; 2]; 4],
            cross: vec![vec![0.0; 2]; 4],
        };
        let au = update_alpha(&m, &[1.0, 1.0]);
        assert_eq!(au.alpha, 0.0);
        assert!(au.flagged);
    }

    #[test]
    fn zero_data_shrinks_to_zero() {
        let z = vec![CVec::zeros(4); 50];
        let track = em_fit_coefficients(&z, 1.0, &EmOptions { tol: 1e-6, max_iter: 200 }).unwrap();
        assert!(track.mean.iter().all(|v| v.norm() == 0.0));
        assert!(track.q.iter().all(|&v| v < 1e-4));
    }

    #[test]
    fn degenerate_posterior_collapses_band() {
        let track = EigenTrack {
            taper: 0,
            mean: vec![CVec::from_element(1, c(2.0))],
            var: vec![vec![0.0]],
            alpha: 0.5,
            q: vec![1.0],
            iterations: 0,
            converged: true,
            rel_change: vec![],
            objective: vec![],
            flags: vec![],
        };
        let mut cfg = DbmtConfig::new(4, 1.0, 1, 1.0);
        cfg.mc_samples = 100;
        let s = assemble_spectrogram(&[track], &cfg, vec![0.0], 1.0, vec![0.0]).unwrap();
        assert_eq!(s.power[(0, 0)], 4.0);
        assert_eq!(s.ci_lo[(0, 0)], 4.0);
        assert_eq!(s.ci_hi[(0, 0)], 4.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DbmtConfig::new(300, 3.0, 3, 1.0);
        assert!(cfg.validate().is_ok());
        cfg.tol = 0.01;
        assert!(cfg.validate().is_err());
        let cfg = DbmtConfig::new(300, 3.0, 6, 1.0);
        assert!(cfg.validate().is_err());
    }
}
