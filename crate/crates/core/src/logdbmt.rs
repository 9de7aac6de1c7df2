//! log-DBMT: EM estimation of log eigen-spectra tracks.
//!
//! Per bin, `ψ_n = s_n + φ_n` with `φ` log-χ² distributed with 2ν degrees of
//! freedom, `p(φ) ∝ exp(νφ − ½eᶠ)`, and `s_n = θ s_{n-1} + e_n`,
//! `e_n ~ N(0, R)`. The filter replaces each non-Gaussian update by its
//! Laplace approximation; the backward pass is the usual RTS recursion.
//!
//! The EM objective is the variational free energy of the Gaussian posterior
//! approximation. A new Laplace posterior is kept only when it does not raise
//! the free energy, which makes the objective non-increasing.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::dbmt::{clamp_ratio, floor_entries, segment};
use crate::error::{invalid, mismatch, Error, Result};
use crate::spectrogram::{Method, Spectrogram};
use crate::special::{digamma, trigamma};
use crate::tapers::{coefficient_track, compute_dpss, FrequencyGrid, TaperSet};

/// Eigen-spectra below `POWER_FLOOR · max` are raised to that level before the log.
pub const POWER_FLOOR: f64 = 1e-12;
pub const NU_MIN: f64 = 1e-3;
pub const NU_MAX: f64 = 1e3;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-10;
const THETA_INIT: f64 = 0.5;
const NU_INIT: f64 = 1.0;

/// Log eigen-spectra `ψ = log Ŝ + log 2` of one taper.
#[derive(Debug, Clone, PartialEq)]
pub struct LogObservation {
    /// N×J.
    pub psi: DMatrix<f64>,
    /// True where the power was floored.
    pub floored: DMatrix<bool>,
}

impl LogObservation {
    /// Build from an N×J matrix of eigen-spectra.
    pub fn from_power(power: &DMatrix<f64>) -> Self {
        let max = power.iter().copied().fold(0.0, f64::max);
        let floor = if max > 0.0 { POWER_FLOOR * max } else { f64::MIN_POSITIVE };
        let floored = power.map(|p| !(p >= floor));
        let psi = power.map(|p| p.max(floor).ln() + LN_2);
        Self { psi, floored }
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn j(&self) -> usize {
        self.psi.ncols()
    }
}

/// Log eigen-spectra for every taper.
pub fn log_eigen_spectra(windows: &[Vec<f64>], taps: &TaperSet, grid: &FrequencyGrid) -> Result<Vec<LogObservation>> {
    (0..taps.k)
        .map(|k| {
            let z = coefficient_track(taps, k, windows, grid)?;
            let power = DMatrix::from_fn(z.len(), grid.j, |t, b| z[t][b].norm_sqr());
            let obs = LogObservation::from_power(&power);
            let nfloor = obs.floored.iter().filter(|&&f| f).count();
            if nfloor > 0 {
                log::warn!("taper {k}: {nfloor} eigen-spectrum cells floored before the log");
            }
            Ok(obs)
        })
        .collect()
}

/// Mode of the one-step posterior `N(s; s_pred, ω) · p(ψ − s)` and its Laplace variance.
///
/// Solves `s = s_pred + ω(½e^{ψ−s} − ν)` by safeguarded Newton iteration.
pub fn laplace_filter_step(s_pred: f64, omega_pred: f64, psi: f64, nu: f64) -> Result<(f64, f64)> {
    if !(omega_pred >= 0.0) || !(nu > 0.0) || !s_pred.is_finite() || !psi.is_finite() {
        return Err(invalid("laplace step needs finite inputs, ω ≥ 0 and ν > 0"));
    }
    if omega_pred == 0.0 {
        return Ok((s_pred, 0.0));
    }
    let w = omega_pred;
    // g is increasing and concave in s.
    let g = |s: f64| s - s_pred - w * (0.5 * (psi - s).exp() - nu);
    let dg = |s: f64| 1.0 + 0.5 * w * (psi - s).exp();
    let mut lo = s_pred - w * nu;
    let mut hi = lo.max(psi) + 1.0;
    let mut step = 1.0;
    while g(hi) < 0.0 {
        hi += step;
        step *= 2.0;
    }
    if g(lo) >= 0.0 {
        lo = hi - step;
        while g(lo) >= 0.0 {
            lo -= step;
            step *= 2.0;
        }
    }
    let mut s = if psi - s_pred > 0.0 { 0.5 * (lo + hi) } else { hi };
    let mut converged = false;
    for it in 0..NEWTON_MAX_ITER + 200 {
        let gs = g(s);
        if gs.abs() < NEWTON_TOL * (1.0 + w) {
            converged = true;
            break;
        }
        if gs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - gs / dg(s);
        s = if it < NEWTON_MAX_ITER && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + s.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations: NEWTON_MAX_ITER + 200, residual: g(s).abs() });
    }
    let omega = 1.0 / (1.0 / w + 0.5 * (psi - s).exp());
    Ok((s, omega))
}

/// Approximate posterior of one bin, indexed 0..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPosterior {
    pub s_filt: Vec<f64>,
    pub omega_filt: Vec<f64>,
    pub s: Vec<f64>,
    pub omega: Vec<f64>,
    /// `cross[n] = Cov(s_n, s_{n-1})`; entry 0 unused.
    pub cross: Vec<f64>,
}

/// Prior on the initial log-spectrum of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPrior {
    pub mean: f64,
    pub var: f64,
}

/// Laplace forward filter and RTS backward pass for one bin.
pub fn laplace_smoother_bin(theta: f64, r: f64, nu: f64, prior: LogPrior, psi: &[f64]) -> Result<BinPosterior> {
    let n = psi.len();
    let mut s_filt = Vec::with_capacity(n + 1);
    let mut omega_filt = Vec::with_capacity(n + 1);
    let mut omega_pred = Vec::with_capacity(n + 1);
    s_filt.push(prior.mean);
    omega_filt.push(prior.var);
    omega_pred.push(prior.var);
    for &y in psi {
        let sp = theta * s_filt.last().unwrap();
        let wp = theta * theta * omega_filt.last().unwrap() + r;
        let (s, w) = laplace_filter_step(sp, wp, y, nu)?;
        s_filt.push(s);
        omega_filt.push(w);
        omega_pred.push(wp);
    }
    let mut s = s_filt.clone();
    let mut omega = omega_filt.clone();
    let mut cross = vec![0.0; n + 1];
    for t in (0..n).rev() {
        let a = theta * omega_filt[t] / omega_pred[t + 1];
        s[t] = s_filt[t] + a * (s[t + 1] - theta * s_filt[t]);
        omega[t] = omega_filt[t] + a * a * (omega[t + 1] - omega_pred[t + 1]);
        cross[t + 1] = a * omega[t + 1];
    }
    Ok(BinPosterior { s_filt, omega_filt, s, omega, cross })
}

const CORRECTION_ROUNDS: usize = 3;

/// Laplace posterior followed by rounds that rerun it on `ψ + Ω/2`, which moves
/// the mean towards the stationary point of the free energy (the expected
/// likelihood term carries `exp(ψ − m + Ω/2)` rather than `exp(ψ − m)`).
/// The candidate with the lowest free energy is returned.
pub fn corrected_posterior(theta: f64, r: f64, nu: f64, prior: LogPrior, psi: &[f64]) -> Result<BinPosterior> {
    let mut best = laplace_smoother_bin(theta, r, nu, prior, psi)?;
    let mut best_f = free_energy_bin(&best, psi, theta, r, nu, prior);
    let mut last = best.clone();
    for _ in 0..CORRECTION_ROUNDS {
        let shifted: Vec<f64> = psi.iter().enumerate().map(|(t, y)| y + 0.5 * last.omega[t + 1]).collect();
        let cand = laplace_smoother_bin(theta, r, nu, prior, &shifted)?;
        let f = free_energy_bin(&cand, psi, theta, r, nu, prior);
        if f < best_f {
            best = cand.clone();
            best_f = f;
        }
        last = cand;
    }
    Ok(best)
}

/// Free energy `E_q[−log p(ψ, s)] − H(q)` of a Gaussian-Markov posterior for one bin.
pub fn free_energy_bin(post: &BinPosterior, psi: &[f64], theta: f64, r: f64, nu: f64, prior: LogPrior) -> f64 {
    let n = psi.len();
    let ln2pi = (2.0 * PI).ln();
    let (m, om, cr) = (&post.s, &post.omega, &post.cross);
    let mut f = 0.5 * (ln2pi + prior.var.ln()) + ((m[0] - prior.mean).powi(2) + om[0]) / (2.0 * prior.var);
    f -= 0.5 * (ln2pi + 1.0 + om[0].ln());
    let obs_const = ln_gamma(nu) + nu * LN_2;
    for t in 1..=n {
        let e2 = om[t] + m[t] * m[t] + theta * theta * (om[t - 1] + m[t - 1] * m[t - 1])
            - 2.0 * theta * (cr[t] + m[t] * m[t - 1]);
        f += 0.5 * (ln2pi + r.ln()) + e2 / (2.0 * r);
        let resid = psi[t - 1] - m[t];
        f -= nu * resid - 0.5 * (resid + 0.5 * om[t]).exp() - obs_const;
        let cond = om[t] - cr[t] * cr[t] / om[t - 1];
        f -= 0.5 * (ln2pi + 1.0 + cond.max(f64::MIN_POSITIVE).ln());
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuUpdate {
    pub nu: f64,
    /// Set when the root lies outside `[NU_MIN, NU_MAX]`.
    pub flagged: bool,
}

/// Maximum-likelihood ν given the mean residual `mean(ψ − s)`.
///
/// Solves `ϝ(ν) = mean − log 2`, clamped to `[NU_MIN, NU_MAX]`.
pub fn update_nu(mean_residual: f64) -> NuUpdate {
    let target = mean_residual - LN_2;
    if !target.is_finite() {
        return NuUpdate { nu: NU_INIT, flagged: true };
    }
    if target <= digamma(NU_MIN) {
        return NuUpdate { nu: NU_MIN, flagged: true };
    }
    if target >= digamma(NU_MAX) {
        return NuUpdate { nu: NU_MAX, flagged: true };
    }
    // Newton in log ν; digamma is increasing and concave so this is well behaved.
    let (mut lo, mut hi) = (NU_MIN.ln(), NU_MAX.ln());
    let mut x = if target > -2.0 { (target.exp() + 0.5).ln() } else { (-1.0 / target).ln() };
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let nu = x.exp();
        let g = digamma(nu) - target;
        if g.abs() < 1e-13 {
            break;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let next = x - g / (trigamma(nu) * nu);
        x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    NuUpdate { nu: x.exp(), flagged: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDbmtConfig {
    pub w: usize,
    pub b: f64,
    pub k: usize,
    pub j: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub ci_level: f64,
}

impl LogDbmtConfig {
    pub fn new(w: usize, tb: f64, k: usize) -> Self {
        Self { w, b: tb / w as f64, k, j: w, tol: 1e-4, max_iter: 100, ci_level: 0.95 }
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
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(invalid(format!("tol must lie in (0, 1e-3], got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(invalid("ci_level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Smoothed log eigen-spectra of one taper and the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTrack {
    pub taper: usize,
    /// N×J smoothed means, windows 1..N.
    pub s: DMatrix<f64>,
    /// N×J smoothed variances.
    pub omega: DMatrix<f64>,
    /// N×J filtered variances.
    pub omega_filt: DMatrix<f64>,
    pub theta: f64,
    pub r: Vec<f64>,
    pub nu: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rel_change: Vec<f64>,
    /// Free energy of each accepted (posterior, parameter) pair.
    pub objective: Vec<f64>,
    /// Number of E-steps whose Laplace posterior was rejected.
    pub rejected_steps: usize,
    pub flags: Vec<String>,
}

/// Options for the log-domain EM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Hold ν at its initial value.
    pub fix_nu: Option<f64>,
    /// Hold θ at a given value.
    pub fix_theta: Option<f64>,
}

impl Default for LogEmOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 100, fix_nu: None, fix_theta: None }
    }
}

struct State {
    bins: Vec<BinPosterior>,
}

impl State {
    fn new(theta: f64, r: &[f64], nu: f64, priors: &[LogPrior], psi: &DMatrix<f64>) -> Result<Self> {
        let bins = (0..psi.ncols())
            .map(|b| {
                let col: Vec<f64> = psi.column(b).iter().copied().collect();
                corrected_posterior(theta, r[b], nu, priors[b], &col)
            })
            .collect::<Result<_>>()?;
        Ok(Self { bins })
    }

    fn free_energy(&self, psi: &DMatrix<f64>, theta: f64, r: &[f64], nu: f64, priors: &[LogPrior]) -> f64 {
        self.bins
            .iter()
            .enumerate()
            .map(|(b, post)| {
                let col: Vec<f64> = psi.column(b).iter().copied().collect();
                free_energy_bin(post, &col, theta, r[b], nu, priors[b])
            })
            .sum()
    }
}

fn priors_from(psi: &DMatrix<f64>) -> Vec<LogPrior> {
    let offset = digamma(NU_INIT) + LN_2;
    (0..psi.ncols())
        .map(|b| {
            let col: Vec<f64> = psi.column(b).iter().copied().collect();
            let mean = crate::stats::mean(&col);
            let var = if col.len() > 1 { crate::stats::variance(&col) } else { 1.0 };
            LogPrior { mean: mean - offset, var: var.max(1e-3) }
        })
        .collect()
}

fn update_theta(bins: &[BinPosterior], r: &[f64]) -> crate::dbmt::AlphaUpdate {
    let (mut num, mut den) = (0.0, 0.0);
    for (b, p) in bins.iter().enumerate() {
        let w = 1.0 / r[b];
        for t in 1..p.s.len() {
            num += w * (p.cross[t] + p.s[t] * p.s[t - 1]);
            den += w * (p.omega[t - 1] + p.s[t - 1] * p.s[t - 1]);
        }
    }
    clamp_ratio(num, den)
}

fn update_r(bins: &[BinPosterior], theta: f64) -> Vec<f64> {
    let mut r: Vec<f64> = bins
        .iter()
        .map(|p| {
            let n = p.s.len() - 1;
            let mut acc = 0.0;
            for t in 1..=n {
                acc += p.omega[t] + p.s[t] * p.s[t] + theta * theta * (p.omega[t - 1] + p.s[t - 1] * p.s[t - 1])
                    - 2.0 * theta * (p.cross[t] + p.s[t] * p.s[t - 1]);
            }
            acc / n as f64
        })
        .collect();
    floor_entries(&mut r);
    r
}

fn mean_residual(bins: &[BinPosterior], psi: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for (b, p) in bins.iter().enumerate() {
        for t in 0..psi.nrows() {
            acc += psi[(t, b)] - p.s[t + 1];
        }
    }
    acc / (psi.nrows() * psi.ncols()) as f64
}

fn param_change(before: &(f64, Vec<f64>, f64), theta: f64, r: &[f64], nu: f64) -> f64 {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
    let dr = before.1.iter().zip(r).map(|(&a, &b)| rel(b, a)).fold(0.0, f64::max);
    rel(theta, before.0).max(dr).max(rel(nu, before.2))
}

/// EM fit of one taper's log eigen-spectra.
pub fn em_fit_taper_log(obs: &LogObservation, opts: &LogEmOptions) -> Result<LogTrack> {
    let (n, j) = (obs.n(), obs.j());
    if n == 0 || j == 0 {
        return Err(invalid("empty log observation"));
    }
    let psi = &obs.psi;
    let priors = priors_from(psi);
    let mut theta = opts.fix_theta.unwrap_or(THETA_INIT);
    let mut nu = opts.fix_nu.unwrap_or(NU_INIT);
    let trig = trigamma(nu);
    let mut r: Vec<f64> = priors.iter().map(|p| (p.var - trig).max(0.05 * trig) * (1.0 - theta * theta).max(1e-3)).collect();
    floor_entries(&mut r);

    let mut state = State::new(theta, &r, nu, &priors, psi)?;
    let mut objective = vec![state.free_energy(psi, theta, &r, nu, &priors)];
    let mut rel_change = Vec::new();
    let mut flags = Vec::new();
    let mut rejected = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let before = (theta, r.clone(), nu);
        // M-step on the current posterior.
        if opts.fix_theta.is_none() {
            let tu = update_theta(&state.bins, &r);
            if tu.flagged {
                flags.push(format!("theta update clamped at iteration {}", iterations + 1));
            }
            theta = tu.alpha;
        }
        r = update_r(&state.bins, theta);
        if opts.fix_nu.is_none() {
            let nu_up = update_nu(mean_residual(&state.bins, psi));
            if nu_up.flagged {
                flags.push(format!("nu clamped at iteration {}", iterations + 1));
            }
            nu = nu_up.nu;
        }
        iterations += 1;
        let f_m = state.free_energy(psi, theta, &r, nu, &priors);
        // E-step with safeguard: each bin keeps whichever posterior has the
        // lower free energy.
        let candidate = State::new(theta, &r, nu, &priors, psi)?;
        let mut change_num = 0.0;
        let mut change_den = 0.0;
        let mut any_accepted = false;
        let mut f_new = 0.0;
        for (b, cand) in candidate.bins.into_iter().enumerate() {
            let col: Vec<f64> = psi.column(b).iter().copied().collect();
            let f_old = free_energy_bin(&state.bins[b], &col, theta, r[b], nu, priors[b]);
            let f_cand = free_energy_bin(&cand, &col, theta, r[b], nu, priors[b]);
            if f_cand <= f_old {
                for t in 1..=n {
                    change_num += (cand.s[t] - state.bins[b].s[t]).powi(2);
                }
                state.bins[b] = cand;
                f_new += f_cand;
                any_accepted = true;
            } else {
                rejected += 1;
                f_new += f_old;
            }
            for t in 1..=n {
                change_den += state.bins[b].s[t].powi(2);
            }
        }
        if !f_new.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite free energy at iteration {iterations}")));
        }
        debug_assert!(f_new <= f_m + 1e-9 * f_m.abs().max(1.0));
        objective.push(f_new);
        let change = if change_den > 0.0 { (change_num / change_den).sqrt() } else { change_num.sqrt() };
        // A rejected E-step leaves the posterior unchanged, so progress is
        // measured on the parameters instead.
        let rc = if any_accepted { change.max(param_change(&before, theta, &r, nu)) } else { param_change(&before, theta, &r, nu) };
        rel_change.push(rc);
        if rc < opts.tol {
            converged = true;
            break;
        }
    }
    if rejected > 0 {
        log::debug!("log-DBMT: {rejected} Laplace E-steps rejected by the free-energy safeguard");
    }
    let s = DMatrix::from_fn(n, j, |t, b| state.bins[b].s[t + 1]);
    let omega = DMatrix::from_fn(n, j, |t, b| state.bins[b].omega[t + 1]);
    let omega_filt = DMatrix::from_fn(n, j, |t, b| state.bins[b].omega_filt[t + 1]);
    Ok(LogTrack {
        taper: 0,
        s,
        omega,
        omega_filt,
        theta,
        r,
        nu,
        iterations,
        converged,
        rel_change,
        objective,
        rejected_steps: rejected,
        flags,
    })
}

/// `D̂ = (1/K) Σ_k exp(ŝ⁽ᵏ⁾)` with Gaussian bands on each `s` mapped through exp.
pub fn assemble_log_spectrogram(
    tracks: &[LogTrack],
    ci_level: f64,
    times: Vec<f64>,
    window_sec: f64,
    freqs: Vec<f64>,
) -> Result<Spectrogram> {
    if tracks.is_empty() {
        return Err(invalid("no tracks to assemble"));
    }
    let shape = tracks[0].s.shape();
    if tracks.iter().any(|t| t.s.shape() != shape || t.omega.shape() != shape) {
        return Err(mismatch("tracks differ in shape"));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 * (1.0 + ci_level));
    let kf = tracks.len() as f64;
    let avg = |f: &dyn Fn(&LogTrack, usize, usize) -> f64| {
        DMatrix::from_fn(shape.0, shape.1, |t, b| tracks.iter().map(|tr| f(tr, t, b)).sum::<f64>() / kf)
    };
    let power = avg(&|tr, t, b| tr.s[(t, b)].exp());
    let ci_lo = avg(&|tr, t, b| (tr.s[(t, b)] - z * tr.omega[(t, b)].max(0.0).sqrt()).exp());
    let ci_hi = avg(&|tr, t, b| (tr.s[(t, b)] + z * tr.omega[(t, b)].max(0.0).sqrt()).exp());
    Ok(Spectrogram::new(Method::LogDbmt, power, ci_lo, ci_hi, times, window_sec, freqs)?
        .with_meta("ci_method", "gaussian quantiles on log scale, exponentiated and averaged over tapers")
        .with_meta("units", "eigen-spectrum (power per cycle/sample)"))
}

#[derive(Debug, Clone)]
pub struct LogDbmtFit {
    pub spectrogram: Spectrogram,
    pub tracks: Vec<LogTrack>,
    pub tapers: TaperSet,
    pub dropped: usize,
}

/// Segment, fit every taper in parallel and assemble.
pub fn fit(data: &[f64], sample_rate: f64, cfg: &LogDbmtConfig) -> Result<LogDbmtFit> {
    cfg.validate()?;
    let seg = segment(data, cfg.w)?;
    let taps = compute_dpss(cfg.w, cfg.b, cfg.k)?;
    let grid = FrequencyGrid::new(cfg.j, sample_rate)?;
    let obs = log_eigen_spectra(&seg.windows, &taps, &grid)?;
    let opts = LogEmOptions { tol: cfg.tol, max_iter: cfg.max_iter, ..Default::default() };
    let tracks: Vec<LogTrack> = obs
        .par_iter()
        .enumerate()
        .map(|(k, o)| {
            em_fit_taper_log(o, &opts).map(|mut t| {
                t.taper = k;
                t
            })
        })
        .collect::<Result<_>>()?;
    let times = (0..seg.windows.len()).map(|t| (t * cfg.w) as f64 / sample_rate).collect();
    let mut spectrogram = assemble_log_spectrogram(&tracks, cfg.ci_level, times, cfg.w as f64 / sample_rate, grid.hz())?;
    let nus: Vec<String> = tracks.iter().map(|t| format!("{:.6}", t.nu)).collect();
    let thetas: Vec<String> = tracks.iter().map(|t| format!("{:.6}", t.theta)).collect();
    spectrogram.meta.insert("nu".into(), nus.join(","));
    spectrogram.meta.insert("theta".into(), thetas.join(","));
    Ok(LogDbmtFit { spectrogram, tracks, tapers: taps, dropped: seg.dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_power_maps_to_zero() {
        let obs = LogObservation::from_power(&DMatrix::from_element(1, 1, 0.5));
        assert!(obs.psi[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn zero_power_is_floored_and_flagged() {
        let obs = LogObservation::from_power(&DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert!(obs.floored[(0, 0)] && !obs.floored[(0, 1)]);
        assert!(obs.psi.iter().all(|v| v.is_finite()));
        let all_zero = LogObservation::from_power(&DMatrix::zeros(2, 2));
        assert!(all_zero.floored.iter().all(|&f| f));
    }

    #[test]
    fn laplace_step_fixed_points() {
        let (s, _) = laplace_filter_step(0.3, 2.0, 0.3 + LN_2, 1.0).unwrap();
        assert!((s - 0.3).abs() < 1e-10);
        let (s, w) = laplace_filter_step(0.3, 0.0, 5.0, 1.0).unwrap();
        assert_eq!((s, w), (0.3, 0.0));
        let (s, _) = laplace_filter_step(0.3, 1e-12, 5.0, 1.0).unwrap();
        assert!((s - 0.3).abs() < 1e-9);
    }

    #[test]
    fn laplace_step_handles_extreme_inputs() {
        for &(sp, w, psi) in &[(0.0, 1e6, 40.0), (0.0, 1e6, -40.0), (30.0, 0.5, -30.0), (-30.0, 3.0, 30.0)] {
            let (s, om) = laplace_filter_step(sp, w, psi, 0.7).unwrap();
            let res = s - sp - w * (0.5 * (psi - s).exp() - 0.7);
            assert!(res.abs() < 1e-6 * (1.0 + w), "{sp} {w} {psi}: {res}");
            assert!(om > 0.0 && om <= w);
        }
    }

    #[test]
    fn nu_edge_cases() {
        // ϝ(ν) = 0 at the positive root of digamma.
        let up = update_nu(LN_2);
        assert!((up.nu - 1.461_632_144_968_362_3).abs() < 1e-8);
        assert!(update_nu(-1e6).flagged);
        assert!(update_nu(1e6).flagged);
        let up = update_nu(digamma(1.0) + LN_2);
        assert!((up.nu - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_window_track_assembles() {
        let t1 = LogTrack {
            taper: 0,
            s: DMatrix::zeros(1, 1),
            omega: DMatrix::zeros(1, 1),
            omega_filt: DMatrix::zeros(1, 1),
            theta: 0.5,
            r: vec![1.0],
            nu: 1.0,
            iterations: 0,
            converged: true,
            rel_change: vec![],
            objective: vec![],
            rejected_steps: 0,
            flags: vec![],
        };
        let mut t2 = t1.clone();
        t2.s[(0, 0)] = 3f64.ln();
        let s = assemble_log_spectrogram(&[t1.clone()], 0.95, vec![0.0], 1.0, vec![0.0]).unwrap();
        assert!((s.power[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(s.ci_hi[(0, 0)] - s.ci_lo[(0, 0)], 0.0);
        let s = assemble_log_spectrogram(&[t1, t2], 0.95, vec![0.0], 1.0, vec![0.0]).unwrap();
        assert!((s.power[(0, 0)] - 2.0).abs() < 1e-14);
    }
}
