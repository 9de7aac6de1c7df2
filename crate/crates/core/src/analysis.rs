//! Theory for the smoothed estimator: equivalent filter bank, signal and noise
//! weights κₙ and μₙ, their bounds, the flat-spectrum Riccati solution and the
//! bias/variance bounds.
//!
//! Quantities are expressed in eigen-coefficient units, where each window
//! contributes unit observation information per bin. The `rw` arguments scale
//! that information (rw = W when working with per-sample noise variance).

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lgss::steady_state_scalar;
use crate::tapers::{FrequencyGrid, TaperSet};

type CVec = DVector<Complex64>;

/// Flat-spectrum steady state, normalized by σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSolution {
    /// Predicted variance ζ/σ².
    pub zeta: f64,
    /// Filtered variance τ/σ².
    pub tau: f64,
    pub gamma: f64,
    pub eta: f64,
    /// False when α = 0 and γ was set to 0.
    pub gamma_defined: bool,
}

/// Closed-form positive root of the scalar Riccati equation for flat Q.
pub fn flat_spectrum_gamma(alpha: f64, q_over_sigma2: f64, rw: f64) -> Result<FlatSolution> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if !(q_over_sigma2 > 0.0 && q_over_sigma2.is_finite()) {
        return Err(invalid("q/σ² must be positive"));
    }
    if !(rw > 0.0) {
        return Err(invalid("rw must be positive"));
    }
    let p = q_over_sigma2;
    let b = 1.0 - alpha * alpha - rw * p;
    let zeta = (-b + (b * b + 4.0 * rw * p).sqrt()) / (2.0 * rw);
    let tau = zeta / (1.0 + rw * zeta);
    let eta = rw * zeta / (1.0 + rw * zeta);
    if alpha == 0.0 {
        return Ok(FlatSolution { zeta, tau, gamma: 0.0, eta, gamma_defined: false });
    }
    let gamma = (1.0 - p / zeta) / alpha;
    Ok(FlatSolution { zeta, tau, gamma, eta, gamma_defined: true })
}

/// Parameters of the weight functions κₙ and μₙ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub gamma: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl WeightParams {
    /// Uses the steady-state identity `η = 1 − γ/α`.
    pub fn from_gamma(gamma: f64, alpha: f64) -> Self {
        let eta = if alpha > 0.0 { 1.0 - gamma / alpha } else { 1.0 };
        Self { gamma, alpha, eta }
    }

    pub fn flat(alpha: f64, q_over_sigma2: f64, rw: f64) -> Result<Self> {
        let sol = flat_spectrum_gamma(alpha, q_over_sigma2, rw)?;
        Ok(Self { gamma: sol.gamma, alpha, eta: sol.eta })
    }
}

fn check_window(n: usize, n_windows: usize) -> Result<()> {
    if n == 0 || n > n_windows {
        return Err(invalid(format!("window index {n} outside 1..={n_windows}")));
    }
    Ok(())
}

/// κₙ and μₙ by an O(N) recursion. `n` is 1-based.
pub fn kappa_mu(p: &WeightParams, n: usize, n_windows: usize) -> Result<(f64, f64)> {
    check_window(n, n_windows)?;
    let e2 = p.eta * p.eta;
    // κ = η² aᵀ T a with a_s = γ^{|s−n|} and T_{ss'} = α^{|s−s'|};
    // c_s = Σ_{s'<s} a_{s'} α^{s−s'} is built forward.
    let mut carry = 0.0;
    let mut quad = 0.0;
    let mut diag = 0.0;
    let mut prev_a = 0.0;
    for s in 1..=n_windows {
        let a = p.gamma.powi((s as i64 - n as i64).unsigned_abs() as i32);
        carry = p.alpha * (carry + prev_a);
        quad += a * a + 2.0 * a * carry;
        diag += a * a;
        prev_a = a;
    }
    Ok((e2 * quad, e2 * diag))
}

/// κₙ and μₙ from the defining double and single sums.
pub fn kappa_mu_brute(p: &WeightParams, n: usize, n_windows: usize) -> Result<(f64, f64)> {
    check_window(n, n_windows)?;
    let a = |s: usize| p.gamma.powi(s.abs_diff(n) as i32);
    let mut kappa = 0.0;
    let mut mu = 0.0;
    for s in 1..=n_windows {
        for t in 1..=n_windows {
            kappa += a(s) * a(t) * p.alpha.powi(s.abs_diff(t) as i32);
        }
        mu += a(s) * a(s);
    }
    let e2 = p.eta * p.eta;
    Ok((e2 * kappa, e2 * mu))
}

/// `T₀ = Σ_{s=1}^{N} γ^{2|s−n|}` in closed form.
pub fn t0_closed(gamma: f64, n: usize, n_windows: usize) -> f64 {
    let g2 = gamma * gamma;
    (1.0 + g2 - g2.powi(n as i32) - g2.powi((n_windows - n + 1) as i32)) / (1.0 - g2)
}

/// Lower and upper bounds on κₙ: centre ∓ slack.
pub fn kappa_bounds(gamma: f64, alpha: f64, n: usize, n_windows: usize) -> Result<(f64, f64)> {
    check_window(n, n_windows)?;
    if !(gamma > 0.0 && gamma < 1.0 && alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("bounds need 0 < γ, α < 1"));
    }
    let pre = (1.0 - gamma / alpha).powi(2);
    let ag = alpha * gamma;
    let t0 = t0_closed(gamma, n, n_windows);
    let centre = pre * ((1.0 + ag - 2.0 * ag.powi(n_windows as i32)) / (1.0 - ag) * t0 + gamma / (1.0 - gamma).powi(2));
    let slack = pre * gamma / (1.0 - gamma).powi(2);
    Ok((centre - slack, centre + slack))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitKappa {
    pub alpha: f64,
    /// False when κₙ − 1 has no sign change on (0, 1).
    pub found: bool,
}

/// α at which κₙ = 1 for a flat spectrum with the given SNR.
pub fn alpha_for_unit_kappa(q_over_sigma2: f64, n: usize, n_windows: usize, rw: f64) -> Result<UnitKappa> {
    let f = |a: f64| -> Result<f64> { Ok(kappa_mu(&WeightParams::flat(a, q_over_sigma2, rw)?, n, n_windows)?.0 - 1.0) };
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo.signum() == fhi.signum() {
        let edge = if flo.abs() < fhi.abs() { lo } else { hi };
        return Ok(UnitKappa { alpha: edge, found: false });
    }
    let rising = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(UnitKappa { alpha: 0.5 * (lo + hi), found: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    pub bias: f64,
    pub variance: f64,
}

/// Bias and variance bounds of the smoothed estimator (o(1) term omitted).
///
/// `d` is the spectral level at the frequency of interest and `sup_d` its
/// supremum over frequency (equal for a flat spectrum).
pub fn theorem_bounds(d: f64, sup_d: f64, sigma2: f64, lambda: &[f64], kappa: f64, mu: f64) -> Result<TheoremBounds> {
    if lambda.is_empty() {
        return Err(invalid("need at least one taper eigenvalue"));
    }
    if d < 0.0 || sup_d < d || sigma2 < 0.0 {
        return Err(invalid("bound inputs must be non-negative with sup D ≥ D"));
    }
    let k = lambda.len() as f64;
    let lbar = lambda.iter().sum::<f64>() / k;
    let bias = (1.0 - lbar) * kappa * sup_d + (1.0 - kappa).abs() * d + mu * sigma2;
    let variance = 2.0 / k * (kappa * sup_d + mu * sigma2).powi(2);
    Ok(TheoremBounds { bias, variance })
}

/// All theory quantities for one flat-spectrum parameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurves {
    pub alpha: f64,
    pub q_over_sigma2: f64,
    pub rw: f64,
    pub n_windows: usize,
    pub n: usize,
    pub zeta: f64,
    pub tau: f64,
    pub eta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub kappa_lower: f64,
    pub kappa_upper: f64,
    pub bias_bound: f64,
    pub variance_bound: f64,
}

impl TheoryCurves {
    /// Evaluate at level `D = q/(1−α²)` with unit σ² and the given taper eigenvalues.
    pub fn evaluate(alpha: f64, q_over_sigma2: f64, rw: f64, n: usize, n_windows: usize, lambda: &[f64]) -> Result<Self> {
        let sol = flat_spectrum_gamma(alpha, q_over_sigma2, rw)?;
        let wp = WeightParams { gamma: sol.gamma, alpha, eta: sol.eta };
        let (kappa, mu) = kappa_mu(&wp, n, n_windows)?;
        let (kappa_lower, kappa_upper) = if sol.gamma > 0.0 && alpha > 0.0 {
            kappa_bounds(sol.gamma, alpha, n, n_windows)?
        } else {
            (kappa, kappa)
        };
        let d = q_over_sigma2 / (1.0 - alpha * alpha);
        let tb = theorem_bounds(d, d, 1.0, lambda, kappa, mu)?;
        Ok(Self {
            alpha,
            q_over_sigma2,
            rw,
            n_windows,
            n,
            zeta: sol.zeta,
            tau: sol.tau,
            eta: sol.eta,
            gamma: sol.gamma,
            kappa,
            mu,
            kappa_lower,
            kappa_upper,
            bias_bound: tb.bias,
            variance_bound: tb.variance,
        })
    }
}

/// Steady-state gains of one taper's fitted model, per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `Λ_j`, the geometric decay across windows.
    pub lambda: Vec<f64>,
    /// `Γ_j`, the gain applied to each window's eigen-coefficient.
    pub gamma: Vec<f64>,
}

/// Steady-state filter bank for model `(α, Q, σ²)` in eigen-coefficient units.
pub fn equivalent_filters(alpha: f64, q: &[f64], sigma2: f64) -> Result<FilterBank> {
    if alpha == 0.0 && q.iter().any(|&v| v <= 0.0) {
        return Err(invalid("degenerate steady state: α = 0 with zero state noise"));
    }
    let mut lambda = Vec::with_capacity(q.len());
    let mut gamma = Vec::with_capacity(q.len());
    for &qj in q {
        let ss = steady_state_scalar(alpha, qj, sigma2, 1.0)?;
        lambda.push(ss.lambda);
        gamma.push(ss.gamma);
    }
    Ok(FilterBank { lambda, gamma })
}

impl FilterBank {
    /// Time-domain filter `h` over all `N·W` samples with `x_{n,j} = Σ_t h_t y_t`.
    ///
    /// `n` is the zero-based target window.
    pub fn filter(&self, taps: &TaperSet, k: usize, j: usize, n: usize, n_windows: usize, grid: &FrequencyGrid) -> Vec<Complex64> {
        let w = taps.w;
        let f = grid.cycles(j);
        let mut h = vec![Complex64::new(0.0, 0.0); n_windows * w];
        for s in 0..n_windows {
            let weight = self.lambda[j].powi(s.abs_diff(n) as i32) * self.gamma[j];
            if weight == 0.0 {
                continue;
            }
            for l in 0..w {
                let phase = -2.0 * std::f64::consts::PI * ((f * l as f64).fract());
                h[s * w + l] = Complex64::from_polar(weight * taps.u[k][l], phase);
            }
        }
        h
    }

    /// Filter-bank estimate of window `n` from the eigen-coefficients of every window.
    pub fn apply(&self, z: &[CVec], n: usize) -> CVec {
        let j = self.lambda.len();
        CVec::from_fn(j, |b, _| {
            z.iter()
                .enumerate()
                .map(|(s, zs)| zs[b] * (self.lambda[b].powi(s.abs_diff(n) as i32) * self.gamma[b]))
                .sum()
        })
    }
}

/// `Σ_t h_t y_t`.
pub fn apply_filter(h: &[Complex64], data: &[f64]) -> Complex64 {
    h.iter().zip(data).map(|(a, &y)| a * y).sum()
}

/// Energy of a filter in dB, `10 log10 Σ|h|²`.
pub fn filter_gain_db(h: &[Complex64]) -> f64 {
    10.0 * h.iter().map(|c| c.norm_sqr()).sum::<f64>().log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_gives_eta_squared() {
        let p = WeightParams { gamma: 0.0, alpha: 0.6, eta: 0.8 };
        let (k, m) = kappa_mu(&p, 5, 10).unwrap();
        assert!((k - 0.64).abs() < 1e-15 && (m - 0.64).abs() < 1e-15);
    }

    #[test]
    fn t0_matches_direct_sum() {
        for &(g, n, nn) in &[(0.3, 1, 10), (0.7, 50, 100), (0.95, 3, 7)] {
            let direct: f64 = (1..=nn).map(|s: usize| (g * g as f64).powi(s.abs_diff(n) as i32)).sum();
            assert!((t0_closed(g, n, nn) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_flags_gamma() {
        let sol = flat_spectrum_gamma(0.0, 10.0, 1.0).unwrap();
        assert!(!sol.gamma_defined);
        assert!((sol.eta - 10.0 / 11.0).abs() < 1e-14);
        assert!(flat_spectrum_gamma(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn bounds_reduce_to_multitaper() {
        let b = theorem_bounds(2.0, 2.0, 0.0, &[1.0, 1.0], 1.0, 1.0).unwrap();
        assert_eq!(b.bias, 0.0);
        assert!((b.variance - 4.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_filter_is_single_window() {
        let bank = equivalent_filters(0.0, &[1.0, 2.0], 1.0).unwrap();
        assert!(bank.lambda.iter().all(|&l| l == 0.0));
        let taps = crate::tapers::compute_dpss(8, 0.25, 1).unwrap();
        let grid = FrequencyGrid::new(2, 1.0).unwrap();
        let h = bank.filter(&taps, 0, 1, 1, 3, &grid);
        assert!(h[..8].iter().chain(&h[16..]).all(|c| c.norm() == 0.0));
        assert!((h[8].re - bank.gamma[1] * taps.u[0][0]).abs() < 1e-15);
    }
}
