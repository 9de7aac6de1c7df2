//! Synthetic data: the amplitude- and frequency-modulated benchmark process
//! with its ground-truth spectrogram, and simulators for the state-space models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::lgss::{Covariance, InitialState, StateSpaceModel};

type CVec = DVector<Complex64>;

const BURN_IN: usize = 4000;
const IMPULSE_LEN: usize = 20_000;
const BIN_SUBSAMPLES: usize = 32;

/// Parameters of the benchmark process
/// `y_t = y⁽¹⁾_t cos(2πf₀t) + y⁽²⁾_t + σ v_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sample_rate: f64,
    /// Seconds.
    pub duration: f64,
    /// Amplitude-modulation frequency in Hz.
    pub f0: f64,
    /// Centre of the AR(6) band in Hz (triple pole pair).
    pub ar_center: f64,
    pub ar_radius: f64,
    /// First centre frequency of the ARMA(6,4) component in Hz.
    pub fm_start: f64,
    /// Frequency increment per step in Hz.
    pub fm_step: f64,
    /// Seconds between steps.
    pub fm_period: f64,
    pub arma_radius: f64,
    /// Signal-to-noise ratio in dB; `f64::INFINITY` gives noiseless data.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sample_rate: 50.0,
            duration: 600.0,
            f0: 0.02,
            ar_center: 11.0,
            ar_radius: 0.98,
            fm_start: 5.0,
            fm_step: 0.48,
            fm_period: 600.0 / 23.0,
            arma_radius: 0.98,
            snr_db: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn n_steps(&self) -> usize {
        ((self.duration / self.fm_period) - 1e-9).ceil().max(1.0) as usize
    }

    /// Segment index active at sample `i`.
    pub fn step_at(&self, i: usize) -> usize {
        let m = ((i as f64 / self.sample_rate) / self.fm_period + 1e-9).floor() as usize;
        m.min(self.n_steps() - 1)
    }

    pub fn step_frequency(&self, m: usize) -> f64 {
        self.fm_start + self.fm_step * m as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.duration > 0.0) {
            return Err(invalid("sample rate and duration must be positive"));
        }
        if !(self.fm_period > 0.0) {
            return Err(invalid("step period must be positive"));
        }
        for r in [self.ar_radius, self.arma_radius] {
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid(format!("pole radius {r} must lie in (0, 1)")));
            }
        }
        let top = self
            .ar_center
            .max(self.step_frequency(self.n_steps() - 1))
            .max(self.fm_start)
            + self.f0.abs();
        if !(2.0 * top < self.sample_rate) {
            return Err(invalid(format!(
                "sample rate {} Hz cannot represent content up to {top} Hz",
                self.sample_rate
            )));
        }
        if self.fm_start <= 0.0 || self.ar_center <= 0.0 {
            return Err(invalid("band centres must be positive"));
        }
        if self.snr_db.is_nan() {
            return Err(invalid("snr_db must be a number"));
        }
        Ok(())
    }
}

/// One coefficient regime of a piecewise-constant ARMA filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaSegment {
    /// First sample index at which the regime is active.
    pub start: usize,
    /// Denominator `1 + a₁z⁻¹ + …`, with `a[0] = 1`.
    pub a: Vec<f64>,
    /// Numerator `b₀ + b₁z⁻¹ + …`.
    pub b: Vec<f64>,
}

/// Polynomial in z⁻¹ with roots `root` and `conj(root)`, each of multiplicity `mult`.
pub fn conjugate_pair_poly(root: Complex64, mult: usize) -> Vec<f64> {
    let quad = [1.0, -2.0 * root.re, root.norm_sqr()];
    let mut p = vec![1.0];
    for _ in 0..mult {
        p = poly_mul(&p, &quad);
    }
    p
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(p: &[f64], z_inv: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z_inv + c)
}

/// Largest root modulus of `1 + a₁z⁻¹ + … + a_p z⁻ᵖ`.
pub fn max_pole_modulus(a: &[f64]) -> f64 {
    let p = a.len() - 1;
    if p == 0 {
        return 0.0;
    }
    let comp = DMatrix::from_fn(p, p, |i, j| if i == 0 { -a[j + 1] / a[0] } else if i == j + 1 { 1.0 } else { 0.0 });
    comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Sum of squared impulse-response coefficients of `b/a`.
pub fn impulse_energy(a: &[f64], b: &[f64]) -> f64 {
    let mut e = vec![0.0; IMPULSE_LEN];
    e[0] = 1.0;
    let seg = [ArmaSegment { start: 0, a: a.to_vec(), b: b.to_vec() }];
    filter_piecewise(&seg, &e).iter().map(|v| v * v).sum()
}

/// PSD per cycle/sample of `b/a` driven by unit white noise.
pub fn arma_psd(a: &[f64], b: &[f64], f: f64) -> f64 {
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f);
    (poly_eval(b, z_inv) / poly_eval(a, z_inv)).norm_sqr()
}

/// Direct-form filtering with coefficients switched at segment starts; the
/// input and output histories carry across switches.
pub fn filter_piecewise(schedule: &[ArmaSegment], e: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; e.len()];
    let mut seg = 0;
    for t in 0..e.len() {
        while seg + 1 < schedule.len() && schedule[seg + 1].start <= t {
            seg += 1;
        }
        let s = &schedule[seg];
        let mut acc = 0.0;
        for (i, &bi) in s.b.iter().enumerate() {
            if t >= i {
                acc += bi * e[t - i];
            }
        }
        for (i, &ai) in s.a.iter().enumerate().skip(1) {
            if t >= i {
                acc -= ai * y[t - i];
            }
        }
        y[t] = acc / s.a[0];
    }
    y
}

fn check_schedule(schedule: &[ArmaSegment]) -> Result<()> {
    if schedule.is_empty() || schedule[0].start != 0 {
        return Err(invalid("schedule must start with a segment at sample 0"));
    }
    for w in schedule.windows(2) {
        if w[1].start <= w[0].start {
            return Err(invalid("segment starts must increase"));
        }
    }
    for s in schedule {
        if s.a.is_empty() || s.a[0] == 0.0 || s.b.is_empty() {
            return Err(invalid("segment needs a[0] ≠ 0 and a non-empty numerator"));
        }
        let m = max_pole_modulus(&s.a);
        if !(m < 1.0) {
            return Err(invalid(format!("unstable segment starting at {}: pole modulus {m}", s.start)));
        }
    }
    Ok(())
}

/// Simulate a piecewise ARMA process driven by unit Gaussian noise.
///
/// The filter is run for a burn-in period with the first segment's
/// coefficients before sample 0.
pub fn ar_arma_simulate(schedule: &[ArmaSegment], t_len: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ar_arma_simulate_with(schedule, t_len, &mut rng)
}

pub fn ar_arma_simulate_with<R: Rng>(schedule: &[ArmaSegment], t_len: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_schedule(schedule)?;
    let e: Vec<f64> = (0..BURN_IN + t_len).map(|_| StandardNormal.sample(rng)).collect();
    let shifted: Vec<ArmaSegment> = schedule
        .iter()
        .map(|s| ArmaSegment { start: s.start + if s.start == 0 { 0 } else { BURN_IN }, ..s.clone() })
        .collect();
    let y = filter_piecewise(&shifted, &e);
    Ok(y[BURN_IN..].to_vec())
}

/// Realization of the benchmark process.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    /// Sample times in seconds.
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// Noiseless signal.
    pub clean: Vec<f64>,
    /// Standard deviation of the additive noise.
    pub sigma: f64,
}

struct Components {
    ar: (Vec<f64>, Vec<f64>),
    arma: Vec<(Vec<f64>, Vec<f64>)>,
}

fn components(spec: &SyntheticSpec) -> Components {
    let fs = spec.sample_rate;
    let ar_a = conjugate_pair_poly(Complex64::from_polar(spec.ar_radius, 2.0 * PI * spec.ar_center / fs), 3);
    let ar = normalized(ar_a, vec![1.0]);
    // MA part: double zeros at z = ±1, i.e. (1 − z⁻²)².
    let ma = vec![1.0, 0.0, -2.0, 0.0, 1.0];
    let arma = (0..spec.n_steps())
        .map(|m| {
            let a = conjugate_pair_poly(Complex64::from_polar(spec.arma_radius, 2.0 * PI * spec.step_frequency(m) / fs), 3);
            normalized(a, ma.clone())
        })
        .collect();
    Components { ar, arma }
}

fn normalized(a: Vec<f64>, b: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let g = impulse_energy(&a, &b).sqrt();
    let b = b.iter().map(|v| v / g).collect();
    (a, b)
}

/// Generate the benchmark process.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let t_len = spec.n_samples();
    let comp = components(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let ar_sched = [ArmaSegment { start: 0, a: comp.ar.0.clone(), b: comp.ar.1.clone() }];
    let y1 = ar_arma_simulate_with(&ar_sched, t_len, &mut rng)?;
    let mut sched = Vec::with_capacity(comp.arma.len());
    let mut start = 0;
    for (m, (a, b)) in comp.arma.iter().enumerate() {
        if m > 0 {
            start = (0..t_len).find(|&i| spec.step_at(i) >= m).unwrap_or(t_len + m);
        }
        sched.push(ArmaSegment { start, a: a.clone(), b: b.clone() });
    }
    rng.set_stream(1);
    let y2 = ar_arma_simulate_with(&sched, t_len, &mut rng)?;
    let fs = spec.sample_rate;
    let t: Vec<f64> = (0..t_len).map(|i| i as f64 / fs).collect();
    let clean: Vec<f64> = (0..t_len).map(|i| y1[i] * (2.0 * PI * spec.f0 * t[i]).cos() + y2[i]).collect();
    let power = clean.iter().map(|v| v * v).sum::<f64>() / t_len as f64;
    let (y, sigma) = if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
        (clean.clone(), 0.0)
    } else {
        let sigma = (power * 10f64.powf(-spec.snr_db / 10.0)).sqrt();
        rng.set_stream(2);
        let y = clean
            .iter()
            .map(|v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                v + sigma * g
            })
            .collect();
        (y, sigma)
    };
    Ok(Synthetic { t, y, clean, sigma })
}

/// Noiseless time-varying PSD (per cycle/sample) on the grid `f_j = j/J`, one row per
/// non-overlapping window of `w` samples.
pub fn ground_truth(spec: &SyntheticSpec, w: usize, j: usize) -> Result<DMatrix<f64>> {
    ground_truth_windows(spec, w, j, &window_starts_for(spec, w, w))
}

fn window_starts_for(spec: &SyntheticSpec, w: usize, hop: usize) -> Vec<usize> {
    crate::mtm::window_starts(spec.n_samples(), w, hop)
}

/// Mean of `psd` over each bin `[f_j − 1/2J, f_j + 1/2J)`; the sharp resonances
/// are not resolved by point samples on a coarse grid.
fn bin_average(j: usize, psd: impl Fn(f64) -> f64) -> Vec<f64> {
    let jf = j as f64;
    (0..j)
        .map(|b| {
            (0..BIN_SUBSAMPLES)
                .map(|i| psd((b as f64 + (i as f64 + 0.5) / BIN_SUBSAMPLES as f64 - 0.5) / jf))
                .sum::<f64>()
                / BIN_SUBSAMPLES as f64
        })
        .collect()
}

/// Ground truth for windows starting at the given sample indices.
///
/// Each entry is the PSD averaged over its frequency bin, so a row sums to
/// `J` times the window variance.
pub fn ground_truth_windows(spec: &SyntheticSpec, w: usize, j: usize, starts: &[usize]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if w == 0 || j == 0 {
        return Err(invalid("window length and grid size must be positive"));
    }
    let comp = components(spec);
    let fs = spec.sample_rate;
    let f0 = spec.f0 / fs;
    let s1 = |f: f64| arma_psd(&comp.ar.0, &comp.ar.1, f);
    let s1_base = bin_average(j, |f| s1(f));
    let s1_lo = bin_average(j, |f| s1(f - f0));
    let s1_hi = bin_average(j, |f| s1(f + f0));
    let s2: Vec<Vec<f64>> = comp.arma.iter().map(|(a, bb)| bin_average(j, |f| arma_psd(a, bb, f))).collect();
    let mut out = DMatrix::zeros(starts.len(), j);
    for (row, &st) in starts.iter().enumerate() {
        let mut cos_mean = 0.0;
        let mut weights = vec![0.0; comp.arma.len()];
        for i in st..st + w {
            cos_mean += (4.0 * PI * f0 * i as f64).cos();
            weights[spec.step_at(i)] += 1.0;
        }
        cos_mean /= w as f64;
        for b in 0..j {
            let am = 0.25 * (s1_lo[b] + s1_hi[b]) + 0.5 * cos_mean * s1_base[b];
            let fm: f64 = weights.iter().zip(&s2).map(|(wt, s)| wt * s[b]).sum::<f64>() / w as f64;
            out[(row, b)] = am + fm;
        }
    }
    Ok(out)
}

/// Theoretical variance of the noiseless signal in a window starting at `start`.
pub fn window_variance(spec: &SyntheticSpec, start: usize, w: usize) -> f64 {
    let f0 = spec.f0 / spec.sample_rate;
    let cos2: f64 = (start..start + w).map(|i| (2.0 * PI * f0 * i as f64).cos().powi(2)).sum::<f64>() / w as f64;
    cos2 + 1.0
}

/// Simulate `x_n = α x_{n-1} + w_n`, `w_n ~ CN(0, diag q)` from a given `x_0`; q may be zero.
pub fn simulate_ar1_states(alpha: f64, q: &[f64], x0: &CVec, n: usize, seed: u64) -> Result<Vec<CVec>> {
    if x0.len() != q.len() {
        return Err(mismatch("x0 and q differ in length"));
    }
    if q.iter().any(|&v| v < 0.0) {
        return Err(invalid("state noise variances must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![x0.clone()];
    for t in 1..=n {
        let next = CVec::from_fn(q.len(), |b, _| x[t - 1][b] * alpha + complex_normal(&mut rng, q[b]));
        x.push(next);
    }
    Ok(x)
}

fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    if var == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let s = (0.5 * var).sqrt();
    let g1: f64 = StandardNormal.sample(rng);
    let g2: f64 = StandardNormal.sample(rng);
    Complex64::new(s * g1, s * g2)
}

/// Model-matched data: returns observations `ỹ_1..ỹ_N` and latent states `x_0..x_N`.
pub fn gen_statespace_data(model: &StateSpaceModel, init: &InitialState, n: usize, seed: u64) -> Result<(Vec<CVec>, Vec<CVec>)> {
    let j = model.j();
    if init.mean.len() != j {
        return Err(mismatch("initial state dimension differs from J"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = match &init.cov {
        Covariance::Diag(d) => CVec::from_fn(j, |b, _| init.mean[b] + complex_normal(&mut rng, d[b])),
        Covariance::Dense(m) => {
            let chol = m.clone().cholesky().ok_or_else(|| crate::Error::NotPositiveDefinite("initial covariance".into()))?;
            let g = CVec::from_fn(j, |_, _| complex_normal(&mut rng, 1.0));
            &init.mean + chol.l() * g
        }
    };
    let mut states = vec![x0];
    let mut obs = Vec::with_capacity(n);
    for t in 1..=n {
        let x = CVec::from_fn(j, |b, _| states[t - 1][b] * model.alpha + complex_normal(&mut rng, model.q[b]));
        let noise = CVec::from_fn(model.w(), |_, _| complex_normal(&mut rng, model.sigma2));
        obs.push(&model.f * &x + noise);
        states.push(x);
    }
    Ok((obs, states))
}

/// Log-domain model: `s_n = θ s_{n-1} + e_n`, `ψ_n = s_n + log χ²_{2ν}`.
///
/// Returns `ψ` (N×J) and `s` ((N+1)×J, row 0 = `s_0`).
pub fn simulate_log_model(theta: f64, r: &[f64], nu: f64, s0: &[f64], n: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if r.len() != s0.len() {
        return Err(mismatch("r and s0 differ in length"));
    }
    if !(nu > 0.0) || r.iter().any(|&v| v < 0.0) {
        return Err(invalid("need ν > 0 and r ≥ 0"));
    }
    let j = r.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = Gamma::new(nu, 2.0).map_err(|e| invalid(e.to_string()))?;
    let mut s = DMatrix::zeros(n + 1, j);
    let mut psi = DMatrix::zeros(n, j);
    for b in 0..j {
        s[(0, b)] = s0[b];
    }
    for t in 1..=n {
        for b in 0..j {
            let g: f64 = StandardNormal.sample(&mut rng);
            s[(t, b)] = theta * s[(t - 1, b)] + r[b].sqrt() * g;
            let x: f64 = chi.sample(&mut rng);
            psi[(t - 1, b)] = s[(t, b)] + x.ln();
        }
    }
    Ok((psi, s))
}
