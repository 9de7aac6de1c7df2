//! Complex linear-Gaussian state-space engine.
//!
//! Model: `x_n = α x_{n-1} + w_n`, `w_n ~ CN(0, diag Q)` and
//! `ỹ_n = F x_n + v_n`, `v_n ~ CN(0, σ² I)`, for n = 1..N, with a Gaussian
//! prior on `x_0`. All result vectors are indexed 0..=N, so entry 0 holds the
//! prior (filtered) or the smoothed initial state.
//!
//! When `FᴴF = c·I` every covariance stays diagonal and the recursions split
//! into J scalar filters on `z_n = Fᴴỹ_n / c` with noise variance `σ²/c`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, mismatch, Error, Result};

const GRAM_TOL: f64 = 1e-8;
const ALPHA_MAX: f64 = 1.0;

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// State-space model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub alpha: f64,
    pub q: Vec<f64>,
    pub sigma2: f64,
    /// W×J observation matrix.
    pub f: CMat,
}

impl StateSpaceModel {
    pub fn new(alpha: f64, q: Vec<f64>, sigma2: f64, f: CMat) -> Result<Self> {
        if !(0.0..ALPHA_MAX).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        if q.len() != f.ncols() {
            return Err(mismatch(format!("Q has {} entries, F has {} columns", q.len(), f.ncols())));
        }
        if q.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("Q entries must be positive"));
        }
        Ok(Self { alpha, q, sigma2, f })
    }

    /// Fourier observation matrix `F_{l,j} = exp(i2π l j / J)`, l = 0..W-1, j = 0..J-1.
    pub fn fourier(w: usize, j: usize) -> CMat {
        CMat::from_fn(w, j, |l, jj| {
            let phase = 2.0 * PI * ((l * jj) % j) as f64 / j as f64;
            Complex64::from_polar(1.0, phase)
        })
    }

    pub fn w(&self) -> usize {
        self.f.nrows()
    }

    pub fn j(&self) -> usize {
        self.f.ncols()
    }

    /// Returns `c` when `FᴴF = c·I` within tolerance.
    pub fn gram_scale(&self) -> Option<f64> {
        let gram = self.f.adjoint() * &self.f;
        let scale = gram[(0, 0)].re;
        if !(scale > 0.0) {
            return None;
        }
        let j = self.j();
        for a in 0..j {
            for b in 0..j {
                let target = if a == b { scale } else { 0.0 };
                if (gram[(a, b)] - c(target)).norm() > GRAM_TOL * scale {
                    return None;
                }
            }
        }
        Some(scale)
    }
}

/// Gaussian prior on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub mean: CVec,
    pub cov: Covariance,
}

impl InitialState {
    /// `x_0 ~ CN(0, diag(v))`.
    pub fn zero_mean(v: &[f64]) -> Self {
        Self {
            mean: CVec::zeros(v.len()),
            cov: Covariance::Diag(DVector::from_column_slice(v)),
        }
    }
}

/// A covariance, stored diagonally on the fast path.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diag(DVector<f64>),
    Dense(CMat),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diag(d) => d.len(),
            Self::Dense(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Self::Diag(d) => d.iter().copied().collect(),
            Self::Dense(m) => (0..m.nrows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn to_dense(&self) -> CMat {
        match self {
            Self::Diag(d) => CMat::from_diagonal(&d.map(c)),
            Self::Dense(m) => m.clone(),
        }
    }

    /// Smallest eigenvalue of the Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Self::Diag(d) => d.min(),
            Self::Dense(m) => hermitian_min_eigenvalue(m),
        }
    }
}

/// Smallest eigenvalue of a Hermitian matrix via its real symmetric embedding.
pub fn hermitian_min_eigenvalue(m: &CMat) -> f64 {
    let n = m.nrows();
    let real = DMatrix::from_fn(2 * n, 2 * n, |a, b| {
        let (i, j) = (a % n, b % n);
        let z = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        match (a < n, b < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    real.symmetric_eigen().eigenvalues.min()
}

/// Which implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// Diagonal recursions when `FᴴF ∝ I`, dense otherwise.
    Auto,
    Dense,
}

/// Filtered, predicted and smoothed moments for windows 0..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherResult {
    pub x_filt: Vec<CVec>,
    pub p_filt: Vec<Covariance>,
    /// `p_pred[n] = Σ_{n|n-1}`; entry 0 repeats the prior covariance.
    pub p_pred: Vec<Covariance>,
    pub x_pred: Vec<CVec>,
    pub x_smooth: Vec<CVec>,
    pub p_smooth: Vec<Covariance>,
    /// `p_cross[n] = Cov(x_n, x_{n-1} | all data)` for n ≥ 1; entry 0 is zero.
    pub p_cross: Vec<Covariance>,
    /// Smoother gains `B_n`, n = 0..N-1.
    pub gains: Vec<Covariance>,
    /// Observed-data negative log-likelihood `-log p(ỹ_1..ỹ_N)`.
    pub nll: f64,
    /// `Some(c)` when the diagonal path was used.
    pub gram_scale: Option<f64>,
}

impl SmootherResult {
    pub fn n_windows(&self) -> usize {
        self.x_filt.len() - 1
    }

    pub fn is_smoothed(&self) -> bool {
        !self.x_smooth.is_empty()
    }
}

fn check_obs(model: &StateSpaceModel, obs: &[CVec], init: &InitialState) -> Result<()> {
    if obs.is_empty() {
        return Err(invalid("at least one observation window is required"));
    }
    for (n, y) in obs.iter().enumerate() {
        if y.len() != model.w() {
            return Err(mismatch(format!("window {} has {} samples, model expects {}", n + 1, y.len(), model.w())));
        }
    }
    if init.mean.len() != model.j() || init.cov.dim() != model.j() {
        return Err(mismatch("initial state dimension differs from J"));
    }
    let min_eig = init.cov.min_eigenvalue();
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("initial covariance (min eigenvalue {min_eig:e})")));
    }
    Ok(())
}

/// Forward Kalman filter.
pub fn kalman_forward(model: &StateSpaceModel, obs: &[CVec], init: &InitialState) -> Result<SmootherResult> {
    kalman_forward_with(model, obs, init, Path::Auto)
}

pub fn kalman_forward_with(model: &StateSpaceModel, obs: &[CVec], init: &InitialState, path: Path) -> Result<SmootherResult> {
    check_obs(model, obs, init)?;
    let scale = match path {
        Path::Auto => model.gram_scale(),
        Path::Dense => None,
    };
    match (scale, &init.cov) {
        (Some(cs), Covariance::Diag(p0)) => {
            let fh = model.f.adjoint();
            let z: Vec<CVec> = obs.iter().map(|y| (&fh * y) / c(cs)).collect();
            let mut res = diag_forward(model.alpha, &model.q, model.sigma2 / cs, &z, &init.mean, p0.as_slice())?;
            // Add the part of the likelihood living outside range(F).
            let w = model.w() as f64;
            let j = model.j() as f64;
            let mut resid = 0.0;
            for (y, zn) in obs.iter().zip(&z) {
                let proj = &model.f * zn;
                resid += (y - proj).norm_squared();
            }
            let nwin = obs.len() as f64;
            res.nll += nwin * (j * cs.ln() + (w - j) * (PI * model.sigma2).ln()) + resid / model.sigma2;
            res.gram_scale = Some(cs);
            Ok(res)
        }
        _ => dense_forward(model, obs, init),
    }
}

/// Backward fixed-interval smoother.
pub fn fis_backward(res: &mut SmootherResult, model: &StateSpaceModel) -> Result<()> {
    match res.gram_scale {
        Some(_) => diag_backward(res, model.alpha),
        None => dense_backward(res, model.alpha),
    }
}

/// Lag-one cross-covariances `Cov(x_n, x_{n-1} | all) = Σ_{n|N} B_{n-1}ᴴ`.
pub fn covariance_smooth(res: &mut SmootherResult) -> Result<()> {
    if !res.is_smoothed() {
        return Err(invalid("run the backward pass first"));
    }
    let n = res.n_windows();
    let j = res.x_filt[0].len();
    let mut cross = Vec::with_capacity(n + 1);
    cross.push(match res.gram_scale {
        Some(_) => Covariance::Diag(DVector::zeros(j)),
        None => Covariance::Dense(CMat::zeros(j, j)),
    });
    for t in 1..=n {
        let entry = match (&res.p_smooth[t], &res.gains[t - 1]) {
            (Covariance::Diag(p), Covariance::Diag(g)) => Covariance::Diag(p.component_mul(g)),
            (p, g) => Covariance::Dense(p.to_dense() * g.to_dense().adjoint()),
        };
        cross.push(entry);
    }
    res.p_cross = cross;
    Ok(())
}

/// Forward filter, backward smoother and covariance smoother in one call.
pub fn smooth(model: &StateSpaceModel, obs: &[CVec], init: &InitialState) -> Result<SmootherResult> {
    smooth_with(model, obs, init, Path::Auto)
}

pub fn smooth_with(model: &StateSpaceModel, obs: &[CVec], init: &InitialState, path: Path) -> Result<SmootherResult> {
    let mut res = kalman_forward_with(model, obs, init, path)?;
    fis_backward(&mut res, model)?;
    covariance_smooth(&mut res)?;
    Ok(res)
}

// ---------------------------------------------------------------------------
// Diagonal recursions

/// Per-bin smoother on direct observations `z_n = x_n + v_n`, `v_n ~ CN(0, r I)`.
///
/// This is the fast path used by the spectrogram estimators. Entry 0 of every
/// output vector refers to the initial state.
pub fn diag_smoother(alpha: f64, q: &[f64], r: f64, z: &[CVec], init_mean: &CVec, init_var: &[f64]) -> Result<SmootherResult> {
    if z.is_empty() {
        return Err(invalid("at least one observation window is required"));
    }
    let j = q.len();
    if z.iter().any(|v| v.len() != j) || init_mean.len() != j || init_var.len() != j {
        return Err(mismatch("observation, prior and Q dimensions differ"));
    }
    if !(r > 0.0) {
        return Err(invalid("observation noise must be positive"));
    }
    if init_var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite("initial variance".into()));
    }
    let mut res = diag_forward(alpha, q, r, z, init_mean, init_var)?;
    diag_backward(&mut res, alpha)?;
    covariance_smooth(&mut res)?;
    Ok(res)
}

fn diag_forward(alpha: f64, q: &[f64], r: f64, z: &[CVec], m0: &CVec, p0: &[f64]) -> Result<SmootherResult> {
    let j = q.len();
    let n = z.len();
    let mut x_filt = Vec::with_capacity(n + 1);
    let mut p_filt = Vec::with_capacity(n + 1);
    let mut x_pred = Vec::with_capacity(n + 1);
    let mut p_pred = Vec::with_capacity(n + 1);
    x_filt.push(m0.clone());
    p_filt.push(Covariance::Diag(DVector::from_column_slice(p0)));
    x_pred.push(m0.clone());
    p_pred.push(Covariance::Diag(DVector::from_column_slice(p0)));

    let mut m = m0.clone();
    let mut p = DVector::from_column_slice(p0);
    let mut nll = 0.0;
    for zn in z {
        let mut mp = CVec::zeros(j);
        let mut pp = DVector::zeros(j);
        for b in 0..j {
            mp[b] = m[b] * alpha;
            pp[b] = alpha * alpha * p[b] + q[b];
            let s = pp[b] + r;
            let e = zn[b] - mp[b];
            let gain = pp[b] / s;
            m[b] = mp[b] + e * gain;
            p[b] = pp[b] * r / s;
            nll += (PI * s).ln() + e.norm_sqr() / s;
        }
        x_pred.push(mp);
        p_pred.push(Covariance::Diag(pp));
        x_filt.push(m.clone());
        p_filt.push(Covariance::Diag(p.clone()));
    }
    if !nll.is_finite() {
        return Err(Error::NumericalFailure("non-finite likelihood in forward pass".into()));
    }
    Ok(SmootherResult {
        x_filt,
        p_filt,
        p_pred,
        x_pred,
        x_smooth: Vec::new(),
        p_smooth: Vec::new(),
        p_cross: Vec::new(),
        gains: Vec::new(),
        nll,
        gram_scale: Some(1.0),
    })
}

fn diag_backward(res: &mut SmootherResult, alpha: f64) -> Result<()> {
    let n = res.n_windows();
    let j = res.x_filt[0].len();
    let mut xs = vec![CVec::zeros(j); n + 1];
    let mut ps: Vec<DVector<f64>> = vec![DVector::zeros(j); n + 1];
    let mut gains = vec![Covariance::Diag(DVector::zeros(j)); n];
    xs[n] = res.x_filt[n].clone();
    ps[n] = DVector::from_vec(res.p_filt[n].diagonal());
    for t in (0..n).rev() {
        let pf = diag_of(&res.p_filt[t]);
        let pp = diag_of(&res.p_pred[t + 1]);
        let mut g = DVector::zeros(j);
        let mut x = res.x_filt[t].clone();
        let mut p = pf.clone();
        for b in 0..j {
            g[b] = alpha * pf[b] / pp[b];
            x[b] += (xs[t + 1][b] - res.x_pred[t + 1][b]) * g[b];
            p[b] += g[b] * g[b] * (ps[t + 1][b] - pp[b]);
        }
        xs[t] = x;
        ps[t] = p;
        gains[t] = Covariance::Diag(g);
    }
    res.x_smooth = xs;
    res.p_smooth = ps.into_iter().map(Covariance::Diag).collect();
    res.gains = gains;
    Ok(())
}

fn diag_of(cv: &Covariance) -> DVector<f64> {
    match cv {
        Covariance::Diag(d) => d.clone(),
        Covariance::Dense(m) => DVector::from_fn(m.nrows(), |i, _| m[(i, i)].re),
    }
}

// ---------------------------------------------------------------------------
// Dense recursions

fn hermitize(m: &mut CMat) {
    let h = (m.clone() + m.adjoint()) * c(0.5);
    *m = h;
}

fn cholesky(m: &CMat, what: &str) -> Result<nalgebra::linalg::Cholesky<Complex64, nalgebra::Dyn>> {
    m.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

fn dense_forward(model: &StateSpaceModel, obs: &[CVec], init: &InitialState) -> Result<SmootherResult> {
    let j = model.j();
    let w = model.w();
    let a = c(model.alpha);
    let qm = CMat::from_diagonal(&DVector::from_iterator(j, model.q.iter().map(|&v| c(v))));
    let fh = model.f.adjoint();
    let noise = CMat::identity(w, w) * c(model.sigma2);

    let p0 = init.cov.to_dense();
    let mut x_filt = vec![init.mean.clone()];
    let mut p_filt = vec![Covariance::Dense(p0.clone())];
    let mut x_pred = vec![init.mean.clone()];
    let mut p_pred = vec![Covariance::Dense(p0.clone())];
    let mut m = init.mean.clone();
    let mut p = p0;
    let mut nll = 0.0;
    for y in obs {
        let mp = &m * a;
        let mut pp = &p * c(model.alpha * model.alpha) + &qm;
        hermitize(&mut pp);
        let mut s = &model.f * &pp * &fh + &noise;
        hermitize(&mut s);
        let chol = cholesky(&s, "innovation covariance")?;
        let e = y - &model.f * &mp;
        let fp = &model.f * &pp;
        // K = Σ Fᴴ S⁻¹ = (S⁻¹ F Σ)ᴴ since S and Σ are Hermitian.
        let gain = chol.solve(&fp).adjoint();
        m = &mp + &gain * &e;
        p = &pp - &gain * fp;
        hermitize(&mut p);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        let quad = (e.adjoint() * chol.solve(&e))[(0, 0)].re;
        nll += w as f64 * PI.ln() + logdet + quad;
        x_pred.push(mp);
        p_pred.push(Covariance::Dense(pp));
        x_filt.push(m.clone());
        p_filt.push(Covariance::Dense(p.clone()));
    }
    if !nll.is_finite() {
        return Err(Error::NumericalFailure("non-finite likelihood in forward pass".into()));
    }
    Ok(SmootherResult {
        x_filt,
        p_filt,
        p_pred,
        x_pred,
        x_smooth: Vec::new(),
        p_smooth: Vec::new(),
        p_cross: Vec::new(),
        gains: Vec::new(),
        nll,
        gram_scale: None,
    })
}

fn dense_backward(res: &mut SmootherResult, alpha: f64) -> Result<()> {
    let n = res.n_windows();
    let mut xs = vec![res.x_filt[n].clone(); n + 1];
    let mut ps = vec![res.p_filt[n].to_dense(); n + 1];
    let mut gains = Vec::with_capacity(n);
    for t in (0..n).rev() {
        let pf = res.p_filt[t].to_dense();
        let pp = res.p_pred[t + 1].to_dense();
        let chol = cholesky(&pp, "predicted covariance")?;
        // B = α Σ_{t|t} Σ_{t+1|t}⁻¹ = α (Σ_{t+1|t}⁻¹ Σ_{t|t})ᴴ.
        let g = chol.solve(&pf).adjoint() * c(alpha);
        let x = &res.x_filt[t] + &g * (&xs[t + 1] - &res.x_pred[t + 1]);
        let mut p = &pf + &g * (&ps[t + 1] - &pp) * g.adjoint();
        hermitize(&mut p);
        xs[t] = x;
        ps[t] = p;
        gains.push(Covariance::Dense(g));
    }
    gains.reverse();
    res.x_smooth = xs;
    res.p_smooth = ps.into_iter().map(Covariance::Dense).collect();
    res.gains = gains;
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch solve

/// Exact joint posterior computed from the dense block-tridiagonal precision.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosterior {
    /// Means for n = 0..N.
    pub mean: Vec<CVec>,
    /// Marginal covariances for n = 0..N.
    pub cov: Vec<CMat>,
    /// `cross[n] = Cov(x_n, x_{n-1})` for n ≥ 1; entry 0 is zero.
    pub cross: Vec<CMat>,
}

/// Largest `(N+1)·J` accepted by [`batch_map_solve`].
pub const BATCH_MAX_DIM: usize = 4096;

/// Minimise the joint negative log-posterior of `x_0..x_N` by a direct solve.
pub fn batch_map_solve(model: &StateSpaceModel, obs: &[CVec], init: &InitialState) -> Result<BatchPosterior> {
    check_obs(model, obs, init)?;
    let j = model.j();
    let n = obs.len();
    let dim = (n + 1) * j;
    if dim > BATCH_MAX_DIM {
        return Err(invalid(format!("batch solve limited to {BATCH_MAX_DIM} unknowns, got {dim}")));
    }
    let qinv = CMat::from_diagonal(&DVector::from_iterator(j, model.q.iter().map(|&v| c(1.0 / v))));
    let p0 = init.cov.to_dense();
    let p0_chol = cholesky(&p0, "initial covariance")?;
    let p0inv = p0_chol.inverse();
    let info = model.f.adjoint() * &model.f / c(model.sigma2);
    let a = model.alpha;

    let mut h = CMat::zeros(dim, dim);
    let mut rhs = CVec::zeros(dim);
    let add_block = |h: &mut CMat, r: usize, col: usize, blk: &CMat| {
        let mut view = h.view_mut((r * j, col * j), (j, j));
        view += blk;
    };
    add_block(&mut h, 0, 0, &p0inv);
    rhs.rows_mut(0, j).copy_from(&(&p0inv * &init.mean));
    for t in 1..=n {
        add_block(&mut h, t, t, &qinv);
        add_block(&mut h, t - 1, t - 1, &(&qinv * c(a * a)));
        add_block(&mut h, t, t - 1, &(&qinv * c(-a)));
        add_block(&mut h, t - 1, t, &(&qinv * c(-a)));
        add_block(&mut h, t, t, &info);
        let b = model.f.adjoint() * &obs[t - 1] / c(model.sigma2);
        let mut seg = rhs.rows_mut(t * j, j);
        seg += b;
    }
    let chol = cholesky(&h, "posterior precision")?;
    let mean_all = chol.solve(&rhs);
    let cov_all = chol.inverse();
    let mean = (0..=n).map(|t| mean_all.rows(t * j, j).into_owned()).collect();
    let cov = (0..=n).map(|t| cov_all.view((t * j, t * j), (j, j)).into_owned()).collect();
    let mut cross = vec![CMat::zeros(j, j)];
    for t in 1..=n {
        cross.push(cov_all.view((t * j, (t - 1) * j), (j, j)).into_owned());
    }
    Ok(BatchPosterior { mean, cov, cross })
}

// ---------------------------------------------------------------------------
// Steady state

/// Fixed point of the Riccati recursion and the induced steady-state gains.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Predicted covariance fixed point `Σ`.
    pub sigma: CMat,
    /// Filtered covariance fixed point `Σ∞`.
    pub sigma_inf: CMat,
    /// `Λ = α Σ∞ Σ⁻¹`.
    pub lambda: CMat,
    /// `Γ = Σ∞ / σ²`, the gain applied to `Fᴴỹ`.
    pub gamma: CMat,
    pub iterations: usize,
    pub residual: f64,
}

/// Scalar steady state for one frequency bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSteadyState {
    /// Predicted variance `ζ`.
    pub zeta: f64,
    /// Filtered variance `τ`.
    pub tau: f64,
    pub lambda: f64,
    /// Gain applied to the observation divided by σ².
    pub gamma: f64,
}

const RICCATI_MAX_ITER: usize = 100_000;
const RICCATI_TOL: f64 = 1e-13;

/// Scalar Riccati fixed point for `ζ = α²(1/ζ + info/σ²)⁻¹ + q`.
///
/// `info` is the observation information per window (`c` when `FᴴF = c I`).
pub fn steady_state_scalar(alpha: f64, q: f64, sigma2: f64, info: f64) -> Result<ScalarSteadyState> {
    if !(0.0..1.0).contains(&alpha) || !(q > 0.0) || !(sigma2 > 0.0) || !(info > 0.0) {
        return Err(invalid("steady state needs 0 ≤ α < 1 and q, σ², info > 0"));
    }
    let mut zeta = q;
    for it in 0..RICCATI_MAX_ITER {
        let tau = 1.0 / (1.0 / zeta + info / sigma2);
        let next = alpha * alpha * tau + q;
        let resid = (next - zeta).abs();
        zeta = next;
        if resid <= RICCATI_TOL * zeta {
            let tau = 1.0 / (1.0 / zeta + info / sigma2);
            return Ok(ScalarSteadyState { zeta, tau, lambda: alpha * tau / zeta, gamma: tau / sigma2 });
        }
        if it + 1 == RICCATI_MAX_ITER {
            return Err(Error::NonConvergence { iterations: RICCATI_MAX_ITER, residual: resid / zeta });
        }
    }
    unreachable!()
}

/// Matrix Riccati fixed point, iterated in information form.
pub fn steady_state(model: &StateSpaceModel) -> Result<SteadyState> {
    let j = model.j();
    let qm = CMat::from_diagonal(&DVector::from_iterator(j, model.q.iter().map(|&v| c(v))));
    let info = model.f.adjoint() * &model.f / c(model.sigma2);
    let a2 = c(model.alpha * model.alpha);
    let mut sigma = qm.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let filtered = |s: &CMat| -> Result<CMat> {
        let prec = cholesky(s, "steady-state covariance")?.inverse() + &info;
        let mut m = cholesky(&prec, "steady-state information")?.inverse();
        hermitize(&mut m);
        Ok(m)
    };
    while iterations < RICCATI_MAX_ITER {
        iterations += 1;
        let mut next = filtered(&sigma)? * a2 + &qm;
        hermitize(&mut next);
        residual = (&next - &sigma).norm() / next.norm();
        sigma = next;
        if residual <= RICCATI_TOL {
            break;
        }
    }
    if residual > RICCATI_TOL {
        return Err(Error::NonConvergence { iterations, residual });
    }
    let sigma_inf = filtered(&sigma)?;
    let lambda = cholesky(&sigma, "steady-state covariance")?.solve(&sigma_inf).adjoint() * c(model.alpha);
    let gamma = &sigma_inf / c(model.sigma2);
    Ok(SteadyState { sigma, sigma_inf, lambda, gamma, iterations, residual })
}

/// Riccati residual `‖α²(Σ⁻¹ + FᴴF/σ²)⁻¹ + Q − Σ‖` (Frobenius, an upper bound on the spectral norm).
pub fn riccati_residual(model: &StateSpaceModel, sigma: &CMat) -> Result<f64> {
    let j = model.j();
    let qm = CMat::from_diagonal(&DVector::from_iterator(j, model.q.iter().map(|&v| c(v))));
    let info = model.f.adjoint() * &model.f / c(model.sigma2);
    let prec = cholesky(sigma, "covariance")?.inverse() + info;
    let filt = cholesky(&prec, "information")?.inverse();
    Ok((filt * c(model.alpha * model.alpha) + qm - sigma).norm())
}
