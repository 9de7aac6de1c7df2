//! Discrete prolate spheroidal sequences and tapered Fourier coefficients.
//!
//! Tapers are the leading eigenvectors of the symmetric tridiagonal matrix that
//! commutes with the time-bandwidth concentration operator. Eigenvalues of the
//! tridiagonal matrix are found by Sturm-sequence bisection and the vectors by
//! inverse iteration, so memory stays O(W). The concentration ratios are then
//! recovered as Rayleigh quotients of the dense concentration operator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// A set of K Slepian tapers of length W with half-bandwidth B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaperSet {
    pub w: usize,
    pub b: f64,
    pub k: usize,
    /// `u[k]` has length `w` and unit Euclidean norm.
    pub u: Vec<Vec<f64>>,
    /// Concentration of each taper in `[-B, B]`, strictly decreasing.
    pub lambda: Vec<f64>,
}

impl TaperSet {
    /// Largest admissible taper count for (W, B).
    pub fn max_tapers(w: usize, b: f64) -> usize {
        let two_wb = (2.0 * w as f64 * b + 1e-9).floor() as usize;
        two_wb.saturating_sub(1)
    }

    pub fn mean_lambda(&self) -> f64 {
        self.lambda.iter().sum::<f64>() / self.k as f64
    }
}

/// Uniform grid `f_j = (j-1)/J` cycles/sample, j = 1..J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub j: usize,
    /// Only used to report frequencies in Hz.
    pub sample_rate: f64,
}

impl FrequencyGrid {
    pub fn new(j: usize, sample_rate: f64) -> Result<Self> {
        if j == 0 {
            return Err(invalid("frequency grid needs at least one bin"));
        }
        if !(sample_rate > 0.0) {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(Self { j, sample_rate })
    }

    /// Bin frequency in cycles/sample for zero-based bin index `j`.
    pub fn cycles(&self, j: usize) -> f64 {
        j as f64 / self.j as f64
    }

    pub fn hz(&self) -> Vec<f64> {
        (0..self.j).map(|j| self.cycles(j) * self.sample_rate).collect()
    }

    /// Index of the bin closest to `f_hz`.
    pub fn nearest_bin(&self, f_hz: f64) -> usize {
        let x = f_hz / self.sample_rate * self.j as f64;
        (x.round().rem_euclid(self.j as f64)) as usize
    }
}

/// Dense W×W concentration matrix `A_lm = sin(2πB(l-m)) / (π(l-m))`, `A_ll = 2B`.
pub fn concentration_matrix(w: usize, b: f64) -> DMatrix<f64> {
    let kernel = concentration_kernel(w, b);
    DMatrix::from_fn(w, w, |l, m| kernel[l.abs_diff(m)])
}

fn concentration_kernel(w: usize, b: f64) -> Vec<f64> {
    (0..w)
        .map(|d| {
            if d == 0 {
                2.0 * b
            } else {
                let d = d as f64;
                (2.0 * PI * b * d).sin() / (PI * d)
            }
        })
        .collect()
}

/// Rayleigh quotient `uᵀAu` of the concentration operator for a unit vector.
pub fn concentration_ratio(u: &[f64], b: f64) -> f64 {
    let w = u.len();
    let kernel = concentration_kernel(w, b);
    let mut acc = 0.0;
    for d in 0..w {
        let r: f64 = (0..w - d).map(|l| u[l] * u[l + d]).sum();
        acc += if d == 0 { kernel[0] * r } else { 2.0 * kernel[d] * r };
    }
    acc
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    off: Vec<f64>,
}

impl Tridiagonal {
    fn slepian(w: usize, b: f64) -> Self {
        let c = (2.0 * PI * b).cos();
        let half = (w as f64 - 1.0) / 2.0;
        let diag = (0..w).map(|l| (half - l as f64).powi(2) * c).collect();
        let off = (1..w).map(|l| (l * (w - l)) as f64 / 2.0).collect();
        Self { diag, off }
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let denom = if q == 0.0 { f64::EPSILON * self.off[i - 1].abs().max(1.0) } else { q };
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Eigenvalue with zero-based rank `idx` in descending order.
    fn eigenvalue_desc(&self, idx: usize) -> f64 {
        let n = self.diag.len();
        let target = n - 1 - idx; // ascending rank
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve `(T - shift I) x = rhs` by Gaussian elimination with partial pivoting.
    fn solve_shifted(&self, shift: f64, rhs: &mut [f64]) {
        let n = self.diag.len();
        if n == 1 {
            let d = self.diag[0] - shift;
            rhs[0] /= if d == 0.0 { f64::EPSILON } else { d };
            return;
        }
        // Row i of the factor U has entries (d[i], e1[i], e2[i]) at columns i, i+1, i+2.
        let mut d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        let mut up: Vec<f64> = self.off.clone();
        up.push(0.0);
        let mut up2 = vec![0.0; n];
        let mut low: Vec<f64> = self.off.clone();
        let tiny = f64::EPSILON * self.gershgorin().1.abs().max(1.0);
        for i in 0..n - 1 {
            if low[i].abs() > d[i].abs() {
                // swap rows i and i+1
                let (ri0, ri1, ri2) = (d[i], up[i], up2[i]);
                d[i] = low[i];
                up[i] = d[i + 1];
                up2[i] = up[i + 1];
                let next_sub = ri0;
                d[i + 1] = ri1;
                up[i + 1] = ri2;
                rhs.swap(i, i + 1);
                let m = next_sub / d[i];
                d[i + 1] -= m * up[i];
                up[i + 1] -= m * up2[i];
                rhs[i + 1] -= m * rhs[i];
            } else {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let m = low[i] / d[i];
                d[i + 1] -= m * up[i];
                rhs[i + 1] -= m * rhs[i];
            }
            low[i] = 0.0;
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        rhs[n - 1] /= d[n - 1];
        rhs[n - 2] = (rhs[n - 2] - up[n - 2] * rhs[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            rhs[i] = (rhs[i] - up[i] * rhs[i + 1] - up2[i] * rhs[i + 2]) / d[i];
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Compute the first `k` Slepian tapers of length `w` and half-bandwidth `b`.
///
/// Polarity: even-order tapers have positive sum, odd-order tapers have a
/// positive first moment about the window centre (they start positive).
pub fn compute_dpss(w: usize, b: f64, k: usize) -> Result<TaperSet> {
    if w < 2 {
        return Err(invalid(format!("taper length must be at least 2, got {w}")));
    }
    if !(b > 0.0 && b < 0.5) {
        return Err(invalid(format!("half-bandwidth must lie in (0, 1/2), got {b}")));
    }
    let kmax = TaperSet::max_tapers(w, b);
    if k == 0 || k > kmax {
        return Err(invalid(format!(
            "taper count {k} outside 1..={kmax} allowed for W={w}, B={b}"
        )));
    }
    let tri = Tridiagonal::slepian(w, b);
    let (glo, ghi) = tri.gershgorin();
    let scale = glo.abs().max(ghi.abs()).max(1.0);
    let half = (w as f64 - 1.0) / 2.0;

    let mut tapers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for idx in 0..k {
        let ev = tri.eigenvalue_desc(idx);
        let shift = ev + 64.0 * f64::EPSILON * scale;
        // Deterministic start vector with components along every direction.
        let mut v: Vec<f64> = (0..w).map(|l| 1.0 + ((l * 7 + idx * 3) % 11) as f64 * 0.01).collect();
        normalize(&mut v);
        for _ in 0..4 {
            tri.solve_shifted(shift, &mut v);
            for prev in &tapers {
                let dot: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
            }
            normalize(&mut v);
        }
        let sign = if idx % 2 == 0 {
            v.iter().sum::<f64>()
        } else {
            v.iter().enumerate().map(|(l, x)| (half - l as f64) * x).sum::<f64>()
        };
        if sign < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        tapers.push(v);
    }
    let lambda = tapers.iter().map(|u| concentration_ratio(u, b)).collect();
    Ok(TaperSet { w, b, k, u: tapers, lambda })
}

/// Eigen-coefficients `x̂⁽ᵏ⁾(f_j) = Σ_l e^{-i2πf_j l} u_l⁽ᵏ⁾ y_l`, returned as a K×J matrix.
pub fn eigen_coefficients(taps: &TaperSet, window: &[f64], grid: &FrequencyGrid) -> Result<DMatrix<Complex64>> {
    if window.len() != taps.w {
        return Err(mismatch(format!("window has {} samples, tapers expect {}", window.len(), taps.w)));
    }
    let j = grid.j;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(j);
    let mut out = DMatrix::zeros(taps.k, j);
    let mut buf = vec![Complex64::new(0.0, 0.0); j];
    for (k, u) in taps.u.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        // e^{-i2π(j/J)l} is periodic in l with period J, so fold first.
        for (l, (&ul, &yl)) in u.iter().zip(window).enumerate() {
            buf[l % j].re += ul * yl;
        }
        fft.process(&mut buf);
        for (jj, c) in buf.iter().enumerate() {
            out[(k, jj)] = *c;
        }
    }
    Ok(out)
}

/// Eigen-coefficient vectors (length J) of taper `k` for every window.
pub fn coefficient_track(taps: &TaperSet, k: usize, windows: &[Vec<f64>], grid: &FrequencyGrid) -> Result<Vec<DVector<Complex64>>> {
    if k >= taps.k {
        return Err(invalid(format!("taper index {k} out of range")));
    }
    let single = TaperSet {
        w: taps.w,
        b: taps.b,
        k: 1,
        u: vec![taps.u[k].clone()],
        lambda: vec![taps.lambda[k]],
    };
    windows
        .iter()
        .map(|win| eigen_coefficients(&single, win, grid).map(|m| m.row(0).transpose()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_changes(v: &[f64]) -> usize {
        let tol = 1e-12;
        let signs: Vec<f64> = v.iter().filter(|x| x.abs() > tol).map(|x| x.signum()).collect();
        signs.windows(2).filter(|p| p[0] != p[1]).count()
    }

    #[test]
    fn small_case_matches_dense_eigenproblem() {
        let taps = compute_dpss(8, 0.25, 3).unwrap();
        let eig = concentration_matrix(8, 0.25).symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for k in 0..3 {
            assert!((taps.lambda[k] - vals[k]).abs() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn tapers_are_orthonormal_with_order_structure() {
        let taps = compute_dpss(300, 3.0 / 300.0, 5).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = taps.u[a].iter().zip(&taps.u[b]).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((dot - target).abs() < 1e-10);
            }
            assert_eq!(sign_changes(&taps.u[a]), a);
            assert!(taps.u[a][0] > 0.0);
        }
        for p in taps.lambda.windows(2) {
            assert!(p[0] > p[1]);
        }
        assert!(taps.lambda.iter().all(|&l| l > 0.0 && l < 1.0));
    }

    #[test]
    fn admissibility_rules() {
        assert!(compute_dpss(100, 0.03, 5).is_ok());
        assert!(compute_dpss(100, 0.03, 6).is_err());
        assert!(compute_dpss(100, 0.5, 1).is_err());
        assert!(compute_dpss(1, 0.2, 1).is_err());
        assert!(compute_dpss(100, 0.03, 0).is_err());
    }

    #[test]
    fn zero_window_gives_zero_coefficients() {
        let taps = compute_dpss(16, 0.2, 2).unwrap();
        let grid = FrequencyGrid::new(16, 1.0).unwrap();
        let x = eigen_coefficients(&taps, &[0.0; 16], &grid).unwrap();
        assert!(x.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn taper_as_window_gives_unit_dc_coefficient() {
        let taps = compute_dpss(32, 0.1, 3).unwrap();
        let grid = FrequencyGrid::new(32, 1.0).unwrap();
        let x = eigen_coefficients(&taps, &taps.u[0], &grid).unwrap();
        assert!((x[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(x[(0, 0)].im.abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let taps = compute_dpss(16, 0.2, 2).unwrap();
        let grid = FrequencyGrid::new(16, 1.0).unwrap();
        assert!(eigen_coefficients(&taps, &[0.0; 15], &grid).is_err());
    }

    #[test]
    fn grid_helpers() {
        let g = FrequencyGrid::new(300, 50.0).unwrap();
        assert_eq!(g.hz()[0], 0.0);
        assert_eq!(g.nearest_bin(11.0), 66);
        assert!(FrequencyGrid::new(0, 1.0).is_err());
    }
}
