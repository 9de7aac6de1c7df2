//! Randomised invariants of the estimators and their building blocks.

use approx::assert_relative_eq;
use dbmt_core::analysis::{kappa_mu, kappa_mu_brute, WeightParams};
use dbmt_core::datagen::{gen_statespace_data, gen_synthetic, ground_truth, SyntheticSpec};
use dbmt_core::dbmt::{update_alpha, SmoothedMoments, ALPHA_CLAMP};
use dbmt_core::lgss::{smooth, smooth_with, InitialState, Path, StateSpaceModel};
use dbmt_core::logdbmt::{laplace_filter_step, laplace_smoother_bin, log_eigen_spectra, LogPrior};
use dbmt_core::mtm::{mt_spectrogram, MtConfig};
use dbmt_core::tapers::{compute_dpss, eigen_coefficients};
use dbmt_core::{Complex64, FrequencyGrid, TaperSet};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn fourier_model(alpha: f64, q: Vec<f64>, sigma2: f64, w: usize) -> StateSpaceModel {
    let j = q.len();
    StateSpaceModel::new(alpha, q, sigma2, StateSpaceModel::fourier(w, j)).unwrap()
}

/// Kolmogorov–Smirnov statistic of `x` against `cdf`.
fn ks_statistic(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn diagonal_path_matches_dense(alpha in 0.0..0.99f64, sigma2 in 0.05..5.0f64, seed in 0u64..1000,
                                   q in prop::collection::vec(0.1..10.0f64, 4)) {
        let model = fourier_model(alpha, q.clone(), sigma2, 8);
        let init = InitialState::zero_mean(&q);
        let (obs, _) = gen_statespace_data(&model, &init, 12, seed).unwrap();
        let fast = smooth(&model, &obs, &init).unwrap();
        let dense = smooth_with(&model, &obs, &init, Path::Dense).unwrap();
        prop_assert!(fast.gram_scale.is_some());
        prop_assert!(dense.gram_scale.is_none());
        assert_relative_eq!(fast.nll, dense.nll, max_relative = 1e-9);
        for n in 0..=12 {
            for b in 0..4 {
                let scale = 1.0 + dense.x_smooth[n][b].norm();
                prop_assert!((fast.x_smooth[n][b] - dense.x_smooth[n][b]).norm() < 1e-9 * scale);
            }
            let (pf, pd) = (fast.p_smooth[n].diagonal(), dense.p_smooth[n].diagonal());
            for b in 0..4 {
                assert_relative_eq!(pf[b], pd[b], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn conditioning_reduces_variance(alpha in 0.0..0.99f64, sigma2 in 0.05..5.0f64, seed in 0u64..1000,
                                     q in prop::collection::vec(0.1..10.0f64, 3)) {
        // A dense, non-orthogonal observation matrix forces the general path.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = nalgebra::DMatrix::from_fn(5, 3, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let model = StateSpaceModel::new(alpha, q.clone(), sigma2, f).unwrap();
        let init = InitialState::zero_mean(&q);
        let (obs, _) = gen_statespace_data(&model, &init, 10, seed + 1).unwrap();
        let res = smooth(&model, &obs, &init).unwrap();
        for n in 1..=10 {
            let (pred, filt, sm) = (res.p_pred[n].diagonal(), res.p_filt[n].diagonal(), res.p_smooth[n].diagonal());
            for b in 0..3 {
                prop_assert!(filt[b] <= pred[b] * (1.0 + 1e-10));
                prop_assert!(sm[b] <= filt[b] * (1.0 + 1e-10) + 1e-12);
            }
            let scale = res.p_pred[n].trace();
            prop_assert!(res.p_filt[n].min_eigenvalue() >= -1e-10 * scale);
            prop_assert!(res.p_smooth[n].min_eigenvalue() >= -1e-10 * scale);
        }
    }

    #[test]
    fn alpha_update_beats_grid_search(seed in 0u64..10_000, q in prop::collection::vec(0.1..10.0f64, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let mean: Vec<DVector<Complex64>> = (0..=n)
            .map(|_| DVector::from_fn(3, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))))
            .collect();
        let var: Vec<Vec<f64>> = (0..=n).map(|_| (0..3).map(|_| rng.random_range(0.01..2.0)).collect()).collect();
        let cross: Vec<Vec<f64>> = (0..=n)
            .map(|t| (0..3).map(|b| if t == 0 { 0.0 } else { rng.random_range(-0.9..0.9) * (var[t][b] * var[t - 1][b]).sqrt() }).collect())
            .collect();
        let m = SmoothedMoments { mean, var, cross };
        let objective = |a: f64| -> f64 {
            (1..=n).map(|t| (0..3).map(|b| {
                let cur = m.mean[t][b].norm_sqr() + m.var[t][b];
                let prev = m.mean[t - 1][b].norm_sqr() + m.var[t - 1][b];
                let lag = (m.mean[t - 1][b].conj() * m.mean[t][b]).re + m.cross[t][b];
                (cur + a * a * prev - 2.0 * a * lag) / q[b]
            }).sum::<f64>()).sum()
        };
        let upd = update_alpha(&m, &q);
        prop_assert!((0.0..=ALPHA_CLAMP).contains(&upd.alpha));
        let best = objective(upd.alpha);
        for i in 0..=1000 {
            let a = ALPHA_CLAMP * i as f64 / 1000.0;
            prop_assert!(best <= objective(a) + 1e-10 * best.abs().max(1.0));
        }
    }

    #[test]
    fn parseval_holds_on_the_full_grid(seed in 0u64..1000, w in 16usize..80) {
        let taps = compute_dpss(w, 3.0 / w as f64, 2).unwrap();
        let y = white(w, seed);
        let grid = FrequencyGrid::new(w, 1.0).unwrap();
        let x = eigen_coefficients(&taps, &y, &grid).unwrap();
        for k in 0..2 {
            let energy: f64 = taps.u[k].iter().zip(&y).map(|(u, v)| (u * v).powi(2)).sum();
            let spectral: f64 = x.row(k).iter().map(|c| c.norm_sqr()).sum();
            assert_relative_eq!(spectral, w as f64 * energy, max_relative = 1e-10);
        }
    }

    #[test]
    fn laplace_step_minimises_its_objective(s_pred in -5.0..5.0f64, omega in 1e-3..20.0f64,
                                            psi in -8.0..8.0f64, nu in 0.2..5.0f64) {
        let (s, om) = laplace_filter_step(s_pred, omega, psi, nu).unwrap();
        let phi = |x: f64| (x - s_pred).powi(2) / (2.0 * omega) + nu * x + 0.5 * (psi - x).exp();
        // Golden-section search on a bracket that holds the unique minimiser.
        let (mut a, mut b) = (s_pred.min(psi) - omega * nu - 20.0, s_pred.max(psi) + 20.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if phi(c) < phi(d) { b = d } else { a = c }
        }
        let golden = 0.5 * (a + b);
        prop_assert!((s - golden).abs() < 1e-6 * (1.0 + golden.abs()), "newton {s} golden {golden}");
        let curvature = 1.0 / omega + 0.5 * (psi - s).exp();
        assert_relative_eq!(om, 1.0 / curvature, max_relative = 1e-12);
    }

    #[test]
    fn random_walk_smoother_is_translation_equivariant(seed in 0u64..1000, c in -10.0..10.0f64,
                                                        r in 0.01..1.0f64, nu in 0.5..3.0f64) {
        let psi: Vec<f64> = white(30, seed).iter().map(|v| 2.0 * v).collect();
        let shifted: Vec<f64> = psi.iter().map(|v| v + c).collect();
        let prior = LogPrior { mean: 0.3, var: 2.0 };
        let a = laplace_smoother_bin(1.0, r, nu, prior, &psi).unwrap();
        let b = laplace_smoother_bin(1.0, r, nu, LogPrior { mean: prior.mean + c, ..prior }, &shifted).unwrap();
        for n in 0..=30 {
            prop_assert!((b.s[n] - a.s[n] - c).abs() < 1e-8 * (1.0 + c.abs()));
            assert_relative_eq!(b.omega[n], a.omega[n], max_relative = 1e-8);
        }
    }

    #[test]
    fn kappa_weights_are_symmetric_and_dominate_mu(alpha in 0.01..0.99f64, ratio in 0.01..100.0f64,
                                                   nn in 1usize..60, frac in 0.0..1.0f64) {
        let n = 1 + ((nn - 1) as f64 * frac) as usize;
        let p = WeightParams::flat(alpha, ratio, 1.0).unwrap();
        let (k, m) = kappa_mu(&p, n, nn).unwrap();
        let (kr, mr) = kappa_mu(&p, nn + 1 - n, nn).unwrap();
        assert_relative_eq!(k, kr, max_relative = 1e-10);
        assert_relative_eq!(m, mr, max_relative = 1e-10);
        prop_assert!(m <= k * (1.0 + 1e-12));
        let (kb, mb) = kappa_mu_brute(&p, n, nn).unwrap();
        assert_relative_eq!(k, kb, max_relative = 1e-9);
        assert_relative_eq!(m, mb, max_relative = 1e-9);
    }

    #[test]
    fn multitaper_ignores_taper_order(seed in 0u64..1000) {
        let taps = compute_dpss(64, 4.0 / 64.0, 5).unwrap();
        let reversed = TaperSet {
            u: taps.u.iter().rev().cloned().collect(),
            lambda: taps.lambda.iter().rev().copied().collect(),
            ..taps.clone()
        };
        let cfg = MtConfig::new(64, 4.0, 5, 0.5);
        let y = white(640, seed);
        let a = mt_spectrogram(&y, 1.0, &cfg, &taps).unwrap();
        let b = mt_spectrogram(&y, 1.0, &cfg, &reversed).unwrap();
        for (x, z) in a.power.iter().zip(b.power.iter()) {
            assert_relative_eq!(*x, *z, max_relative = 1e-12);
        }
    }
}

#[test]
fn multitaper_is_unbiased_for_white_noise() {
    let (w, sd) = (64, 1.7);
    let taps = compute_dpss(w, 3.0 / w as f64, 3).unwrap();
    let cfg = MtConfig::new(w, 3.0, 3, 0.0);
    let y: Vec<f64> = white(w * 2000, 7).iter().map(|v| sd * v).collect();
    let spec = mt_spectrogram(&y, 1.0, &cfg, &taps).unwrap();
    let n = spec.n_windows() as f64;
    for b in 1..w / 2 {
        let mean = spec.power.column(b).sum() / n;
        // Three tapers per window give a relative standard error of 1/sqrt(3n).
        assert!((mean / (sd * sd) - 1.0).abs() < 5.0 / (3.0 * n).sqrt(), "bin {b}: {mean}");
    }
}

#[test]
fn log_eigen_spectra_follow_log_chi_squared() {
    let (w, n) = (50, 2000);
    let taps = compute_dpss(w, 3.0 / w as f64, 2).unwrap();
    let y = white(w * n, 11);
    let windows: Vec<Vec<f64>> = y.chunks(w).map(|c| c.to_vec()).collect();
    let grid = FrequencyGrid::new(w, 1.0).unwrap();
    let obs = log_eigen_spectra(&windows, &taps, &grid).unwrap();
    let chi2 = ChiSquared::new(2.0).unwrap();
    // ψ − log S is log χ²₂ at interior bins; unit-variance noise gives S = 1.
    for k in 0..2 {
        for b in [7, 12, 20] {
            let col: Vec<f64> = obs[k].psi.column(b).iter().copied().collect();
            let d = ks_statistic(col, |v| chi2.cdf(v.exp()));
            assert!(d < 1.63 / (n as f64).sqrt(), "taper {k} bin {b}: D = {d}");
        }
    }
}

#[test]
fn synthetic_data_is_deterministic_and_peaks_at_its_components() {
    let spec = SyntheticSpec { duration: 120.0, seed: 5, ..SyntheticSpec::default() };
    let a = gen_synthetic(&spec).unwrap();
    let b = gen_synthetic(&spec).unwrap();
    assert_eq!(a.y, b.y);
    let c = gen_synthetic(&SyntheticSpec { seed: 6, ..spec.clone() }).unwrap();
    assert_ne!(a.y, c.y);

    let w = 300;
    let grid = FrequencyGrid::new(w, spec.sample_rate).unwrap();
    let hz = |j: usize| grid.cycles(j) * spec.sample_rate;
    let argmax = |row: &[f64], lo: f64, hi: f64| {
        (0..=w / 2).filter(|&j| hz(j) >= lo && hz(j) <= hi).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap()
    };
    let truth = ground_truth(&spec, w, w).unwrap();
    let row: Vec<f64> = truth.row(0).iter().copied().collect();
    // The first frequency step sits at 5 Hz and the AR resonance at 11 Hz.
    assert!((hz(argmax(&row, 0.0, 25.0)) - 5.0).abs() < 0.2);
    let ar = argmax(&row, 8.0, 14.0);
    assert!((hz(ar) - 11.0).abs() < 0.2, "AR peak at {} Hz", hz(ar));
    assert!(row[ar] > 100.0 * row[grid.nearest_bin(20.0)]);

    let taps = compute_dpss(w, 3.0 / w as f64, 3).unwrap();
    let mt = mt_spectrogram(&a.y, spec.sample_rate, &MtConfig::new(w, 3.0, 3, 0.0), &taps).unwrap();
    let avg: Vec<f64> = (0..w).map(|j| mt.power.rows(0, 4).column(j).sum()).collect();
    assert!((hz(argmax(&avg, 0.0, 25.0)) - 5.0).abs() < 0.5);
    assert!((hz(argmax(&avg, 8.0, 14.0)) - 11.0).abs() < 0.5);
}
