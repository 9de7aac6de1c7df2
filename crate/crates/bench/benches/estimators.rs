use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dbmt_core::datagen::{gen_synthetic, simulate_ar1_states, SyntheticSpec};
use dbmt_core::dbmt::{self, em_fit_coefficients, DbmtConfig, EmOptions};
use dbmt_core::lgss::diag_smoother;
use dbmt_core::logdbmt::{self, LogDbmtConfig};
use dbmt_core::mtm::{mt_spectrogram, MtConfig};
use dbmt_core::nalgebra::DVector;
use dbmt_core::tapers::compute_dpss;
use dbmt_core::Complex64;

fn coefficient_track(j: usize, n: usize) -> Vec<DVector<Complex64>> {
    let q: Vec<f64> = (0..j).map(|b| 1.0 + (b % 7) as f64).collect();
    let x0 = DVector::from_element(j, Complex64::new(0.0, 0.0));
    simulate_ar1_states(0.9, &q, &x0, n, 3).unwrap().into_iter().skip(1).collect()
}

fn tapers(c: &mut Criterion) {
    c.bench_function("dpss w=300 k=5", |b| b.iter(|| compute_dpss(black_box(300), 3.0 / 300.0, 5).unwrap()));
}

fn smoother(c: &mut Criterion) {
    let z = coefficient_track(300, 100);
    let q = vec![2.0; 300];
    let m0 = DVector::from_element(300, Complex64::new(0.0, 0.0));
    c.bench_function("diagonal smoother j=300 n=100", |b| {
        b.iter(|| diag_smoother(0.9, &q, 0.5, black_box(&z), &m0, &q).unwrap())
    });
    c.bench_function("em fit j=300 n=100", |b| {
        b.iter(|| em_fit_coefficients(black_box(&z), 0.5, &EmOptions::default()).unwrap())
    });
}

fn spectrograms(c: &mut Criterion) {
    let data = gen_synthetic(&SyntheticSpec { duration: 120.0, ..SyntheticSpec::default() }).unwrap();
    let fs = 50.0;
    let taps = compute_dpss(300, 3.0 / 300.0, 3).unwrap();
    let mt = MtConfig::new(300, 3.0, 3, 0.5);
    let mut group = c.benchmark_group("spectrogram 120 s");
    group.sample_size(10);
    group.bench_function("mt", |b| b.iter(|| mt_spectrogram(black_box(&data.y), fs, &mt, &taps).unwrap()));
    let cfg = DbmtConfig { mc_samples: 200, ..DbmtConfig::new(300, 3.0, 3, data.sigma * data.sigma) };
    group.bench_function("dbmt", |b| b.iter(|| dbmt::fit(black_box(&data.y), fs, &cfg).unwrap()));
    let log_cfg = LogDbmtConfig::new(300, 3.0, 3);
    group.bench_function("logdbmt", |b| b.iter(|| logdbmt::fit(black_box(&data.y), fs, &log_cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, tapers, smoother, spectrograms);
criterion_main!(benches);
