//! Dynamic Bayesian multitaper spectrogram estimation.
//!
//! The crate provides Slepian tapers, a complex linear-Gaussian smoother, two
//! EM-fitted state-space spectrogram estimators (`dbmt` on eigen-coefficients,
//! `logdbmt` on log eigen-spectra), the overlapping multitaper baseline, the
//! bias/variance theory for the smoothed estimator and a synthetic benchmark.

pub mod analysis;
pub mod datagen;
pub mod dbmt;
pub mod error;
pub mod lgss;
pub mod logdbmt;
pub mod mtm;
pub mod special;
pub mod spectrogram;
pub mod stats;
pub mod tapers;

pub use error::{Error, Result};
pub use spectrogram::{Method, Spectrogram};
pub use tapers::{FrequencyGrid, TaperSet};
pub use nalgebra;
pub use num_complex::Complex64;
