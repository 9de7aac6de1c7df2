use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use dbmt_core::analysis::{alpha_for_unit_kappa, kappa_mu, TheoryCurves, WeightParams};
use dbmt_core::datagen::{gen_synthetic, ground_truth, SyntheticSpec};
use dbmt_core::dbmt::{self, DbmtConfig};
use dbmt_core::lgss::steady_state_scalar;
use dbmt_core::logdbmt::{self, LogDbmtConfig};
use dbmt_core::mtm::{mt_spectrogram, window_starts, MtConfig};
use dbmt_core::tapers::{compute_dpss, FrequencyGrid};
use dbmt_core::Spectrogram;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::io::{self, Artifacts};
use crate::{grid, AnalyzeArgs, BoundKind, Command, Curve, MethodArg, ReplayArgs, SynthArgs, TheoryArgs};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Command,
    pub inputs: Vec<InputRecord>,
    pub seed: Option<u64>,
    pub config: Value,
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_sec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn run(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Replay(args) => replay(args),
        other => {
            let out = produce(other)?;
            if let Some((dir, artifacts)) = out {
                artifacts.write_all(&dir)?;
                log::info!("wrote {} files to {}", artifacts.files.len(), dir.display());
            }
            Ok(())
        }
    }
}

/// Run a command in memory. `None` means the output went to stdout.
fn produce(cmd: &Command) -> Result<Option<(PathBuf, Artifacts)>, CliError> {
    let start = Instant::now();
    let (dir, mut artifacts, inputs, seed, config) = match cmd {
        Command::Analyze(a) => {
            let (arts, inputs, config) = analyze(a)?;
            (a.out.clone().unwrap_or_else(|| default_out(a)), arts, inputs, Some(a.seed), config)
        }
        Command::Synth(s) => {
            let (arts, config) = synth(s)?;
            (s.out.clone(), arts, Vec::new(), Some(s.seed), config)
        }
        Command::Theory(t) => {
            let (name, csv, config) = theory(t)?;
            match &t.out {
                None => {
                    print!("{csv}");
                    return Ok(None);
                }
                Some(dir) => {
                    let mut arts = Artifacts::default();
                    arts.add(&name, csv);
                    (dir.clone(), arts, Vec::new(), None, config)
                }
            }
        }
        Command::Replay(_) => unreachable!("replay is handled by run"),
    };
    let manifest = Manifest {
        tool: "dbmt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: cmd.clone(),
        inputs,
        seed,
        config,
        artifacts: artifacts.hashes(),
        wall_clock_sec: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    artifacts.add(MANIFEST, text);
    Ok(Some((dir, artifacts)))
}

fn default_out(a: &AnalyzeArgs) -> PathBuf {
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    PathBuf::from(format!("{stem}-{}", method_name(a.method)))
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Dbmt => "dbmt",
        MethodArg::Logdbmt => "logdbmt",
        MethodArg::Mt => "mt",
    }
}

fn window_samples(window_sec: f64, fs: f64) -> Result<usize, CliError> {
    if !(window_sec > 0.0 && window_sec.is_finite()) {
        return Err(CliError::Input(format!("--window-sec must be positive, got {window_sec}")));
    }
    let w = (window_sec * fs).round();
    if w < 2.0 {
        return Err(CliError::Input(format!("window of {window_sec} s holds fewer than 2 samples at {fs} Hz")));
    }
    Ok(w as usize)
}

fn analyze(a: &AnalyzeArgs) -> Result<(Artifacts, Vec<InputRecord>, Value), CliError> {
    if a.overlap.is_some() && a.method != MethodArg::Mt {
        return Err(CliError::Input("--overlap applies only to --method mt".into()));
    }
    if a.sigma2.is_some() && a.method != MethodArg::Dbmt {
        return Err(CliError::Input("--sigma2 applies only to --method dbmt".into()));
    }
    let raw = fs::read(&a.input).map_err(|e| CliError::Input(format!("{}: {e}", a.input.display())))?;
    let text = String::from_utf8(raw.clone()).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", a.input.display())))?;
    let series = io::parse_series(&text)?;
    let fs_hz = series.sample_rate;
    let w = window_samples(a.window_sec, fs_hz)?;
    if series.y.len() < w {
        return Err(CliError::Input(format!("record of {} samples is shorter than one window ({w})", series.y.len())));
    }
    let j = a.grid.unwrap_or(w);
    let b = a.time_bandwidth / w as f64;
    let (spec, config): (Spectrogram, Value) = match a.method {
        MethodArg::Dbmt => {
            let sigma2 = match a.sigma2 {
                Some(v) => v,
                None => dbmt::estimate_sigma2(&series.y, fs_hz, w, b, a.tapers, j)?,
            };
            let cfg = DbmtConfig {
                j,
                tol: a.tol,
                max_iter: a.max_iter,
                ci_level: a.ci,
                mc_samples: a.mc_samples,
                seed: a.seed,
                ..DbmtConfig::new(w, a.time_bandwidth, a.tapers, sigma2)
            };
            let fit = dbmt::fit(&series.y, fs_hz, &cfg)?;
            let tracks: Vec<Value> = fit
                .tracks
                .iter()
                .map(|t| json!({"taper": t.taper, "alpha": t.alpha, "iterations": t.iterations, "converged": t.converged, "flags": t.flags}))
                .collect();
            (fit.spectrogram, json!({"method": "dbmt", "core": cfg, "sample_rate": fs_hz, "dropped_samples": fit.dropped, "sigma2_estimated": a.sigma2.is_none(), "tracks": tracks}))
        }
        MethodArg::Logdbmt => {
            let cfg = LogDbmtConfig { j, tol: a.tol, max_iter: a.max_iter, ci_level: a.ci, ..LogDbmtConfig::new(w, a.time_bandwidth, a.tapers) };
            let fit = logdbmt::fit(&series.y, fs_hz, &cfg)?;
            let tracks: Vec<Value> = fit
                .tracks
                .iter()
                .map(|t| {
                    json!({"taper": t.taper, "theta": t.theta, "nu": t.nu, "iterations": t.iterations, "converged": t.converged,
                        "rejected_steps": t.rejected_steps, "flags": t.flags})
                })
                .collect();
            (fit.spectrogram, json!({"method": "logdbmt", "core": cfg, "sample_rate": fs_hz, "dropped_samples": fit.dropped, "tracks": tracks}))
        }
        MethodArg::Mt => {
            let cfg = MtConfig { j, ci_level: a.ci, ..MtConfig::new(w, a.time_bandwidth, a.tapers, a.overlap.unwrap_or(0.5)) };
            cfg.validate()?;
            let taps = compute_dpss(w, b, a.tapers)?;
            let spec = mt_spectrogram(&series.y, fs_hz, &cfg, &taps)?;
            (spec, json!({"method": "mt", "core": cfg, "sample_rate": fs_hz}))
        }
    };
    let mut config = config;
    config["meta"] = json!(spec.meta);
    config["units"] = json!(if a.db { "dB" } else { "linear" });
    let conv = |m: &dbmt_core::nalgebra::DMatrix<f64>| if a.db { m.map(|v| 10.0 * v.log10()) } else { m.clone() };
    let mut arts = Artifacts::default();
    arts.add("spectrogram.csv", io::matrix_csv(&conv(&spec.power)));
    arts.add("ci_lo.csv", io::matrix_csv(&conv(&spec.ci_lo)));
    arts.add("ci_hi.csv", io::matrix_csv(&conv(&spec.ci_hi)));
    arts.add("freqs.csv", io::column_csv(&spec.freqs));
    arts.add("times.csv", io::column_csv(&spec.times));
    let path = fs::canonicalize(&a.input).unwrap_or_else(|_| a.input.clone());
    let inputs = vec![InputRecord { path, sha256: io::sha256_hex(&raw) }];
    Ok((arts, inputs, config))
}

fn synth_spec(s: &SynthArgs) -> Result<SyntheticSpec, CliError> {
    let snr_db: f64 = s.snr_db.trim().parse().map_err(|_| CliError::Input(format!("--snr-db: cannot parse `{}`", s.snr_db)))?;
    let d = SyntheticSpec::default();
    Ok(SyntheticSpec {
        sample_rate: s.sample_rate,
        duration: s.duration,
        f0: s.f0,
        ar_center: s.ar_center,
        ar_radius: s.ar_radius,
        fm_start: s.fm_start,
        fm_step: s.fm_step,
        fm_period: s.fm_period.unwrap_or(d.fm_period),
        arma_radius: s.arma_radius,
        snr_db,
        seed: s.seed,
    })
}

fn synth(s: &SynthArgs) -> Result<(Artifacts, Value), CliError> {
    let spec = synth_spec(s)?;
    let data = gen_synthetic(&spec)?;
    let w = window_samples(s.window_sec, spec.sample_rate)?;
    let j = s.grid.unwrap_or(w);
    if data.y.len() < w {
        return Err(CliError::Input("record is shorter than one ground-truth window".into()));
    }
    let truth = ground_truth(&spec, w, j)?;
    let grid = FrequencyGrid::new(j, spec.sample_rate)?;
    let times: Vec<f64> = window_starts(data.y.len(), w, w).iter().map(|&i| i as f64 / spec.sample_rate).collect();
    let mut arts = Artifacts::default();
    arts.add("synth.csv", io::series_csv(&data.t, &data.y));
    arts.add("truth.csv", io::matrix_csv(&truth));
    arts.add("freqs.csv", io::column_csv(&grid.hz()));
    arts.add("times.csv", io::column_csv(&times));
    let snr = if spec.snr_db.is_finite() { json!(spec.snr_db) } else { json!(s.snr_db.trim()) };
    let mut cfg = serde_json::to_value(&spec).map_err(|e| CliError::Io(e.to_string()))?;
    cfg["snr_db"] = snr;
    let config = json!({"spec": cfg, "noise_sigma": data.sigma, "truth_window_samples": w, "truth_bins": j,
        "truth_units": "PSD per cycle/sample, averaged over each frequency bin"});
    Ok((arts, config))
}

fn theory(t: &TheoryArgs) -> Result<(String, String, Value), CliError> {
    let (nn, n) = (t.n_windows, t.n);
    if n == 0 || n > nn {
        return Err(CliError::Input(format!("--n must lie in 1..=N (N = {nn}), got {n}")));
    }
    let check_alpha = |a: &[f64]| -> Result<(), CliError> {
        if a.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(CliError::Input("alpha grid values must lie in [0, 1)".into()));
        }
        Ok(())
    };
    let (name, header, rows) = match t.curve {
        Curve::Kappa | Curve::Mu => {
            let alphas = grid::linear(&t.alpha_grid)?;
            check_alpha(&alphas)?;
            let rows = alphas
                .iter()
                .map(|&a| {
                    let (k, m) = kappa_mu(&WeightParams::flat(a, t.q_over_sigma2, t.rw)?, n, nn)?;
                    Ok((a, if t.curve == Curve::Kappa { k } else { m }))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (if t.curve == Curve::Kappa { "kappa" } else { "mu" }, ("alpha", "value"), rows)
        }
        Curve::AlphaStar => {
            let qs = grid::logarithmic(&t.q_grid)?;
            let rows = qs
                .iter()
                .map(|&q| {
                    let u = alpha_for_unit_kappa(q, n, nn, t.rw)?;
                    Ok((q, if u.found { u.alpha } else { f64::NAN }))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("alpha-star", ("q_over_sigma2", "value"), rows)
        }
        Curve::Filters => {
            let ss = steady_state_scalar(t.alpha, t.q_over_sigma2, 1.0, t.rw)?;
            let span = t.span as i64;
            let rows = (-span..=span).map(|d| (d as f64, ss.lambda.powi(d.unsigned_abs() as i32) * ss.gamma)).collect();
            ("filters", ("offset", "value"), rows)
        }
        Curve::Bounds => {
            let alphas = grid::linear(&t.alpha_grid)?;
            check_alpha(&alphas)?;
            let taps = compute_dpss(t.window_samples, t.time_bandwidth / t.window_samples as f64, t.tapers)?;
            let rows = alphas
                .iter()
                .map(|&a| {
                    let c = TheoryCurves::evaluate(a, t.q_over_sigma2, t.rw, n, nn, &taps.lambda)?;
                    Ok((a, if t.bound == BoundKind::Bias { c.bias_bound } else { c.variance_bound }))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            ("bounds", ("alpha", "value"), rows)
        }
    };
    let csv = io::tidy_csv(header, &rows);
    let config = serde_json::to_value(t).map_err(|e| CliError::Io(e.to_string()))?;
    Ok((format!("{name}.csv"), csv, config))
}

fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.manifest).map_err(|e| CliError::Input(format!("{}: {e}", args.manifest.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.manifest.display())))?;
    let mut cmd = manifest.invocation.clone();
    let out = args.out.clone();
    match &mut cmd {
        Command::Analyze(a) => {
            let rec = manifest.inputs.first().ok_or_else(|| CliError::Input("manifest lists no input".into()))?;
            a.input = rec.path.clone();
            let bytes = fs::read(&a.input).map_err(|e| CliError::Input(format!("{}: {e}", a.input.display())))?;
            if io::sha256_hex(&bytes) != rec.sha256 {
                return Err(CliError::Input(format!("{} no longer matches the recorded hash", a.input.display())));
            }
            a.out = Some(out.clone());
        }
        Command::Synth(s) => s.out = out.clone(),
        Command::Theory(t) => t.out = Some(out.clone()),
        Command::Replay(_) => return Err(CliError::Input("a replay manifest cannot itself be replayed".into())),
    }
    let (dir, artifacts) = produce(&cmd)?.expect("replay always writes a directory");
    let hashes = artifacts.hashes();
    let mismatched: Vec<&String> = manifest
        .artifacts
        .iter()
        .filter(|(name, h)| hashes.get(*name) != Some(*h))
        .map(|(name, _)| name)
        .collect();
    artifacts.write_all(&dir)?;
    if mismatched.is_empty() {
        println!("reproduced {} artifacts bit-identically in {}", manifest.artifacts.len(), dir.display());
        Ok(())
    } else {
        Err(CliError::Core(dbmt_core::Error::NumericalFailure(format!("replay differs in {mismatched:?}"))))
    }
}
