use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dbmt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbmt")).args(args).current_dir(cwd).output().expect("spawn dbmt")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth_short(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", name, "--duration", "60", "--seed", "1"];
    args.extend_from_slice(extra);
    ok(&dbmt(&args, dir));
}

#[test]
fn synth_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    synth_short(tmp.path(), "a", &[]);
    synth_short(tmp.path(), "b", &[]);
    for f in ["synth.csv", "truth.csv", "freqs.csv", "times.csv", "manifest.json"] {
        assert!(tmp.path().join("a").join(f).exists(), "{f}");
    }
    let a = fs::read(tmp.path().join("a/synth.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/synth.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,y\n"));
    assert_eq!(text.lines().count(), 1 + 3000);
    let truth = fs::read_to_string(tmp.path().join("a/truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 10);
    assert_eq!(truth.lines().next().unwrap().split(',').count(), 300);
}

#[test]
fn default_synth_covers_ten_minutes() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dbmt(&["synth", "--out", "d"], tmp.path()));
    let text = fs::read_to_string(tmp.path().join("d/synth.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 30000);
    let last: f64 = text.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((last - 599.98).abs() < 1e-9);
}

#[test]
fn infinite_snr_is_noiseless() {
    let tmp = tempfile::tempdir().unwrap();
    synth_short(tmp.path(), "clean", &["--snr-db", "inf"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("clean/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["noise_sigma"], 0.0);
}

#[test]
fn analyze_each_method_and_repeat_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    synth_short(tmp.path(), "s", &[]);
    let input = "s/synth.csv";
    for method in ["dbmt", "logdbmt", "mt"] {
        let a = format!("{method}-1");
        let b = format!("{method}-2");
        for out in [&a, &b] {
            let o = dbmt(
                &["analyze", input, "--method", method, "--window-sec", "6", "--time-bandwidth", "3", "--tapers", "3", "--seed", "4", "--out", out],
                tmp.path(),
            );
            ok(&o);
        }
        for f in ["spectrogram.csv", "ci_lo.csv", "ci_hi.csv", "freqs.csv", "times.csv"] {
            let x = fs::read(tmp.path().join(&a).join(f)).unwrap();
            assert_eq!(x, fs::read(tmp.path().join(&b).join(f)).unwrap(), "{method} {f}");
        }
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join(&a).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["invocation"]["method"], method);
        assert_eq!(manifest["invocation"]["window_sec"], 6.0);
        assert_eq!(manifest["invocation"]["tapers"], 3);
        let spec = fs::read_to_string(tmp.path().join(&a).join("spectrogram.csv")).unwrap();
        let rows = if method == "mt" { 19 } else { 10 };
        assert_eq!(spec.lines().count(), rows, "{method}");
        assert_eq!(spec.lines().next().unwrap().split(',').count(), 300);
        assert!(spec.lines().next().unwrap().split(',').next().unwrap().contains('e'));
    }
}

#[test]
fn replay_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    synth_short(tmp.path(), "s", &[]);
    ok(&dbmt(&["analyze", "s/synth.csv", "--method", "dbmt", "--out", "first", "--db"], tmp.path()));
    let o = dbmt(&["replay", "first/manifest.json", "--out", "second"], tmp.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("bit-identically"));
    let a = fs::read(tmp.path().join("first/spectrogram.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("second/spectrogram.csv")).unwrap());
}

#[test]
fn input_errors_exit_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    let o = dbmt(&["analyze", "empty.csv", "--method", "dbmt", "--out", "e"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("e").exists());

    fs::write(tmp.path().join("bad.csv"), "t,y\n0,1\n0.02,oops\n").unwrap();
    let o = dbmt(&["analyze", "bad.csv", "--method", "mt", "--out", "b"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!tmp.path().join("b").exists());

    let jitter: String = std::iter::once("t,y\n".to_string())
        .chain((0..600).map(|i| format!("{},{}\n", i as f64 * 0.02 + if i == 300 { 0.001 } else { 0.0 }, 0.0)))
        .collect();
    fs::write(tmp.path().join("jitter.csv"), jitter).unwrap();
    let o = dbmt(&["analyze", "jitter.csv", "--method", "mt", "--out", "j"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-uniform"));

    synth_short(tmp.path(), "s", &[]);
    let o = dbmt(&["analyze", "s/synth.csv", "--method", "dbmt", "--overlap", "0.5", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());

    let o = dbmt(&["analyze", "s/synth.csv", "--method", "bogus"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

fn tidy(out: &Output) -> Vec<(f64, f64)> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains(','));
    lines
        .map(|l| {
            let mut it = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect()
}

#[test]
fn theory_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let mu = dbmt(&["theory", "mu", "--alpha-grid", "0:0.99:0.01", "--q-over-sigma2", "10", "--N", "100", "--n", "50"], tmp.path());
    ok(&mu);
    let rows = tidy(&mu);
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.1 <= 1.0));
    assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));

    let star = dbmt(&["theory", "alpha-star", "--q-grid", "0.1:100"], tmp.path());
    ok(&star);
    let rows = tidy(&star);
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));

    let single = dbmt(&["theory", "kappa", "--alpha-grid", "0.5"], tmp.path());
    ok(&single);
    assert_eq!(tidy(&single).len(), 1);

    for curve in ["filters", "bounds"] {
        ok(&dbmt(&["theory", curve, "--out", curve], tmp.path()));
        assert!(tmp.path().join(curve).join(format!("{curve}.csv")).exists());
        assert!(tmp.path().join(curve).join("manifest.json").exists());
    }

    let bad = dbmt(&["theory", "mu", "--alpha-grid", "1:0:0.1"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    let bad = dbmt(&["theory", "mu", "--alpha-grid", "0:1.5:0.1"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}
