use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nsf_core::io::{read_wav, write_f0, write_wav};
use nsf_core::{F0Track, Waveform};
use tempfile::TempDir;

fn nsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsf"))
        .args(args)
        .output()
        .expect("nsf binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = nsf(args);
    assert!(out.status.success(), "nsf {args:?} failed: {}", stderr(&out));
    stdout(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn constant_f0(dir: &TempDir, name: &str, hz: f64, frames: usize) -> PathBuf {
    let p = dir.path().join(name);
    write_f0(&p, &F0Track::new(vec![hz; frames], 0.005).unwrap()).unwrap();
    p
}

fn stat(output: &str, key: &str) -> f64 {
    output
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key} in {output}"))
}

#[test]
fn same_seed_gives_identical_wav_bytes() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 130.0, 100);
    let (a, b, c) = (dir.path().join("a.wav"), dir.path().join("b.wav"), dir.path().join("c.wav"));
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&["gen-source", "--f0", s(&f0), "--type", "cno", "--seed", seed, "-o", s(out)]);
    }
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn gen_source_echoes_configuration() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 130.0, 20);
    let out = ok(&["gen-source", "--f0", s(&f0), "--type", "sin", "-o", s(&dir.path().join("x.wav"))]);
    assert!(out.starts_with("# nsf gen-source"), "{out}");
    assert!(out.contains("# type = sin"), "{out}");
    assert!(out.contains("# seed = 0"), "{out}");
}

#[test]
fn gaussian_noise_source_is_symmetric() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 0.0, 1250);
    let wav = dir.path().join("rno.wav");
    ok(&["gen-source", "--f0", s(&f0), "--type", "rno", "--seed", "9", "-o", s(&wav)]);
    let x = read_wav(&wav).unwrap().into_samples();
    assert_eq!(x.len(), 100_000);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let skew = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
    assert!(var > 0.0);
    assert!(skew.abs() < 0.1, "skew {skew}");
}

#[test]
fn cyclic_analysis_reports_decay_near_tenth() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 100.0, 100);
    let csv = dir.path().join("analysis.csv");
    ok(&[
        "gen-source", "--f0", s(&f0), "--type", "cno", "--beta", "0.435",
        "-o", s(&dir.path().join("x.wav")), "--analysis", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let ratio = row[header.iter().position(|h| *h == "measured_ratio").unwrap()];
    assert!((ratio - 0.1).abs() < 0.01, "ratio {ratio}");
}

#[test]
fn analysis_requires_cyclic_noise() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 100.0, 10);
    let out = nsf(&[
        "gen-source", "--f0", s(&f0), "--type", "sin",
        "-o", s(&dir.path().join("x.wav")), "--analysis", s(&dir.path().join("a.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn unknown_source_type_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let f0 = constant_f0(&dir, "f0.txt", 100.0, 10);
    let out = nsf(&["gen-source", "--f0", s(&f0), "--type", "xyz", "-o", s(&dir.path().join("x.wav"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown source type"), "{}", stderr(&out));
}

#[test]
fn missing_input_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let out = nsf(&[
        "gen-source", "--f0", s(&dir.path().join("absent.f0")), "--type", "sin",
        "-o", s(&dir.path().join("x.wav")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn malformed_f0_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let f0 = dir.path().join("bad.f0");
    std::fs::write(&f0, "frame_shift_ms=5\n100\nabc\n").unwrap();
    let out = nsf(&["gen-source", "--f0", s(&f0), "--type", "sin", "-o", s(&dir.path().join("x.wav"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert!(nsf(&["--help"]).status.success());
    assert_eq!(nsf(&[]).status.code(), Some(1));
}

fn tone(dir: &TempDir, name: &str, hz: f64, len: usize) -> PathBuf {
    let p = dir.path().join(name);
    let x = (0..len)
        .map(|t| 0.3 * (2.0 * std::f64::consts::PI * hz * t as f64 / 16000.0).sin())
        .collect();
    write_wav(&p, &Waveform::new(x, 16000).unwrap()).unwrap();
    p
}

#[test]
fn loss_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let a = tone(&dir, "a.wav", 200.0, 8000);
    let f0 = constant_f0(&dir, "f0.txt", 200.0, 100);
    let out = ok(&["loss", "--ref", s(&a), "--gen", s(&a), "--mask-f0", s(&f0)]);
    assert_eq!(stat(&out, "plain"), 0.0);
    assert_eq!(stat(&out, "masked"), 0.0);
    assert_eq!(stat(&out, "plain[512:320:80]"), 0.0);
}

#[test]
fn loss_rejects_length_mismatch_unless_trimmed() {
    let dir = TempDir::new().unwrap();
    let a = tone(&dir, "a.wav", 200.0, 8000);
    let b = tone(&dir, "b.wav", 220.0, 7000);
    let out = nsf(&["loss", "--ref", s(&a), "--gen", s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    let out = ok(&["loss", "--ref", s(&a), "--gen", s(&b), "--trim", "--stft", "256:200:50"]);
    assert!(stat(&out, "plain") > 0.0);
    assert!(stat(&out, "plain[256:200:50]") > 0.0);
}

#[test]
fn split_bands_reconstruct_input() {
    let dir = TempDir::new().unwrap();
    let a = tone(&dir, "a.wav", 3000.0, 4000);
    let (lp, hp) = (dir.path().join("lp.wav"), dir.path().join("hp.wav"));
    ok(&["split-bands", "--wav", s(&a), "--lp", s(&lp), "--hp", s(&hp)]);
    let x = read_wav(&a).unwrap().into_samples();
    let l = read_wav(&lp).unwrap().into_samples();
    let h = read_wav(&hp).unwrap().into_samples();
    // both bands are quantized to 16 bits on write
    for t in 0..x.len() {
        assert!((l[t] + h[t] - x[t]).abs() < 2.0 / 32768.0, "sample {t}");
    }
}

#[test]
fn analyze_finds_tone_pitch() {
    let dir = TempDir::new().unwrap();
    let a = tone(&dir, "a.wav", 150.0, 8000);
    let reference = constant_f0(&dir, "ref.f0", 150.0, 100);
    let out = ok(&[
        "analyze", "--wav", s(&a), "-o", s(&dir.path().join("est.f0")), "--ref-f0", s(&reference),
    ]);
    assert!(stat(&out, "agreement") > 0.95, "{out}");
}

fn tiny_config(dir: &TempDir, extra: &str) -> PathBuf {
    let p = dir.path().join("tiny.cfg");
    std::fs::write(
        &p,
        format!(
            "version = 1\nrow = sin\nepochs = 1\ntrain_utts = 2\nval_utts = 1\nbatch_size = 1\n\
             channels = 2\ncond_hidden = 2\ncond_dims = 1\nmin_duration = 0.2\nmax_duration = 0.2\n\
             segment_samples = 1600\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn train_toy_writes_log_and_checkpoint_usable_by_resynth() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir, "");
    let ckpt = dir.path().join("m.ckpt");
    let out = ok(&["train-toy", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(out.contains("# source_type = sin"), "{out}");
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.epochs.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,steps,train_loss,train_plain,val_loss,beta"));
    assert_eq!(lines.count(), 2);

    let data = dir.path().join("data");
    ok(&["synth-data", "--config", s(&cfg), "--out-dir", s(&data)]);
    let wav = dir.path().join("r.wav");
    let out = ok(&[
        "resynth", "--ckpt", s(&ckpt), "--f0", s(&data.join("val_000.f0")),
        "--features", s(&data.join("val_000.feat")), "-o", s(&wav),
    ]);
    let a = stat(&out, "agreement");
    assert!((0.0..=1.0).contains(&a));
    let reference = read_wav(data.join("val_000.wav")).unwrap();
    assert_eq!(read_wav(&wav).unwrap().len(), reference.len());
}

#[test]
fn config_version_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("v2.cfg");
    std::fs::write(&cfg, "version = 2\nrow = sin\n").unwrap();
    let out = nsf(&["train-toy", "--config", s(&cfg), "--out", s(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("version 2"), "{}", stderr(&out));
}

#[test]
fn invalid_training_setting_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir, "lr = 0\n");
    let out = nsf(&["train-toy", "--config", s(&cfg), "--out", s(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn truncated_checkpoint_is_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir, "");
    let ckpt = dir.path().join("m.ckpt");
    ok(&["train-toy", "--config", s(&cfg), "--out", s(&ckpt)]);
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let data = dir.path().join("data");
    ok(&["synth-data", "--config", s(&cfg), "--out-dir", s(&data)]);
    let out = nsf(&[
        "resynth", "--ckpt", s(&ckpt), "--f0", s(&data.join("val_000.f0")),
        "--features", s(&data.join("val_000.feat")), "-o", s(&dir.path().join("r.wav")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
