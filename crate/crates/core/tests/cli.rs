use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nbc::model::{Checkpoint, ModelConfig, Params};
use nbc::objective::read_metrics;
use nbc::stft::StftConfig;
use nbc::WaveBuffer;

fn nbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbc"))
        .args(args)
        .env("NBC_THREADS", "1")
        .output()
        .expect("run nbc")
}

fn ok(args: &[&str]) -> String {
    let out = nbc(args);
    assert!(
        out.status.success(),
        "nbc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: usize, seed: u64) {
    ok(&[
        "simulate",
        "--out",
        p(dir),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--duration",
        "0.5",
        "--mics",
        "2",
        "--sample-rate",
        "8000",
    ]);
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let cfg = ModelConfig::tiny();
    let mut ckpt = Checkpoint::new(cfg.clone(), Params::init(&cfg, 3).unwrap()).unwrap();
    ckpt.stft = Some(StftConfig::new(128, 64, 8000).unwrap());
    let path = dir.join("ckpt");
    ckpt.save(&path).unwrap();
    path
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, 4, 7);
    simulate(&b, 4, 7);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 4);
    assert_eq!(fa, fb);

    let c = tmp.path().join("c");
    simulate(&c, 4, 8);
    assert_ne!(files(&c), fa);
}

#[test]
fn separate_writes_one_float_wav_per_speaker() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 2, 1);
    let ckpt = tiny_checkpoint(tmp.path());
    let out = tmp.path().join("sep");
    ok(&["separate", "--checkpoint", p(&ckpt), "--input", p(&data), "--out", p(&out)]);

    for id in fs::read_dir(&out).unwrap() {
        let dir = id.unwrap().path();
        let mixture = WaveBuffer::read_wav(data.join(dir.file_name().unwrap()).join("mixture.wav"), None).unwrap();
        let mut names: Vec<String> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["speaker_0.wav", "speaker_1.wav"]);
        for name in names {
            let path = dir.join(name);
            let spec = hound::WavReader::open(&path).unwrap().spec();
            assert_eq!(spec.sample_format, hound::SampleFormat::Float);
            assert_eq!(spec.bits_per_sample, 32);
            let w = WaveBuffer::read_wav(&path, Some(8000)).unwrap();
            assert_eq!(w.n_channels(), 1);
            assert_eq!(w.len(), mixture.len());
        }
    }

    // a single WAV input works the same way
    let single = tmp.path().join("single");
    let wav = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap()
        .join("mixture.wav");
    ok(&["separate", "--checkpoint", p(&ckpt), "--input", p(&wav), "--out", p(&single)]);
    assert!(single.join("mixture").join("speaker_1.wav").exists());
}

#[test]
fn targets_as_estimates_report_the_clamp() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 2, 2);
    let est = tmp.path().join("est");
    for e in fs::read_dir(&data).unwrap() {
        let dir = e.unwrap().path();
        if !dir.is_dir() {
            continue;
        }
        let dst = est.join(dir.file_name().unwrap());
        fs::create_dir_all(&dst).unwrap();
        for n in 0..2 {
            fs::copy(dir.join(format!("target_{n}.wav")), dst.join(format!("speaker_{n}.wav"))).unwrap();
        }
    }
    let csv = tmp.path().join("metrics.csv");
    ok(&["eval", "--data", p(&data), "--estimates", p(&est), "--out", p(&csv)]);
    let records = read_metrics(&csv).unwrap();
    assert_eq!(records.len(), 2);
    for r in records {
        assert_eq!(r.si_sdr, vec![60.0, 60.0]);
        assert_eq!(r.mean, 60.0);
    }
}

#[test]
fn separate_then_eval_matches_in_process_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 2, 3);
    let ckpt = tiny_checkpoint(tmp.path());
    let sep = tmp.path().join("sep");
    ok(&["separate", "--checkpoint", p(&ckpt), "--input", p(&data), "--out", p(&sep)]);
    let from_files = tmp.path().join("files.csv");
    ok(&["eval", "--data", p(&data), "--estimates", p(&sep), "--out", p(&from_files)]);
    let in_process = tmp.path().join("direct.csv");
    let stdout = ok(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&in_process)]);
    assert!(stdout.contains("RTF"));

    let a = read_metrics(&from_files).unwrap();
    let b = read_metrics(&in_process).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        for (u, v) in x.si_sdr.iter().zip(&y.si_sdr) {
            assert!((u - v).abs() < 1e-3, "{u} vs {v}");
        }
        assert!((x.improvement - y.improvement).abs() < 1e-3);
        assert!(y.rtf > 0.0);
    }
}

#[test]
fn train_then_export_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 2, 4);
    let out = tmp.path().join("run");
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"window": 128, "hop": 64, "model": {"h1": 8, "h2": 16, "l1": 1, "l2": 1, "heads": 2, "n_mics": 2}}"#).unwrap();
    ok(&[
        "train", "--config", p(&config), "--data", p(&data), "--val", p(&data), "--out", p(&out),
        "--epochs", "2", "--batch", "2",
    ]);
    let ckpt = out.join("best");
    assert!(ckpt.join("manifest.json").exists());
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.lines().count() >= 2);

    let maps = tmp.path().join("maps");
    ok(&["attn-export", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&maps)]);
    assert!(maps.join("block0_head1.csv").exists());
    assert!(maps.join("block0_head0.pgm").exists());

    let stdout = ok(&["rtf", "--checkpoint", p(&ckpt), "--duration", "0.5", "--repeats", "1"]);
    assert!(stdout.starts_with("RTF "), "{stdout}");

    // resuming continues from the saved step
    ok(&["train", "--data", p(&data), "--out", p(&out), "--resume", p(&out.join("last")), "--epochs", "3", "--batch", "2"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(nbc(&[]).status.code(), Some(1));
    assert_eq!(nbc(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(nbc(&["--help"]).status.code(), Some(0));

    let missing = tmp.path().join("nope");
    let out = nbc(&["eval", "--data", p(&missing), "--estimates", p(&missing), "--out", p(&tmp.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"windw": 3}"#).unwrap();
    assert_eq!(nbc(&["--config", p(&bad), "simulate", "--out", p(&missing)]).status.code(), Some(1));

    let data = tmp.path().join("data");
    simulate(&data, 1, 5);
    let out = nbc(&["eval", "--data", p(&data), "--out", p(&tmp.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(1), "needs a checkpoint or estimates");

    // a model built for other microphones is a configuration error
    let ckpt = tiny_checkpoint(tmp.path());
    let four = tmp.path().join("four");
    ok(&["simulate", "--out", p(&four), "--n", "1", "--duration", "0.5", "--mics", "4", "--sample-rate", "8000"]);
    assert_eq!(
        nbc(&["separate", "--checkpoint", p(&ckpt), "--input", p(&four), "--out", p(&tmp.path().join("s"))]).status.code(),
        Some(1)
    );

    // grad-check exits 0 below tolerance and 3 above, matching its report
    let out = nbc(&["grad-check", "--seed", "1"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let err: f64 = text
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("report line");
    let expected = if err < nbc::cli::GRAD_CHECK_TOLERANCE { 0 } else { 3 };
    assert_eq!(out.status.code(), Some(expected), "{text}");

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_nbc"))
        .args(["grad-check"])
        .env("NBC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
}
