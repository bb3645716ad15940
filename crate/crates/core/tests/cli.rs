use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use ildvit_core::dsp::Label;
use ildvit_core::io::{synth_recording, write_wav};
use ildvit_core::manifest::Manifest;

fn ildvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ildvit"))
        .args(args)
        .output()
        .expect("spawn ildvit")
}

fn ok(args: &[&str]) -> String {
    let out = ildvit(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
        .unwrap_or_else(|| panic!("{key} missing in {line:?}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Error output is exactly one `error: kind=... msg=...` line.
fn assert_one_line_error(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let errors: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(errors.len(), 1, "{stderr}");
    assert!(errors[0].starts_with(&format!("error: kind={kind} msg=")), "{stderr}");
    assert_eq!(stderr.lines().last(), Some(errors[0]));
}

fn tmp_files(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap().to_string_lossy().contains(".tmp") {
                found.push(p);
            }
        }
    }
    found
}

const SMALL: [&str; 6] = ["--set", "n_blocks=1", "--set", "epochs=2", "--set", "batch_size=16"];

#[test]
fn every_subcommand_end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let data = w.join("data");
    let cache = w.join("cache");
    let run = w.join("run");
    let manifest = data.join("manifest.csv");

    let out = ok(&[
        "synth", "--out", s(&data), "--subjects-per-class", "5", "--min-duration", "15",
        "--max-duration", "20", "--heart-bank", "2", "--seed", "3",
    ]);
    assert!(out.contains("recordings=10"), "{out}");
    assert!(data.join("heart_bank/heart_000.wav").exists());

    let first = ok(&["featurize", "--manifest", s(&manifest), "--cache", s(&cache)]);
    let second = ok(&["featurize", "--manifest", s(&manifest), "--cache", s(&cache)]);
    assert_eq!(field(&first, "computed"), "10");
    assert_eq!(field(&second, "reused"), "10");
    assert_eq!(field(&first, "content_hash"), field(&second, "content_hash"));

    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&run), "--cache", s(&cache)];
    args.extend(SMALL);
    let out = ok(&args);
    for f in ["checkpoint.ildvit", "history.csv", "metrics.csv", "scores.csv", "split.csv", "config.resolved.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(out.lines().any(|l| l.starts_with("test acc=")), "{out}");
    let ckpt = run.join("checkpoint.ildvit");

    let ev_dir = w.join("eval");
    let out = ok(&[
        "evaluate", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--partition", "test",
        "--out", s(&ev_dir), "--cache", s(&cache),
    ]);
    assert!(out.contains("confusion tp="), "{out}");
    assert!(ev_dir.join("roc_ild.csv").exists());

    let cv = w.join("cv");
    let mut args = vec!["crossval", "--manifest", s(&manifest), "--out", s(&cv), "--set", "folds=2"];
    args.extend(SMALL);
    let out = ok(&args);
    assert!(out.contains("pooled acc="), "{out}");

    let bank = format!("noise_bank={}", data.join("heart_bank").display());
    let out = ok(&[
        "noise-eval", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--set",
        "noise_kind=heart_sound", "--set", &bank, "--set", "snr_grid_db=0,10",
    ]);
    assert_eq!(out.lines().count(), 1 + 3 * 2);

    let wav = data.join("wav/ild_s000_r00.wav");
    let out = ok(&["infer", s(&wav), "--checkpoint", s(&ckpt)]);
    let last = out.lines().last().unwrap();
    assert!(["Healthy", "ILD"].contains(&field(last, "label")));
    for key in ["p_healthy", "p_ild"] {
        let p: f64 = field(last, key).parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    let report = w.join("bench.json");
    let out = ok(&["benchmark", "--checkpoint", s(&ckpt), "--out", s(&report)]);
    assert_eq!(field(&out, "segments"), "7");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["model_size_bytes"].as_u64().unwrap(), std::fs::metadata(&ckpt).unwrap().len());
    assert!(json["peak_transient_bytes_max"].as_u64().unwrap() > 0);

    let emb = w.join("emb.csv");
    ok(&["export-embeddings", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&emb)]);
    let text = std::fs::read_to_string(&emb).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == 67));

    let out = ok(&["params", "--config", s(&run.join("config.resolved.txt"))]);
    assert!(out.contains("transformer_block_1\t83200\n"), "{out}");
    assert!(out.contains("total\t99906\n"), "{out}");

    assert!(tmp_files(w).is_empty(), "{:?}", tmp_files(w));
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let dir = tempfile::tempdir().unwrap();
    assert_one_line_error(&ildvit(&["params", "--frobnicate"]), "usage");
    assert_eq!(ildvit(&["params", "--frobnicate"]).status.code(), Some(2));
    assert_one_line_error(&ildvit(&["params", "--set", "nope=1"]), "config");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 3\nwindow = 5\n").unwrap();
    assert_one_line_error(&ildvit(&["params", "--config", cfg.to_str().unwrap()]), "config");
    assert_one_line_error(
        &ildvit(&["infer", "/no/such.wav", "--checkpoint", "/no/such.ckpt"]),
        "io",
    );
    let bad_wav = dir.path().join("x.wav");
    std::fs::write(&bad_wav, b"RIFF").unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, format!("path,recording_id,subject_id,label,source\n{},a,s,sick,SYNTH\n", bad_wav.display())).unwrap();
    assert_one_line_error(
        &ildvit(&["train", "--manifest", m.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]),
        "manifest",
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn external_manifest_layouts_run_unchanged() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests");
    let dir = tempfile::tempdir().unwrap();
    let mut combined = String::from("path,recording_id,subject_id,label,source\n");
    for name in ["bracets_example.csv", "kauh_example.csv"] {
        let text = std::fs::read_to_string(root.join(name)).unwrap();
        let parsed = Manifest::parse_csv(&text, dir.path()).unwrap();
        assert!(parsed.len() >= 4);
        combined.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
    }
    let manifest_path = dir.path().join("combined.csv");
    std::fs::write(&manifest_path, &combined).unwrap();
    let m = Manifest::load(&manifest_path, false).unwrap();
    for (i, e) in m.entries().iter().enumerate() {
        std::fs::create_dir_all(e.path.parent().unwrap()).unwrap();
        write_wav(&e.path, &synth_recording(e.label, 15.0, i as u64)).unwrap();
    }
    let subjects = m.subjects();
    for label in Label::ALL {
        assert!(subjects.values().filter(|&&l| l == label).count() >= 3);
    }
    let out_dir = dir.path().join("run");
    let mut args = vec!["train", "--manifest", s(&manifest_path), "--out", s(&out_dir)];
    args.extend(SMALL);
    ok(&args);
    assert!(out_dir.join("checkpoint.ildvit").exists());
}
