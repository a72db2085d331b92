use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phrasenet_cli::checkpoint::Checkpoint;
use phrasenet_cli::commands::{step_checkpoint_name, METRICS_LOG};
use phrasenet_cli::corpus::read_manifest;
use phrasenet_core::train::StepMetrics;
use phrasenet_core::vocoder::read_wav;
use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phrasenet"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn write_json(path: &Path, v: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn tiny_train_config(corpus: &Path, extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({
        "system_variant": "mtl_tacotron",
        "corpus_dir": s(corpus),
        "batch_size": 4,
        "max_steps": 6,
        "checkpoint_interval": 3,
        "char_embed": 8, "enc_prenet1": 8, "enc_prenet2": 6, "enc_rnn": 4,
        "attention_dim": 4, "dec_prenet": 4, "attention_rnn": 6, "decoder_rnn": 6,
        "prosody_lstm": 4, "prosody_hidden": 4,
        "max_decoder_steps": 8
    });
    if let serde_json::Value::Object(m) = extra {
        for (k, x) in m {
            v[k] = x;
        }
    }
    v
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = root.join("spec.json");
    write_json(&spec, json!({"utterances": 12, "max_words": 4, "vocab_size": 10}));
    let corpus = root.join("corpus");
    ok(&["make-corpus", "--config", s(&spec), "--seed", "5", "--out", s(&corpus)]);
    let config = root.join("train.json");
    write_json(&config, tiny_train_config(&corpus, json!({})));
    ok(&["extract-mels", "--config", s(&config)]);
    Fixture {
        _dir: dir,
        root,
        config,
    }
}

fn read_log(dir: &Path) -> String {
    fs::read_to_string(dir.join(METRICS_LOG)).unwrap()
}

#[test]
fn full_pipeline_with_resume_synth_and_eval() {
    let f = fixture();
    let corpus = f.root.join("corpus");
    let manifest = read_manifest(&corpus).unwrap();
    assert_eq!(manifest.ids.len(), 12);
    assert!(corpus.join("mels").join(format!("{}.mel", manifest.ids[0])).exists());

    let a = f.root.join("run_a");
    ok(&["train", "--config", s(&f.config), "--out", s(&a)]);
    let log_a = read_log(&a);
    assert_eq!(log_a.lines().count(), 6);
    for line in log_a.lines() {
        let m = StepMetrics::parse_log_line(line).unwrap();
        assert!(m.loss_total.is_finite());
        assert_eq!(m.loss_total, m.loss_wav + 0.5 * m.loss_pe);
    }

    // Resume from the step-3 checkpoint into a fresh directory holding the first half of the log.
    let b = f.root.join("run_b");
    fs::create_dir_all(&b).unwrap();
    let ckpt = a.join(step_checkpoint_name(3));
    fs::write(b.join(METRICS_LOG), log_a.lines().take(5).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    ok(&["train", "--config", s(&f.config), "--out", s(&b), "--resume", s(&ckpt)]);
    assert_eq!(read_log(&b), log_a);
    let fa = Checkpoint::load(&a.join("final.ckpt")).unwrap();
    let fb = Checkpoint::load(&b.join("final.ckpt")).unwrap();
    assert_eq!(fa.to_bytes().unwrap(), fb.to_bytes().unwrap());

    let info = ok(&["inspect-checkpoint", s(&a.join("final.ckpt"))]);
    assert!(info.contains("variant mtl_tacotron, step 6"), "{info}");

    let wav = f.root.join("out.wav");
    ok(&[
        "synth",
        "--checkpoint",
        s(&a.join("final.ckpt")),
        "--text",
        "hello#B world.",
        "--out",
        s(&wav),
        "--labels",
        "annotated",
    ]);
    let (signal, sr) = read_wav(&wav).unwrap();
    assert_eq!(sr, 16000);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(wav.with_extension("json")).unwrap()).unwrap();
    let frames = side["frames"].as_u64().unwrap() as usize;
    assert!(frames % 5 == 0 && frames <= 40, "{frames}");
    assert_eq!(signal.len(), (frames - 1) * 256);
    assert_eq!(side["alignment"].as_array().unwrap().len(), frames / 5);
    assert!(side["unknown_characters"].as_u64().unwrap() > 0);

    let eval = ok(&["eval-breaks", "--checkpoint", s(&a.join("final.ckpt"))]);
    assert!(eval.starts_with("precision "), "{eval}");
}

#[test]
fn pretrain_then_pe_tacotron_keeps_prosody_frozen() {
    let f = fixture();
    let corpus = f.root.join("corpus");
    // One config drives both the pretraining run and the joint run.
    let pre = f.root.join("pre");
    let pre_path = pre.join("final.ckpt");
    let pe_cfg = f.root.join("pe.json");
    write_json(
        &pe_cfg,
        tiny_train_config(&corpus, json!({"system_variant": "pe_tacotron", "prosody_checkpoint": s(&pre_path)})),
    );
    ok(&["train", "--pretrain-prosody", "--config", s(&pe_cfg), "--out", s(&pre)]);
    let pre_ckpt = Checkpoint::load(&pre_path).unwrap();
    assert!(pre_ckpt.snapshot.frozen.iter().all(|n| n.starts_with("prosody.")));
    assert!(!pre_ckpt.snapshot.frozen.is_empty());

    let run = f.root.join("pe");
    ok(&["train", "--config", s(&pe_cfg), "--out", s(&run)]);
    let joint = Checkpoint::load(&run.join("final.ckpt")).unwrap();
    for (_, p) in pre_ckpt.state.store.iter() {
        let q = joint.state.store.by_name(&p.name).unwrap();
        assert_eq!(p.tensor.data(), q.tensor.data(), "{}", p.name);
    }
    for line in read_log(&run).lines() {
        let m = StepMetrics::parse_log_line(line).unwrap();
        assert_eq!(m.loss_total, m.loss_wav);
    }
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write_json(&cfg, json!({"batch_size": 0, "w": -1.0, "no_such_key": 3}));
    let out = run(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no_such_key"), "{err}");

    write_json(&cfg, json!({"batch_size": 0, "w": -1.0}));
    let out = run(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("batch_size") && err.contains("w:"), "{err}");

    let out = run(&["make-corpus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"MTLTAC01 this is not a checkpoint").unwrap();
    let out = run(&["inspect-checkpoint", s(&junk)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CRC"));

    let cfg = dir.path().join("c.json");
    write_json(&cfg, json!({"corpus_dir": s(&dir.path().join("missing"))}));
    let out = run(&["extract-mels", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn grad_check_command_reports_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let stdout = ok(&["grad-check", "--out", s(&report)]);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for want in ["primitive/matmul", "lstm_cell", "attention_step", "full_mtl_loss"] {
        assert!(names.contains(&want), "{names:?}");
    }
}
