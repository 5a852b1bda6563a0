use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asrbridge"))
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

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["count-params", "--scheme", "s11"]).status.code(), Some(1));
    assert_eq!(run(&["average", "--out", "/tmp/x.bin"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"audio_path\":\"a.wav\",\"text\":\"w1\",\"duration_s\":0.1}\nnot json\n").unwrap();
    let out = run(&["eval", "--ref", p(&bad), "--hyp", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn decode_rejects_bad_params_as_usage() {
    let out = run(&["decode", "--checkpoint", "c", "--manifest", "m", "--out", "o", "--beam-size", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn count_params_matches_library() {
    use asr_bridge::model::{count_params, BridgeConfig, FinetuneScheme};
    let text = ok(&["count-params", "--dims", "toy", "--json"]);
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 10);
    for (row, (name, scheme)) in rows.iter().zip(FinetuneScheme::presets()) {
        let c = count_params(&BridgeConfig::toy(), &scheme).unwrap();
        assert_eq!(row["scheme"], name);
        assert_eq!(row["total"], c.total());
        assert_eq!(row["adapter"], c.adapter);
    }
    let table = ok(&["count-params", "--scheme", "s4"]);
    assert!(table.contains("S4"));
    assert!(table.contains("published"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.config");
    fs::write(&cfg, "# corpus\nutts = 3\nname = first\nseed = 5\n").unwrap();
    ok(&["synth", "--out", p(dir.path()), "--config", p(&cfg), "--name", "second"]);
    assert!(!dir.path().join("first.jsonl").exists());
    let manifest = fs::read_to_string(dir.path().join("second.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);

    // The emitted config reproduces the run.
    let emitted = dir.path().join("second.config");
    let again = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", p(again.path()), "--config", p(&emitted)]);
    assert_eq!(
        fs::read(dir.path().join("second/second_00002.wav")).unwrap(),
        fs::read(again.path().join("second/second_00002.wav")).unwrap()
    );

    fs::write(&cfg, "utts = 3\nutts = 4\n").unwrap();
    assert_eq!(run(&["synth", "--out", p(dir.path()), "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn eval_joins_by_utterance_id() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let hyps = dir.path().join("hyps.jsonl");
    fs::write(
        &refs,
        "{\"audio_path\":\"a.wav\",\"text\":\"w1 w2\",\"duration_s\":0.1}\n\
         {\"audio_path\":\"b.wav\",\"text\":\"w3\",\"duration_s\":0.1}\n",
    )
    .unwrap();
    fs::write(
        &hyps,
        "{\"utt_id\":\"b\",\"text\":\"w3 w3\",\"score\":-1.0,\"length\":3}\n\
         {\"utt_id\":\"a\",\"text\":\"w1 w2\",\"score\":-1.0,\"length\":3}\n",
    )
    .unwrap();
    let line = ok(&["eval", "--ref", p(&refs), "--hyp", p(&hyps), "--set", "dev"]);
    // One insertion over three reference words.
    assert!(line.starts_with("dev"), "{line}");
    assert!(line.contains("33.33% (33.33%)"), "{line}");

    fs::write(&hyps, "{\"utt_id\":\"a\",\"text\":\"\",\"score\":-1.0,\"length\":1}\n").unwrap();
    assert_eq!(run(&["eval", "--ref", p(&refs), "--hyp", p(&hyps)]).status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", p(d), "--name", "train", "--utts", "24", "--seed", "1"]);
    ok(&["synth", "--out", p(d), "--name", "test", "--utts", "4", "--seed", "2"]);
    ok(&["synth", "--out", p(d), "--name", "noise", "--utts", "6", "--seed", "3", "--nonspeech-fraction", "1"]);
    let run_dir = d.join("run");
    ok(&[
        "train", "--manifest", p(&d.join("train.jsonl")), "--out", p(&run_dir), "--steps", "20",
        "--checkpoint-every", "5", "--warmup-steps", "2", "--lm-warmup-steps", "10", "--batch-size", "2",
        "--match-loss", "0.01,0.04", "--augment", "on",
    ]);
    for f in ["model.json", "checkpoints.json", "train.config", "train_log.jsonl", "ckpt_000020.bin"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let avg = d.join("avg/model.bin");
    ok(&["average", "--run", p(&run_dir), "--window", "2", "--out", p(&avg)]);
    assert!(d.join("avg/model.json").exists());

    let hyps = d.join("hyps.jsonl");
    ok(&[
        "decode", "--checkpoint", p(&avg), "--manifest", p(&d.join("test.jsonl")), "--out", p(&hyps),
        "--max-length", "8", "--no-repeat-ngram-size", "2",
    ]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(&hyps)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["length"].as_u64().unwrap() <= 8));
    let cfg = fs::read_to_string(d.join("hyps.jsonl.config")).unwrap();
    assert!(cfg.contains("no-repeat-ngram-size = 2"));

    let report = ok(&["eval", "--ref", p(&d.join("test.jsonl")), "--hyp", p(&hyps)]);
    assert!(report.contains('(') && report.contains(')'));

    let nset = d.join("nset");
    ok(&[
        "nset-finetune", "--checkpoint", p(&avg), "--manifest", p(&d.join("train.jsonl")), "--nonspeech",
        p(&d.join("noise.jsonl")), "--out", p(&nset), "--steps", "4", "--batch-size", "2",
    ]);
    assert!(nset.join("final.bin").exists());
}
