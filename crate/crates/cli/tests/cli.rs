use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn auxsumm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auxsumm"))
        .args(args)
        .output()
        .expect("spawn auxsumm")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--hidden-dim", "8", "--embed-dim", "4", "--batch-size", "2", "--precision", "f64",
];

/// Small training set with references, plus its vocabulary.
fn toy_corpus(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("train.jsonl");
    fs::write(
        &data,
        concat!(
            r#"{"source":"flood water rising river bank homes","reference":"flood water rising","origin_ids":["1"]}"#, "\n",
            r#"{"source":"rescue teams reach village after storm","reference":"rescue teams reach village","origin_ids":["2"]}"#, "\n",
            r#"{"source":"power outage hits city centre tonight","reference":"power outage city","origin_ids":["3"]}"#, "\n",
        ),
    )
    .unwrap();
    let vocab = dir.join("vocab.txt");
    let o = auxsumm(&["build-vocab", "--dataset", p(&data), "--output", p(&vocab)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, vocab)
}

#[test]
fn evaluate_identical_files_scores_one() {
    let dir = TempDir::new().unwrap();
    let text = "flood water rising fast\nrescue teams arrive\n";
    let cands = dir.path().join("c.txt");
    let refs = dir.path().join("r.txt");
    let report = dir.path().join("report.csv");
    fs::write(&cands, text).unwrap();
    fs::write(&refs, text).unwrap();
    let o = auxsumm(&[
        "evaluate", "--candidates", p(&cands), "--references", p(&refs), "--report", p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        for i in [3, 6, 9] {
            assert_eq!(cells[i], "1.000000", "{row}");
        }
    }
}

#[test]
fn summarize_with_missing_checkpoint_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.bin");
    let o = auxsumm(&[
        "summarize", "--checkpoint", p(&missing), "--vocab", "v", "--input", "i", "--output", "o",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn unknown_flags_and_bad_values_exit_2() {
    let o = auxsumm(&["evaluate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let f = dir.path().join("x.txt");
    fs::write(&f, "a\n").unwrap();
    let args = ["evaluate", "--candidates", p(&f), "--references", p(&f), "--report", "r.csv"];
    let o = auxsumm(&[&args[..], &["--beam-size", "zero"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beam-size"));
    let o = auxsumm(&[&args[..], &["--w1", "0.7"]].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file_and_resolved_config_is_printed() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("x.txt");
    fs::write(&f, "a b c\n").unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# experiment\nbeam_size = 3\nlearning-rate = 0.2\n").unwrap();
    let report = dir.path().join("r.csv");
    let o = auxsumm(&[
        "evaluate", "--candidates", p(&f), "--references", p(&f), "--report", p(&report),
        "--config", p(&cfg), "--beam-size", "7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("beam-size = 7"), "{err}");
    assert!(err.contains("learning-rate = 0.2"), "{err}");
    assert!(err.contains("hidden-dim = 256"), "{err}");

    fs::write(&cfg, "beam-size = \n").unwrap();
    let o = auxsumm(&[
        "evaluate", "--candidates", p(&f), "--references", p(&f), "--report", p(&report),
        "--config", p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_ten_iterations_writes_a_loadable_checkpoint_then_summarizes() {
    let dir = TempDir::new().unwrap();
    let (data, vocab) = toy_corpus(dir.path());
    let ckpts = dir.path().join("ckpt");
    let o = auxsumm(
        &[
            &["train", "--dataset", p(&data), "--vocab", p(&vocab), "--checkpoint-dir", p(&ckpts)][..],
            TINY,
            &["--iterations", "10", "--checkpoint-every", "5"],
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let last = ckpts.join("ckpt-00000010.bin");
    assert!(ckpts.join("ckpt-00000005.bin").exists());
    assert!(last.exists());
    let metrics = fs::read_to_string(ckpts.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);

    let out = dir.path().join("summaries.txt");
    let side = dir.path().join("side.json");
    let o = auxsumm(&[
        "summarize", "--checkpoint", p(&last), "--vocab", p(&vocab), "--input", p(&data),
        "--output", p(&out), "--sidecar", p(&side), "--beam-size", "2", "--min-length", "2",
        "--max-length", "6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summaries = fs::read_to_string(&out).unwrap();
    assert_eq!(summaries.lines().count(), 3);
    for line in summaries.lines() {
        let n = line.split_whitespace().count();
        assert!((2..=6).contains(&n), "{line}");
    }
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
    let entries = side.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        assert!(e["log_prob"].as_f64().unwrap() <= 0.0);
        let pg = e["p_gen"].as_array().unwrap();
        assert!(!pg.is_empty());
        assert!(pg.iter().all(|v| (0.0..=1.0).contains(&v.as_f64().unwrap())));
    }
}

#[test]
fn resumed_training_extends_the_same_metrics_log() {
    let dir = TempDir::new().unwrap();
    let (data, vocab) = toy_corpus(dir.path());
    let base = ["train", "--dataset", p(&data), "--vocab", p(&vocab)];

    let full = dir.path().join("full");
    let o = auxsumm(&[&base[..], &["--checkpoint-dir", p(&full), "--iterations", "6"], TINY].concat());
    assert!(o.status.success(), "{}", stderr(&o));

    let split = dir.path().join("split");
    let o = auxsumm(&[&base[..], &["--checkpoint-dir", p(&split), "--iterations", "3"], TINY].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let resume = split.join("ckpt-00000003.bin");
    let o = auxsumm(
        &[&base[..], &["--checkpoint-dir", p(&split), "--iterations", "6", "--resume", p(&resume)]].concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    assert_eq!(
        fs::read_to_string(full.join("metrics.csv")).unwrap(),
        fs::read_to_string(split.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(full.join("ckpt-00000006.bin")).unwrap(),
        fs::read(split.join("ckpt-00000006.bin")).unwrap()
    );
}

#[test]
fn preprocess_extract_and_raw_summarize() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(
        &raw,
        "Flood water rising near the river bank http://t.co/x #flood\n\
         @user Rescue teams reach the village after storm\n\
         ok\n\
         Power outage hits the city centre tonight :)\n",
    )
    .unwrap();
    let per = dir.path().join("tweets.jsonl");
    let o = auxsumm(&["preprocess", "--input", p(&raw), "--output", p(&per), "--per-tweet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&per).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(!text.contains("http") && !text.contains("flood\"") && !text.contains("user"));

    let sel = dir.path().join("sel.jsonl");
    let o = auxsumm(&["extract", "--dataset", p(&per), "--output", p(&sel), "--budget", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel_text = fs::read_to_string(&sel).unwrap();
    let v: serde_json::Value = serde_json::from_str(sel_text.trim()).unwrap();
    assert!(v["source"].as_str().unwrap().split_whitespace().count() <= 8);

    let ranking = dir.path().join("rank.txt");
    fs::write(&ranking, "2\n0\n1\n").unwrap();
    let o = auxsumm(&[
        "extract", "--dataset", p(&per), "--output", p(&sel), "--ranking-file", p(&ranking), "--budget", "6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(fs::read_to_string(&sel).unwrap().trim()).unwrap();
    assert_eq!(v["origin_ids"], serde_json::json!(["4"]));

    let chunks = dir.path().join("chunks.jsonl");
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "flood and rescue\npower outage\n").unwrap();
    let o = auxsumm(&[
        "preprocess", "--input", p(&raw), "--output", p(&chunks), "--budget", "10", "--references", p(&refs),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let vocab = dir.path().join("vocab.txt");
    assert!(auxsumm(&["build-vocab", "--dataset", p(&chunks), "--output", p(&vocab)]).status.success());
    let ck = dir.path().join("ck");
    let o = auxsumm(
        &[
            &["train", "--dataset", p(&chunks), "--vocab", p(&vocab), "--checkpoint-dir", p(&ck)][..],
            TINY,
            &["--iterations", "2"],
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("summary.txt");
    let o = auxsumm(&[
        "summarize", "--raw", "--checkpoint", p(&ck.join("ckpt-00000002.bin")), "--vocab", p(&vocab),
        "--input", p(&raw), "--output", p(&out), "--min-length", "1", "--max-length", "4",
        "--keyphrase-at-decode",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1);
}

#[test]
fn mismatched_reference_count_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "flood water rising\n").unwrap();
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "one\ntwo\n").unwrap();
    let o = auxsumm(&[
        "preprocess", "--input", p(&raw), "--output", p(&dir.path().join("o.jsonl")), "--references", p(&refs),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
