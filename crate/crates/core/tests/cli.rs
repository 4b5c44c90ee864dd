use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dialog_match::corpus::{write_dialogues_jsonl, write_pairs_tsv};
use dialog_match::seeding::stream;
use dialog_match::synth::{self, SynthConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialog-match")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    dialogues: PathBuf,
    train: PathBuf,
    valid: PathBuf,
}

fn corpus(dir: &Path) -> Files {
    let pool = synth::generate(&SynthConfig::default(), 60, &mut stream(11, &[])).unwrap();
    let (train, valid) = pool.split_at(40);
    let files = Files {
        dialogues: dir.join("dialogues.jsonl"),
        train: dir.join("train.tsv"),
        valid: dir.join("valid.tsv"),
    };
    write_dialogues_jsonl(&synth::dialogues(train), std::fs::File::create(&files.dialogues).unwrap()).unwrap();
    let pairs = synth::training_pairs(train, 1, &mut stream(12, &[])).unwrap();
    write_pairs_tsv(&pairs, std::fs::File::create(&files.train).unwrap()).unwrap();
    let groups = synth::ranking_pairs(valid, 10, &mut stream(13, &[])).unwrap();
    write_pairs_tsv(&groups, std::fs::File::create(&files.valid).unwrap()).unwrap();
    files
}

fn train_args<'a>(f: &'a Files, out: &'a Path) -> Vec<&'a str> {
    vec![
        "train", "--pairs", s(&f.train), "--valid", s(&f.valid), "--dialogues", s(&f.dialogues),
        "--seed", "5", "--max-steps", "4", "--batch", "4", "--max-ctx", "40", "--max-resp", "12",
        "--out", s(out),
    ]
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = corpus(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["gen", "--dialogues", s(&f.dialogues), "--seed", "3", "--out", s(&out)]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.jsonl");
    assert!(!a.is_empty());
    assert_eq!(a, run("b.jsonl"));
}

#[test]
fn train_then_eval_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let f = corpus(dir.path());
    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    ok(&train_args(&f, &m1));
    ok(&train_args(&f, &m2));
    for name in ["train_log.jsonl", "model.bin", "vocab.txt", "config.json"] {
        assert_eq!(std::fs::read(m1.join(name)).unwrap(), std::fs::read(m2.join(name)).unwrap(), "{name}");
    }

    let ev = dir.path().join("eval");
    let out = ok(&["eval", "--groups", s(&f.valid), "--checkpoint", s(&m1.join("model.bin")), "--out", s(&ev)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("R_10@1"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("report.json")).unwrap()).unwrap();
    for key in ["R_2@1", "R_10@1", "R_10@2", "R_10@5"] {
        assert!(report.get(key).is_some(), "{key} missing from {report}");
    }
    let r = |k: &str| report[k].as_f64().unwrap();
    assert!(r("R_10@1") <= r("R_10@2") && r("R_10@2") <= r("R_10@5"));

    let an = dir.path().join("analysis");
    ok(&["analyze", "--rankings", s(&ev.join("rankings.jsonl")), "--edges", "1,4,7", "--out", s(&an)]);
    let csv = std::fs::read_to_string(an.join("breakdown.csv")).unwrap();
    assert!(csv.starts_with("lo,hi,groups,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let f = corpus(dir.path());
    let out = bin(&["train", "--valid", s(&f.valid), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin(&["gen", "--dialogues", s(&f.dialogues), "--tasks", "", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no tasks enabled"));
}

#[test]
fn malformed_input_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "1\thi__eot__there\tyo\n2\tfoo\tbar\n").unwrap();
    let out = bin(&["vocab", "--pairs", s(&bad), "--out", s(&dir.path().join("v"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.tsv") && err.contains("line 2"), "{err}");
}
