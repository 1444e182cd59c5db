//! End-to-end checks of the binary: exit codes and the phase-by-phase flow.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "schema_version = 1

[bed]
mono_sentences = 200
task_sentences = 300
seq_train = 90
seq_eval = 30

[pretrain]
steps = 10
batch_size = 8

[lang]
steps = 10
batch_size = 8

[task]
steps = 10
batch_size = 8

[full_ft]
steps = 10
batch_size = 8

[matrix]
seeds = 4
tasks = seq
variants = t-noo, l-ort+t-noo
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthoadapt"))
        .arg("--out-dir")
        .arg(dir.join("runs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["matrix", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "schema_version = 1\n[bed]\nnot_a_key = 3\n");
    let out = run(dir.path(), &["--config", &cfg, "gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));

    let cfg = config(dir.path(), "[bed]\nseed = 1\n");
    assert_eq!(run(dir.path(), &["--config", &cfg, "gen-data"]).status.code(), Some(1));
}

#[test]
fn missing_artifacts_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TINY);
    let out = run(dir.path(), &["--config", &cfg, "train-lang", "--lang", "tgt"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &["--config", &cfg, "eval", "--task", "seq", "--lang", "tgt", "--variant", "t-noo"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().count() >= 20);
    assert!(stdout.lines().all(|l| l.starts_with("PASS\t")), "{stdout}");
}

#[test]
fn phase_by_phase_matches_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TINY);
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str()];
        full.extend_from_slice(args);
        let out = run(dir.path(), &full);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["gen-data"]);
    assert!(dir.path().join("runs/data/vocab.txt").exists());
    ok(&["pretrain-backbone"]);
    for lang in ["src", "tgt"] {
        ok(&["train-lang", "--lang", lang, "--ortho"]);
    }
    ok(&["train-task", "--task", "seq", "--variant", "l-ort+t-noo"]);
    let row = ok(&["eval", "--task", "seq", "--lang", "tgt", "--variant", "l-ort+t-noo"]);
    assert!(row.starts_with("l-ort+t-noo\tseq\ttgt\t"), "{row}");

    // The matrix reuses everything trained above and only adds t-noo.
    let matrix = ok(&["matrix"]);
    assert!(matrix.contains("| l-ort+t-noo |"), "{matrix}");
    let steps: usize = matrix
        .lines()
        .find_map(|l| l.strip_prefix("training steps executed: "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(steps, 10);
    let reports = std::fs::read_to_string(dir.path().join("runs/reports.tsv")).unwrap();
    let value = row.trim().rsplit('\t').next().unwrap();
    assert!(reports.contains(&format!("4\tl-ort+t-noo\tseq\ttgt\t{value}")), "{reports}\n{row}");
}
