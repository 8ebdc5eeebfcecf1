//! End-to-end checks of the command-line surface: exit codes, file
//! formats, and the ablation grid's cell independence.

use std::path::Path;
use std::process::Command;

fn cba() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cba"))
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "corpus.vocab_size": 36,
  "corpus.n_train": 90,
  "corpus.n_test": 24,
  "corpus.n_zero_shot_words": 4,
  "corpus.seed": 5,
  "train.seed": 5,
  "train.epochs": 1,
  "train.pretrain_epochs": 2,
  "train.s_hat": 12,
  "eval.s_hat": 16
}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = cba().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage:"));
}

#[test]
fn unknown_command_prints_usage_and_fails() {
    let out = cba().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage:"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train.alpha": 1.5}"#).unwrap();
    let out = cba()
        .args(["stats", "--config", bad.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.alpha"), "{err}");
}

#[test]
fn runtime_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // eval without a backbone checkpoint is a runtime failure.
    let out = cba()
        .args(["eval", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_corpus_emits_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("corpus");
    let status = cba()
        .args(["gen-corpus", "--config", &cfg, "--out"])
        .arg(&out_dir)
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());

    let train = cba::corpus::load_split(&out_dir.join("train.tsv"), 16).unwrap();
    assert_eq!(train.len(), 90);
    for u in &train {
        u.validate().unwrap();
    }
    let protos = cba::corpus::load_prototypes(&out_dir.join("prototypes.txt")).unwrap();
    assert_eq!((protos.rows(), protos.cols()), (26, 16));
    assert!(out_dir.join("effective-config.json").exists());

    // The regenerated corpus is bit-identical to the serialized one.
    let cfg_parsed = cba::config::parse_config(Path::new(&cfg)).unwrap();
    let corpus = cba::corpus::generate_corpus(&cfg_parsed.corpus).unwrap();
    assert_eq!(corpus.train, train);
}

#[test]
fn stats_curve_is_plottable_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("stats");
    assert!(cba()
        .args(["stats", "--config", &cfg, "--out"])
        .arg(&out_dir)
        .arg("--quiet")
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(out_dir.join("imbalance.tsv")).unwrap();
    let mut rates = Vec::new();
    for line in text.lines().skip(1) {
        let rate: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();
        rates.push(rate);
    }
    assert_eq!(rates.len(), 17);
    for w in rates.windows(2) {
        assert!(w[0] >= w[1]);
    }
}

#[test]
fn ablate_grid_rows_and_cell_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("ablate-out");
    let run = || {
        assert!(cba()
            .args(["ablate", "--config", &cfg, "--out"])
            .arg(&out_dir)
            .arg("--quiet")
            .status()
            .unwrap()
            .success());
    };
    run();
    let table = std::fs::read_to_string(out_dir.join("ablate.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    // Header plus the Table-2-shaped grid: 4 + 4 + 3 combinations.
    assert_eq!(rows.len(), 1 + 11, "{table}");
    assert!(rows[0].starts_with("gamma\tlambda2\talpha\tcer\tc_cer"));
    for row in &rows[1..] {
        assert_eq!(row.split('\t').count(), 9, "{row}");
    }

    // Deleting one cell and re-running reproduces it bitwise.
    let cell = out_dir.join("ablate").join("g16_l1_a-");
    let report_before = std::fs::read(cell.join("report.txt")).unwrap();
    let adapter_before = std::fs::read(cell.join("adapter.ckpt")).unwrap();
    std::fs::remove_dir_all(&cell).unwrap();
    run();
    assert_eq!(std::fs::read(cell.join("report.txt")).unwrap(), report_before);
    assert_eq!(std::fs::read(cell.join("adapter.ckpt")).unwrap(), adapter_before);
    let table_again = std::fs::read_to_string(out_dir.join("ablate.tsv")).unwrap();
    assert_eq!(table_again, table);
}

#[test]
fn attention_dump_heatmap_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("dump");
    let out_str = out_dir.to_str().unwrap().to_string();
    for cmd in ["pretrain", "train-adapter"] {
        assert!(cba()
            .args([cmd, "--config", &cfg, "--out", &out_str, "--quiet"])
            .status()
            .unwrap()
            .success());
    }
    assert!(cba()
        .args([
            "attention-dump",
            "--config",
            &cfg,
            "--out",
            &out_str,
            "--utterance",
            "2",
            "--quiet"
        ])
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(out_dir.join("attention.tsv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("<no-context>\t"), "{header}");
    let width = header.split('\t').count();
    let mut n_rows = 0;
    for line in lines {
        assert_eq!(line.split('\t').count(), width);
        let sum: f64 = line.split('\t').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 2e-5, "row sums to {sum}");
        n_rows += 1;
    }
    assert!(n_rows > 10);
}
