use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn valence(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valence"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: PathBuf, text: &str) -> PathBuf {
    std::fs::write(&path, text).unwrap();
    path
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(files_with_suffix(&path, suffix));
        } else if path.to_string_lossy().ends_with(suffix) {
            found.push(path);
        }
    }
    found.sort();
    found
}

fn read_all(paths: &[PathBuf]) -> Vec<Vec<u8>> {
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

/// Small ECG corpus plus a tiny run configuration pointing at it.
fn small_corpus(root: &Path, trials_per_subject: usize, with_ecg: bool) -> PathBuf {
    let spec = write(
        root.join("spec.txt"),
        &format!(
            "n_subjects = 8\ntrials_per_subject = {trials_per_subject}\nmin_beats = 20\nmax_beats = 30\n\
             write_ecg = {with_ecg}\n"
        ),
    );
    let corpus = root.join("corpus");
    assert_eq!(code(&valence(&["synth", "--config", p(&spec), "--out", p(&corpus)])), 0);
    write(
        root.join("run.txt"),
        "# tiny run\ndataset_root = corpus\nuse_precomputed_ibi = true\nconv_filters = 2\n\
         conv_window_sizes = 4, 2\nlstm_hidden_units = 2\nepochs = 10\nn_passes = 20\nalphas = 0.5, 0.7, 0.9\n\
         k_out = 2\nn_folds = 3\nval_subjects = 2\nseed = 3\n",
    )
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&valence(&["--help"])), 0);
    assert_eq!(code(&valence(&["--version"])), 0);
    assert_eq!(code(&valence(&["frobnicate"])), 1);
    assert_eq!(code(&valence(&["train", "--out", "/nonexistent/x"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path().join("bad.txt"), "no_such_key = 1\n");
    assert_eq!(code(&valence(&["evaluate", "--config", p(&bad), "--out", p(tmp.path())])), 1);
}

#[test]
fn synth_default_corpus_and_seed_change() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let spec = write(tmp.path().join("spec.txt"), "write_ecg = false\n");
    assert_eq!(code(&valence(&["synth", "--config", p(&spec), "--out", p(&a)])), 0);
    assert_eq!(code(&valence(&["synth", "--config", p(&spec), "--out", p(&b), "--seed", "9"])), 0);
    let fa = files_with_suffix(&a, ".ibi.csv");
    let fb = files_with_suffix(&b, ".ibi.csv");
    assert_eq!(fa.len(), 160);
    assert_eq!(fb.len(), 160);
    assert_ne!(read_all(&fa), read_all(&fb));
    assert!(a.join("synth_spec.txt").exists());

    let one_class = write(tmp.path().join("one.txt"), "balance = 1.0\nwrite_ecg = false\n");
    let c = tmp.path().join("c");
    assert_eq!(code(&valence(&["synth", "--config", p(&one_class), "--out", p(&c)])), 0);
    let manifest = std::fs::read_to_string(c.join("manifest.csv")).unwrap();
    let mut header = manifest.lines().next().unwrap().split(',');
    let col = header.position(|h| h == "valence_raw").unwrap();
    let mut values: Vec<&str> = manifest.lines().skip(1).map(|l| l.split(',').nth(col).unwrap()).collect();
    values.dedup();
    assert_eq!(values.len(), 1);

    let invalid = write(tmp.path().join("invalid.txt"), "balance = 2\n");
    assert_eq!(code(&valence(&["synth", "--config", p(&invalid), "--out", p(&c)])), 6);
}

#[test]
fn preprocess_counts_and_idempotence() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write(
        tmp.path().join("spec.txt"),
        "n_subjects = 2\ntrials_per_subject = 2\nmin_beats = 40\nmax_beats = 50\n",
    );
    let corpus = tmp.path().join("corpus");
    assert_eq!(code(&valence(&["synth", "--config", p(&spec), "--out", p(&corpus)])), 0);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    for out in [&first, &second] {
        assert_eq!(code(&valence(&["preprocess", "--root", p(&corpus), "--out", p(out)])), 0);
    }
    let a = files_with_suffix(&first, ".ibi.csv");
    assert_eq!(a.len(), 4);
    assert_eq!(read_all(&a), read_all(&files_with_suffix(&second, ".ibi.csv")));
    assert!(first.join("skipped.csv").exists());

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&valence(&["preprocess", "--root", p(&empty), "--out", p(&first)])), 2);
    std::fs::write(
        empty.join("manifest.csv"),
        "subject_id,trial_id,sample_rate_hz,valence_raw,scale_min,scale_max\n",
    )
    .unwrap();
    assert_eq!(code(&valence(&["preprocess", "--root", p(&empty), "--out", p(&first)])), 2);
}

#[test]
fn train_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_corpus(tmp.path(), 2, false);
    let mut models = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let res = valence(&["train", "--config", p(&config), "--out", p(&out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
        assert_eq!(history.lines().next().unwrap(), "epoch,train_mse,val_mse,lr");
        assert_eq!(history.lines().count(), 1 + 10);
        assert!(out.join("model.meta").exists());
        assert!(out.join("run_config.txt").exists());
        models.push(std::fs::read(out.join("model.bin")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    let other = tmp.path().join("c");
    assert_eq!(code(&valence(&["train", "--config", p(&config), "--out", p(&other), "--seed", "4"])), 0);
    assert_ne!(models[0], std::fs::read(other.join("model.bin")).unwrap());
}

#[test]
fn evaluate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_corpus(tmp.path(), 4, false);
    let out = tmp.path().join("eval");
    let res = valence(&["evaluate", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for name in [
        "report.csv",
        "uncertainty.csv",
        "summary.txt",
        "folds.csv",
        "run_config.txt",
        "confusion_0.5.csv",
        "confusion_0.7.csv",
        "confusion_0.9.csv",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mean: Vec<Vec<&str>> = report
        .lines()
        .filter(|l| l.starts_with("mean,"))
        .map(|l| l.split(',').collect())
        .collect();
    let alphas: Vec<&str> = mean.iter().map(|r| r[1]).collect();
    assert_eq!(alphas, ["0.5", "0.7", "0.9"]);
    let coverage: Vec<f64> = mean.iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(coverage[0], 1.0);
    assert!(coverage.windows(2).all(|w| w[1] <= w[0]));

    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    let mw = summary.lines().find(|l| l.starts_with("Mann-Whitney U = ")).unwrap();
    assert!(mw.contains(", p = ") && mw.contains("direction: "));

    std::fs::remove_file(out.join("summary.txt")).unwrap();
    assert_eq!(code(&valence(&["report", "--out", p(&out)])), 0);
    assert_eq!(std::fs::read_to_string(out.join("summary.txt")).unwrap(), summary);
    assert_eq!(code(&valence(&["report", "--out", p(tmp.path())])), 4);
}

#[test]
fn sweep_marks_winner_and_rejects_bad_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_corpus(tmp.path(), 2, false);
    let grid = write(
        tmp.path().join("grid.csv"),
        "conv_filters,conv_window_sizes\n2,4;2\n3,3\n",
    );
    let out = tmp.path().join("sweep");
    let res = valence(&["sweep", "--config", p(&config), "--grid", p(&grid), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let results = std::fs::read_to_string(out.join("grid_results.csv")).unwrap();
    let rows: Vec<Vec<&str>> = results.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let mse: Vec<f64> = rows.iter().map(|r| r[r.len() - 3].parse().unwrap()).collect();
    let winners: Vec<&str> = rows.iter().map(|r| r[r.len() - 1]).collect();
    let best = if mse[1] < mse[0] { 1 } else { 0 };
    assert_eq!(winners.iter().filter(|w| **w == "1").count(), 1);
    assert_eq!(winners[best], "1");

    let bad = write(
        tmp.path().join("bad.csv"),
        "conv_dropout_rate\n0.5\n-0.1\n",
    );
    let res = valence(&["sweep", "--config", p(&config), "--grid", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&res), 5);
    assert!(String::from_utf8_lossy(&res.stderr).contains("grid row at line 3"));
}
