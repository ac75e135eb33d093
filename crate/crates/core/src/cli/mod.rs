//! The `valence` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 preprocess
//! failure, 3 train failure, 4 evaluate or report failure, 5 sweep failure,
//! 6 synth failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{apply_model_keys, ConfigError, KvFile, RunConfig};
use crate::data::{
    ibi_path, load_dataset, read_manifest, read_trial_ibi, write_ibi_csv, write_manifest, write_synthetic_corpus,
    DataError, Dataset, SyntheticSpec, MANIFEST_FILE,
};
use crate::eval::{
    make_folds, run_cross_validation, summary_from_csv, train_val_split, write_report, CvOptions, REPORT_FILE,
    SUMMARY_FILE, UNCERTAINTY_FILE,
};
use crate::nn::{save_model, train_observed, LabeledSeries, ModelConfig, ModelParams, TrainHistory};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PREPROCESS: i32 = 2;
pub const EXIT_TRAIN: i32 = 3;
pub const EXIT_EVALUATE: i32 = 4;
pub const EXIT_SWEEP: i32 = 5;
pub const EXIT_SYNTH: i32 = 6;

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const SYNTH_SPEC_FILE: &str = "synth_spec.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const GRID_RESULTS_FILE: &str = "grid_results.csv";
pub const SKIPPED_FILE: &str = "skipped.csv";
pub const FOLDS_FILE: &str = "folds.csv";

#[derive(Debug, Parser)]
#[command(name = "valence", version, about = "Valence prediction from inter-beat intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus; `--config` is an optional generator spec.
    Synth(Common),
    /// Convert every ECG trial of a corpus to an `.ibi.csv` file.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Corpus root; defaults to `dataset_root` of `--config`.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Train one model on a train/validation subject split.
    Train(Common),
    /// Cross-validate and write accuracy/coverage reports.
    Evaluate(Common),
    /// Train every hyperparameter combination of a grid file.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// CSV whose columns are hyperparameter keys.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Regenerate `summary.txt` from the CSVs in `--out`.
    Report(Common),
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32) -> impl Fn(&dyn std::fmt::Display) -> Failure {
    move |e| Failure {
        code,
        message: e.to_string(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(c) => cmd_synth(&c),
        Command::Preprocess { common, root } => cmd_preprocess(&common, root.as_deref()),
        Command::Train(c) => cmd_train(&c),
        Command::Evaluate(c) => cmd_evaluate(&c),
        Command::Sweep { common, grid } => cmd_sweep(&common, &grid),
        Command::Report(c) => cmd_report(&c),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, text: &str, code: i32) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure {
        code,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(path: &Path, code: i32) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        code,
        message: format!("{}: {e}", path.display()),
    })
}

fn run_config(common: &Common) -> Result<RunConfig, Failure> {
    let path = common.config.as_deref().ok_or_else(|| Failure {
        code: EXIT_USAGE,
        message: "--config is required".into(),
    })?;
    let mut cfg = RunConfig::read(path).map_err(|e| fail(EXIT_USAGE)(&e))?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(|e| fail(EXIT_USAGE)(&e))?;
    Ok(cfg)
}

fn cmd_synth(common: &Common) -> Result<(), Failure> {
    let mut spec = match &common.config {
        Some(path) => {
            let kv = KvFile::read(path).map_err(|e| fail(EXIT_SYNTH)(&e))?;
            SyntheticSpec::from_kv(&kv).map_err(|e| fail(EXIT_SYNTH)(&e))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let n = write_synthetic_corpus(&spec, &common.out).map_err(|e| fail(EXIT_SYNTH)(&e))?;
    write_file(&common.out.join(SYNTH_SPEC_FILE), &spec.to_kv_string(), EXIT_SYNTH)?;
    log::info!("wrote {n} trials to {}", common.out.display());
    Ok(())
}

fn cmd_preprocess(common: &Common, root: Option<&Path>) -> Result<(), Failure> {
    let root = match (root, &common.config) {
        (Some(r), _) => r.to_path_buf(),
        (None, Some(_)) => run_config(common)?.dataset_root,
        (None, None) => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: "give --root or --config".into(),
            })
        }
    };
    let rows = read_manifest(&root).map_err(|e| fail(EXIT_PREPROCESS)(&e))?;
    let results: Vec<Result<Vec<f64>, String>> = rows
        .par_iter()
        .map(|row| read_trial_ibi(&root, row, false).map(|ibi| ibi.intervals_s))
        .collect();
    let mut kept = Vec::new();
    let mut skipped = String::from("subject_id,trial_id,reason\n");
    for (row, result) in rows.iter().zip(&results) {
        match result {
            Ok(intervals) => {
                create_dir(&common.out.join(&row.subject_id), EXIT_PREPROCESS)?;
                write_ibi_csv(&ibi_path(&common.out, &row.subject_id, &row.trial_id), intervals)
                    .map_err(|e| fail(EXIT_PREPROCESS)(&e))?;
                kept.push(row.clone());
            }
            Err(reason) => {
                log::warn!("skipping {}/{}: {reason}", row.subject_id, row.trial_id);
                let _ = writeln!(
                    skipped,
                    "{},{},\"{}\"",
                    row.subject_id,
                    row.trial_id,
                    reason.replace('"', "'")
                );
            }
        }
    }
    if kept.is_empty() {
        return Err(fail(EXIT_PREPROCESS)(&DataError::AllTrialsSkipped(rows.len())));
    }
    create_dir(&common.out, EXIT_PREPROCESS)?;
    write_manifest(&common.out.join(MANIFEST_FILE), &kept).map_err(|e| fail(EXIT_PREPROCESS)(&e))?;
    write_file(&common.out.join(SKIPPED_FILE), &skipped, EXIT_PREPROCESS)?;
    write_file(
        &common.out.join(RUN_CONFIG_FILE),
        &format!("dataset_root = {}\n", root.display()),
        EXIT_PREPROCESS,
    )?;
    log::info!("{} of {} trials converted", kept.len(), rows.len());
    Ok(())
}

fn labeled(ds: &Dataset, subjects: &[String], pad: usize) -> Vec<LabeledSeries> {
    ds.samples_of(subjects)
        .map(|s| LabeledSeries {
            input: s.prepared.fit_to(pad),
            target: s.target(),
        })
        .collect()
}

/// Trains on a seeded train/validation subject split of `ds`.
fn train_split(
    ds: &Dataset,
    model: &ModelConfig,
    val_subjects: usize,
    seed: u64,
) -> Result<(ModelParams, TrainHistory, ModelConfig, Vec<String>, Vec<String>), String> {
    let (train_ids, val_ids) = train_val_split(&ds.subjects(), val_subjects, seed).map_err(|e| e.to_string())?;
    let pad = ds.pad_length_for(&train_ids);
    let mut config = model.clone();
    config.input_length = pad;
    config.seed = seed;
    config.label_scale = ds.samples[0].scale;
    let (params, history) = train_observed(
        &config,
        &labeled(ds, &train_ids, pad),
        &labeled(ds, &val_ids, pad),
        seed,
        &mut |r| log::debug!("epoch {} train {:.5} val {:.5}", r.epoch, r.train_mse, r.val_mse),
    )
    .map_err(|e| e.to_string())?;
    Ok((params, history, config, train_ids, val_ids))
}

fn cmd_train(common: &Common) -> Result<(), Failure> {
    let cfg = run_config(common)?;
    create_dir(&common.out, EXIT_TRAIN)?;
    write_file(&common.out.join(RUN_CONFIG_FILE), &cfg.to_kv_string(), EXIT_TRAIN)?;
    let ds = load_dataset(&cfg.dataset_root, cfg.use_precomputed_ibi).map_err(|e| fail(EXIT_TRAIN)(&e))?;
    let (params, history, config, train_ids, val_ids) =
        train_split(&ds, &cfg.model, cfg.val_subjects, cfg.seed).map_err(|e| fail(EXIT_TRAIN)(&e))?;
    save_model(
        &common.out,
        &params,
        &config,
        &[
            ("best_epoch", history.best_epoch.to_string()),
            ("best_val_mse", history.best_val_mse.to_string()),
            ("train_subjects", train_ids.join(",")),
            ("val_subjects", val_ids.join(",")),
        ],
    )
    .map_err(|e| fail(EXIT_TRAIN)(&e))?;
    let mut csv = String::from("epoch,train_mse,val_mse,lr\n");
    for r in &history.epochs {
        let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.learning_rate);
    }
    write_file(&common.out.join(HISTORY_FILE), &csv, EXIT_TRAIN)?;
    log::info!(
        "best epoch {} with validation MSE {:.5}",
        history.best_epoch,
        history.best_val_mse
    );
    Ok(())
}

fn cmd_evaluate(common: &Common) -> Result<(), Failure> {
    let cfg = run_config(common)?;
    let err = fail(EXIT_EVALUATE);
    create_dir(&common.out, EXIT_EVALUATE)?;
    write_file(&common.out.join(RUN_CONFIG_FILE), &cfg.to_kv_string(), EXIT_EVALUATE)?;
    let ds = load_dataset(&cfg.dataset_root, cfg.use_precomputed_ibi).map_err(|e| err(&e))?;
    let plan = make_folds(&ds.subjects(), cfg.k_out, cfg.n_folds, cfg.val_subjects, cfg.seed).map_err(|e| err(&e))?;
    let mut folds = String::from("fold,role,subject\n");
    for (i, f) in plan.folds.iter().enumerate() {
        for (role, ids) in [("test", &f.test), ("val", &f.val), ("train", &f.train)] {
            for s in ids {
                let _ = writeln!(folds, "{i},{role},{s}");
            }
        }
    }
    write_file(&common.out.join(FOLDS_FILE), &folds, EXIT_EVALUATE)?;
    let opts = CvOptions {
        n_passes: cfg.n_passes,
        alphas: cfg.alphas.clone(),
        workers: cfg.workers,
        seed: cfg.seed,
    };
    let report = run_cross_validation(&ds, &cfg.model, &plan, &opts).map_err(|e| err(&e))?;
    write_report(&common.out, &report).map_err(|e| err(&e))?;
    Ok(())
}

fn cmd_report(common: &Common) -> Result<(), Failure> {
    let err = fail(EXIT_EVALUATE);
    let read = |name: &str| {
        let path = common.out.join(name);
        std::fs::read_to_string(&path).map_err(|e| Failure {
            code: EXIT_EVALUATE,
            message: format!("{}: {e}", path.display()),
        })
    };
    let summary = summary_from_csv(&read(REPORT_FILE)?, &read(UNCERTAINTY_FILE)?).map_err(|e| err(&e))?;
    write_file(&common.out.join(SUMMARY_FILE), &summary, EXIT_EVALUATE)?;
    print!("{summary}");
    Ok(())
}

/// One grid row: its raw cells and the configuration they yield.
struct GridRow {
    cells: Vec<String>,
    model: ModelConfig,
}

fn parse_grid(path: &Path, base: &ModelConfig) -> Result<(Vec<String>, Vec<GridRow>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| format!("grid header: {e}"))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err("grid header has empty columns".into());
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format!("grid: {e}"))?;
        let line = record.position().map_or(0, |p| p.line());
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        let mut text = String::new();
        for (k, v) in header.iter().zip(&cells) {
            let _ = writeln!(text, "{k} = {}", v.replace(';', ","));
        }
        let row_err = |e: &dyn std::fmt::Display| format!("grid row at line {line}: {e}");
        let kv = KvFile::parse(&text).map_err(|e| row_err(&e))?;
        kv.reject_unknown(crate::config::MODEL_KEYS).map_err(|e| row_err(&e))?;
        let mut model = base.clone();
        apply_model_keys(&kv, &mut model).map_err(|e: ConfigError| row_err(&e))?;
        model.validate().map_err(|e| row_err(&e))?;
        rows.push(GridRow { cells, model });
    }
    if rows.is_empty() {
        return Err("grid has no rows".into());
    }
    Ok((header, rows))
}

fn csv_cell(v: &str) -> String {
    if v.contains(',') || v.contains('"') {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn cmd_sweep(common: &Common, grid: &Path) -> Result<(), Failure> {
    let cfg = run_config(common)?;
    let err = fail(EXIT_SWEEP);
    let (header, rows) = parse_grid(grid, &cfg.model).map_err(|e| err(&e))?;
    create_dir(&common.out, EXIT_SWEEP)?;
    write_file(&common.out.join(RUN_CONFIG_FILE), &cfg.to_kv_string(), EXIT_SWEEP)?;
    let ds = load_dataset(&cfg.dataset_root, cfg.use_precomputed_ibi).map_err(|e| err(&e))?;
    let mut results = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let (_, history, ..) =
            train_split(&ds, &row.model, cfg.val_subjects, cfg.seed).map_err(|e| err(&format!("grid row {}: {e}", i + 1)))?;
        log::info!("grid row {}: best validation MSE {:.5}", i + 1, history.best_val_mse);
        results.push(history);
    }
    let winner = results
        .iter()
        .enumerate()
        .fold(0, |best, (i, h)| if h.best_val_mse < results[best].best_val_mse { i } else { best });
    let mut out = header.iter().map(|h| csv_cell(h)).collect::<Vec<_>>().join(",");
    out.push_str(",best_val_mse,best_epoch,winner\n");
    for (i, (row, h)) in rows.iter().zip(&results).enumerate() {
        let cells: Vec<String> = row.cells.iter().map(|c| csv_cell(c)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            cells.join(","),
            h.best_val_mse,
            h.best_epoch,
            u8::from(i == winner)
        );
    }
    write_file(&common.out.join(GRID_RESULTS_FILE), &out, EXIT_SWEEP)?;
    Ok(())
}
