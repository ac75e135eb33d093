use rayon::prelude::*;

use super::{alpha_sweep, binarize_label, AlphaMetrics, AlphaSweepReport, EvalError, EvalRecord, Fold, FoldPlan};
use super::{mann_whitney_u, MannWhitney};
use crate::bayes::{posterior_variance, sample_posterior, ClassZones};
use crate::data::{Dataset, TrialSample};
use crate::nn::{train, LabeledSeries, ModelConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub n_passes: usize,
    pub alphas: Vec<f64>,
    /// Folds run on this many threads; results do not depend on it.
    pub workers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRow {
    pub subject_id: String,
    pub trial_id: String,
    pub true_zone: usize,
    pub posterior_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub pad_length: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub sweep: AlphaSweepReport,
    pub uncertainty: Vec<UncertaintyRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub labels: Vec<String>,
    pub folds: Vec<FoldResult>,
    /// Per alpha: accuracy, coverage and macro F1 averaged over folds (over
    /// the folds where each is defined); counts and confusion are summed.
    pub mean: Vec<AlphaMetrics>,
    /// Per alpha: metrics of all test trials taken together.
    pub pooled: Vec<AlphaMetrics>,
    /// Low-class variances against high-class variances; absent when a
    /// class has no test trials.
    pub mann_whitney: Option<MannWhitney>,
}

impl CvReport {
    pub fn uncertainty(&self) -> impl Iterator<Item = &UncertaintyRow> {
        self.folds.iter().flat_map(|f| &f.uncertainty)
    }
}

fn collect<'a>(dataset: &'a Dataset, subjects: &[String]) -> Result<Vec<&'a TrialSample>, EvalError> {
    for s in subjects {
        if !dataset.samples.iter().any(|t| &t.subject_id == s) {
            return Err(EvalError::UnknownSubject(s.clone()));
        }
    }
    Ok(dataset.samples.iter().filter(|t| subjects.contains(&t.subject_id)).collect())
}

fn run_fold(
    dataset: &Dataset,
    model: &ModelConfig,
    fold: &Fold,
    index: usize,
    opts: &CvOptions,
    zones: &ClassZones,
) -> Result<FoldResult, EvalError> {
    let train_samples = collect(dataset, &fold.train)?;
    let val_samples = collect(dataset, &fold.val)?;
    let test_samples = collect(dataset, &fold.test)?;
    let pad = dataset.pad_length_for(&fold.train);
    let fold_seed = derive_seed(opts.seed, "fold", index as u64);
    let mut config = model.clone();
    config.input_length = pad;
    config.seed = fold_seed;
    config.label_scale = train_samples[0].scale;
    let labeled = |set: &[&TrialSample]| -> Vec<LabeledSeries> {
        set.iter()
            .map(|s| LabeledSeries {
                input: s.prepared.fit_to(pad),
                target: s.target(),
            })
            .collect()
    };
    let (params, history) = train(&config, &labeled(&train_samples), &labeled(&val_samples), fold_seed)?;

    let mut records = Vec::with_capacity(test_samples.len());
    let mut uncertainty = Vec::with_capacity(test_samples.len());
    for (i, s) in test_samples.iter().enumerate() {
        let posterior = sample_posterior(
            &s.prepared.fit_to(pad),
            &params,
            &config,
            opts.n_passes,
            derive_seed(fold_seed, "posterior", i as u64),
        )?;
        let true_zone = binarize_label(s.valence_raw, s.scale.0, s.scale.1)?.zone();
        uncertainty.push(UncertaintyRow {
            subject_id: s.subject_id.clone(),
            trial_id: s.trial_id.clone(),
            true_zone,
            posterior_variance: posterior_variance(&posterior)?,
        });
        records.push(EvalRecord {
            subject_id: s.subject_id.clone(),
            trial_id: s.trial_id.clone(),
            true_zone,
            posterior,
        });
    }
    let sweep = alpha_sweep(&records, zones, &opts.alphas)?;
    log::info!(
        "fold {index}: best epoch {} val mse {:.5}, {} test trials",
        history.best_epoch,
        history.best_val_mse,
        records.len()
    );
    Ok(FoldResult {
        fold: index,
        test_subjects: fold.test.clone(),
        pad_length: pad,
        best_epoch: history.best_epoch,
        best_val_mse: history.best_val_mse,
        sweep,
        uncertainty,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(folds: &[FoldResult], alphas: &[f64]) -> (Vec<AlphaMetrics>, Vec<AlphaMetrics>) {
    let mut mean = Vec::with_capacity(alphas.len());
    let mut pooled = Vec::with_capacity(alphas.len());
    for (j, &alpha) in alphas.iter().enumerate() {
        let rows: Vec<&AlphaMetrics> = folds.iter().map(|f| &f.sweep.rows[j]).collect();
        let mut confusion = rows[0].confusion.clone();
        for r in &rows[1..] {
            for (acc, row) in confusion.iter_mut().zip(&r.confusion) {
                for (a, c) in acc.iter_mut().zip(row) {
                    *a += c;
                }
            }
        }
        let pooled_row = AlphaMetrics::from_confusion(alpha, confusion);
        mean.push(AlphaMetrics {
            accuracy: mean_of(rows.iter().map(|r| r.accuracy)),
            coverage: rows.iter().map(|r| r.coverage).sum::<f64>() / rows.len() as f64,
            macro_f1: mean_of(rows.iter().map(|r| r.macro_f1)),
            ..pooled_row.clone()
        });
        pooled.push(pooled_row);
    }
    (mean, pooled)
}

/// Trains and scores every fold of `plan` with binary valence zones.
///
/// Fold `f` trains with seed `derive_seed(seed, "fold", f)`, pads inputs to
/// its longest training trial and draws test trial `i`'s posterior with seed
/// `derive_seed(fold_seed, "posterior", i)`.
pub fn run_cross_validation(
    dataset: &Dataset,
    model: &ModelConfig,
    plan: &FoldPlan,
    opts: &CvOptions,
) -> Result<CvReport, EvalError> {
    let zones = ClassZones::binary();
    let job = |(i, fold): (usize, &Fold)| {
        run_fold(dataset, model, fold, i, opts, &zones).map_err(|e| EvalError::Fold {
            fold: i,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FoldResult, EvalError>> = if opts.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| EvalError::Io(std::io::Error::other(e)))?
            .install(|| plan.folds.par_iter().enumerate().map(job).collect())
    } else {
        plan.folds.iter().enumerate().map(job).collect()
    };
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (mean, pooled) = if folds.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        aggregate(&folds, &opts.alphas)
    };
    let variances = |zone: usize| -> Vec<f64> {
        folds
            .iter()
            .flat_map(|f| &f.uncertainty)
            .filter(|u| u.true_zone == zone)
            .map(|u| u.posterior_variance)
            .collect()
    };
    let mann_whitney = mann_whitney_u(&variances(0), &variances(1)).ok();
    Ok(CvReport {
        labels: zones.labels().to_vec(),
        folds,
        mean,
        pooled,
        mann_whitney,
    })
}
