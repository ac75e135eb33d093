use super::EvalError;
use crate::bayes::{check_alpha, decide, ClassZones, Outcome, ValencePosterior};

/// Binary valence class; `Low` is zone 0 of [`ClassZones::binary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValenceClass {
    Low,
    High,
}

impl ValenceClass {
    pub fn zone(self) -> usize {
        match self {
            ValenceClass::Low => 0,
            ValenceClass::High => 1,
        }
    }
}

/// Splits a raw rating at the scale midpoint; the midpoint itself is low.
pub fn binarize_label(valence_raw: f64, scale_min: f64, scale_max: f64) -> Result<ValenceClass, EvalError> {
    if !(scale_min < scale_max) || !(scale_min..=scale_max).contains(&valence_raw) {
        return Err(EvalError::OutOfScale {
            value: valence_raw,
            min: scale_min,
            max: scale_max,
        });
    }
    let mid = 0.5 * (scale_min + scale_max);
    Ok(if valence_raw > mid {
        ValenceClass::High
    } else {
        ValenceClass::Low
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub subject_id: String,
    pub trial_id: String,
    /// Index of the true zone.
    pub true_zone: usize,
    pub posterior: ValencePosterior,
}

/// Metrics at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMetrics {
    pub alpha: f64,
    /// `None` when nothing was committed.
    pub accuracy: Option<f64>,
    pub coverage: f64,
    /// `None` when nothing was committed.
    pub macro_f1: Option<f64>,
    pub n_committed: usize,
    pub n_correct: usize,
    pub n_total: usize,
    /// `confusion[true][predicted]`; the last column counts abstentions.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlphaSweepReport {
    pub rows: Vec<AlphaMetrics>,
}

/// Zone counts and mean zone of one record, computed once per sweep.
struct Tally {
    counts: Vec<usize>,
    mean_zone: usize,
    true_zone: usize,
}

fn tally(records: &[EvalRecord], zones: &ClassZones) -> Vec<Tally> {
    records
        .iter()
        .map(|r| Tally {
            counts: zones.counts(r.posterior.samples()),
            mean_zone: zones.zone_of(r.posterior.mean()),
            true_zone: r.true_zone,
        })
        .collect()
}

fn metrics_at(tallies: &[Tally], n_zones: usize, alpha: f64) -> AlphaMetrics {
    let mut confusion = vec![vec![0usize; n_zones + 1]; n_zones];
    for t in tallies {
        let col = match decide(&t.counts, t.mean_zone, alpha).outcome {
            Outcome::Class(z) => z,
            Outcome::Abstain => n_zones,
        };
        confusion[t.true_zone][col] += 1;
    }
    AlphaMetrics::from_confusion(alpha, confusion)
}

impl AlphaMetrics {
    /// Metrics implied by a confusion matrix whose last column counts
    /// abstentions.
    pub fn from_confusion(alpha: f64, confusion: Vec<Vec<usize>>) -> Self {
        let n_zones = confusion.len();
        let n_total: usize = confusion.iter().flatten().sum();
        let n_committed: usize = confusion.iter().map(|row| row[..n_zones].iter().sum::<usize>()).sum();
        let n_correct: usize = (0..n_zones).map(|z| confusion[z][z]).sum();
        let accuracy = (n_committed > 0).then(|| n_correct as f64 / n_committed as f64);
        let coverage = if n_total > 0 {
            n_committed as f64 / n_total as f64
        } else {
            0.0
        };
        AlphaMetrics {
            alpha,
            accuracy,
            coverage,
            macro_f1: macro_f1(&confusion, n_zones),
            n_committed,
            n_correct,
            n_total,
            confusion,
        }
    }
}

/// Mean per-class F1 over the committed records, taken over the classes that
/// occur among them as either truth or prediction.
fn macro_f1(confusion: &[Vec<usize>], n_zones: usize) -> Option<f64> {
    let mut scores = Vec::new();
    for c in 0..n_zones {
        let tp = confusion[c][c];
        let actual: usize = confusion[c][..n_zones].iter().sum();
        let predicted: usize = (0..n_zones).map(|t| confusion[t][c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        scores.push(2.0 * tp as f64 / (actual + predicted) as f64);
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn evaluate_fold(records: &[EvalRecord], zones: &ClassZones, alpha: f64) -> Result<AlphaMetrics, EvalError> {
    check_alpha(alpha)?;
    validate(records, zones)?;
    Ok(metrics_at(&tally(records, zones), zones.len(), alpha))
}

fn validate(records: &[EvalRecord], zones: &ClassZones) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    if let Some(r) = records.iter().find(|r| r.true_zone >= zones.len()) {
        return Err(EvalError::MalformedReport(format!(
            "record {}/{} has zone {} of {}",
            r.subject_id,
            r.trial_id,
            r.true_zone,
            zones.len()
        )));
    }
    Ok(())
}

/// [`evaluate_fold`] at every threshold. Fails if coverage ever rises with
/// alpha.
pub fn alpha_sweep(records: &[EvalRecord], zones: &ClassZones, alphas: &[f64]) -> Result<AlphaSweepReport, EvalError> {
    if alphas.is_empty() {
        return Ok(AlphaSweepReport::default());
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    validate(records, zones)?;
    let tallies = tally(records, zones);
    let rows: Vec<AlphaMetrics> = alphas.iter().map(|&a| metrics_at(&tallies, zones.len(), a)).collect();
    let mut by_alpha: Vec<&AlphaMetrics> = rows.iter().collect();
    by_alpha.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    for w in by_alpha.windows(2) {
        if w[1].coverage > w[0].coverage {
            return Err(EvalError::CoverageNotMonotone {
                previous_alpha: w[0].alpha,
                previous: w[0].coverage,
                next_alpha: w[1].alpha,
                next: w[1].coverage,
            });
        }
    }
    Ok(AlphaSweepReport { rows })
}
