use rand::seq::SliceRandom;

use super::EvalError;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub k_out: usize,
    pub seed: u64,
}

fn shuffled(subjects: &[String], seed: u64, component: &str) -> Vec<String> {
    let mut ids = subjects.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut rng_for(seed, component, 0));
    ids
}

/// Leave-`k_out`-subjects-out plan.
///
/// Subjects are shuffled by `seed`; fold `f` tests on the `f`-th block of
/// `k_out` subjects. The remaining subjects, listed starting just after that
/// block and wrapping around, give the first `val_size` as validation and the
/// rest as training.
pub fn make_folds(
    subjects: &[String],
    k_out: usize,
    n_folds: usize,
    val_size: usize,
    seed: u64,
) -> Result<FoldPlan, EvalError> {
    let ids = shuffled(subjects, seed, "folds");
    let n = ids.len();
    let needed = (n_folds * k_out).max(k_out + val_size + 1);
    if k_out == 0 || n_folds == 0 || needed > n {
        return Err(EvalError::InsufficientSubjects { needed, available: n });
    }
    let folds = (0..n_folds)
        .map(|f| {
            let (start, end) = (f * k_out, (f + 1) * k_out);
            let rest: Vec<String> = ids[end..].iter().chain(&ids[..start]).cloned().collect();
            Fold {
                test: ids[start..end].to_vec(),
                val: rest[..val_size].to_vec(),
                train: rest[val_size..].to_vec(),
            }
        })
        .collect();
    Ok(FoldPlan { folds, k_out, seed })
}

/// Single train/validation split used outside cross-validation.
pub fn train_val_split(subjects: &[String], val_size: usize, seed: u64) -> Result<(Vec<String>, Vec<String>), EvalError> {
    let ids = shuffled(subjects, seed, "train_val_split");
    if val_size == 0 || ids.len() < val_size + 1 {
        return Err(EvalError::InsufficientSubjects {
            needed: val_size + 1,
            available: ids.len(),
        });
    }
    let train = ids[val_size..].to_vec();
    let val = ids[..val_size].to_vec();
    Ok((train, val))
}
