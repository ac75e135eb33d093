//! Monte-Carlo dropout posteriors and the confidence-threshold rule.
//!
//! A posterior is the empirical distribution of `N` dropout-on forward passes.
//! Decision boundaries cut the output line into class zones; an input is
//! assigned to the zone holding the most posterior mass when that mass is at
//! least `alpha`, otherwise the model abstains.

use std::io::Write;

use thiserror::Error;

use crate::nn::{predict_from_prefix, DeterministicPrefix, ModelConfig, ModelParams, NnError};
use crate::seed::derive_seed;
use crate::signal::PreparedSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("alpha {0} outside [0.5, 1]")]
    InvalidAlpha(f64),
    #[error("empty posterior")]
    EmptyPosterior,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid class zones: {0}")]
    InvalidZones(String),
    #[error("non-finite posterior sample at pass {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Empirical posterior over the regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct ValencePosterior {
    samples: Vec<f64>,
}

impl ValencePosterior {
    pub fn new(samples: Vec<f64>) -> Result<Self, BayesError> {
        if samples.is_empty() {
            return Err(BayesError::EmptyPosterior);
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(BayesError::NonFinite(i));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n_passes(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// CSV with header `pass_index,y_hat`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "pass_index,y_hat")?;
        for (i, y) in self.samples.iter().enumerate() {
            writeln!(out, "{i},{y}")?;
        }
        Ok(())
    }
}

/// Runs `n_passes` dropout-on forward passes; pass `i` uses the mask seed
/// `derive_seed(seed, "mc_pass", i)`.
pub fn sample_posterior(
    x: &PreparedSeries,
    params: &ModelParams,
    config: &ModelConfig,
    n_passes: usize,
    seed: u64,
) -> Result<ValencePosterior, BayesError> {
    if n_passes == 0 {
        return Err(BayesError::EmptyPosterior);
    }
    let prefix = DeterministicPrefix::compute(x, params, config)?;
    let samples = (0..n_passes)
        .map(|i| {
            predict_from_prefix(
                &prefix,
                params,
                config,
                true,
                derive_seed(seed, "mc_pass", i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    ValencePosterior::new(samples)
}

/// Ordered boundaries splitting the output line into labelled zones. A value
/// exactly on a boundary belongs to the lower zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassZones {
    boundaries: Vec<f64>,
    labels: Vec<String>,
}

impl ClassZones {
    pub fn new(boundaries: Vec<f64>, labels: Vec<String>) -> Result<Self, BayesError> {
        if boundaries.is_empty() {
            return Err(BayesError::InvalidZones("need at least one boundary".into()));
        }
        if labels.len() != boundaries.len() + 1 {
            return Err(BayesError::InvalidZones(format!(
                "{} labels for {} zones",
                labels.len(),
                boundaries.len() + 1
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BayesError::InvalidZones(
                "boundaries must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { boundaries, labels })
    }

    /// Single boundary at 0.5 with zones `low` and `high`.
    pub fn binary() -> Self {
        Self {
            boundaries: vec![0.5],
            labels: vec!["low".into(), "high".into()],
        }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self, zone: usize) -> &str {
        &self.labels[zone]
    }

    pub fn zone_of(&self, value: f64) -> usize {
        self.boundaries.partition_point(|&b| b < value)
    }

    /// Samples per zone.
    pub fn counts(&self, samples: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for &s in samples {
            counts[self.zone_of(s)] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Committed to the zone with this index.
    Class(usize),
    Abstain,
}

impl Outcome {
    pub fn zone(&self) -> Option<usize> {
        match self {
            Outcome::Class(z) => Some(*z),
            Outcome::Abstain => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub outcome: Outcome,
    /// Largest zone mass.
    pub covered_fraction: f64,
    pub alpha: f64,
}

const MASS_SLACK: f64 = 1e-12;

pub fn check_alpha(alpha: f64) -> Result<(), BayesError> {
    if (0.5..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(BayesError::InvalidAlpha(alpha))
    }
}

/// Commits to the zone with the largest posterior mass if that mass reaches
/// `alpha`. Equal maximal masses are resolved toward the zone holding the
/// posterior mean (first tied zone if the mean lies elsewhere).
pub fn classify(
    posterior: &ValencePosterior,
    zones: &ClassZones,
    alpha: f64,
) -> Result<Decision, BayesError> {
    check_alpha(alpha)?;
    if posterior.samples.is_empty() {
        return Err(BayesError::EmptyPosterior);
    }
    let counts = zones.counts(&posterior.samples);
    Ok(decide(&counts, zones.zone_of(posterior.mean()), alpha))
}

/// Decision from zone counts; `mean_zone` resolves ties.
pub fn decide(counts: &[usize], mean_zone: usize, alpha: f64) -> Decision {
    let total: usize = counts.iter().sum();
    let best = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..counts.len()).filter(|&z| counts[z] == best).collect();
    let zone = if tied.contains(&mean_zone) {
        mean_zone
    } else {
        tied[0]
    };
    let mass = best as f64 / total as f64;
    let outcome = if mass + MASS_SLACK >= alpha {
        Outcome::Class(zone)
    } else {
        Outcome::Abstain
    };
    Decision {
        outcome,
        covered_fraction: mass,
        alpha,
    }
}

/// Population variance of the samples, computed on values shifted by the
/// first sample so that identical samples give exactly 0.
pub fn posterior_variance(posterior: &ValencePosterior) -> Result<f64, BayesError> {
    let n = posterior.samples.len();
    if n < 2 {
        return Err(BayesError::TooFewSamples(n));
    }
    let origin = posterior.samples[0];
    let mean = posterior.samples.iter().map(|s| s - origin).sum::<f64>() / n as f64;
    Ok(posterior
        .samples
        .iter()
        .map(|s| {
            let d = s - origin - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64)
}
