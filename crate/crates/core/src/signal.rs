//! ECG to model-input conversion.
//!
//! The chain is `detect_r_peaks -> extract_ibi -> zscore -> zero_pad`; each
//! step is a pure function and [`preprocess_trial`] composes them, tagging any
//! failure with the stage that produced it.
//!
//! The R-peak detector is an offline adaptive-threshold scheme working on a
//! derivative "complex lead":
//!
//! 1. subtract a centred moving-average baseline and smooth the remainder,
//! 2. take the absolute central derivative and smooth it again (`Y`),
//! 3. hold a threshold that starts at a fraction of `max(Y)` over the first
//!    seconds, decays geometrically every sample and is reset to a fraction of
//!    `Y` at each detection,
//! 4. fire at local maxima of `Y` above the threshold, outside a refractory
//!    lock-out, then move the mark to the largest band-limited deflection
//!    nearby.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("signal too short: {samples} samples at {sample_rate_hz} Hz (need at least 2 s)")]
    SignalTooShort { samples: usize, sample_rate_hz: f64 },
    #[error("invalid sample rate {0} Hz")]
    InvalidSampleRate(f64),
    #[error("non-finite ECG sample at index {0}")]
    NonFiniteSample(usize),
    #[error("too few beats: {0} R-peaks (need at least 3)")]
    TooFewBeats(usize),
    #[error("only {0} interval(s) survived artifact rejection (need at least 2)")]
    EmptyAfterCleaning(usize),
    #[error("series too short for z-scoring: {0} value(s)")]
    TooShort(usize),
    #[error("target length {target} is smaller than series length {len}")]
    TargetTooSmall { target: usize, len: usize },
    #[error("invalid interval {0} s")]
    InvalidInterval(f64),
}

/// Raw single-lead ECG for one subject/trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub subject_id: String,
    pub trial_id: String,
    pub sample_rate_hz: f64,
    /// Samples in millivolts.
    pub samples: Vec<f64>,
}

impl EcgRecord {
    pub fn new(
        subject_id: impl Into<String>,
        trial_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<f64>,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            trial_id: trial_id.into(),
            sample_rate_hz,
            samples,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Detected R-peak sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSequence {
    pub r_peak_indices: Vec<usize>,
    pub sample_rate_hz: f64,
}

impl BeatSequence {
    pub fn new(r_peak_indices: Vec<usize>, sample_rate_hz: f64) -> Self {
        Self {
            r_peak_indices,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.r_peak_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_peak_indices.is_empty()
    }

    /// Peak times in seconds.
    pub fn times_s(&self) -> Vec<f64> {
        self.r_peak_indices
            .iter()
            .map(|&i| i as f64 / self.sample_rate_hz)
            .collect()
    }
}

/// Inter-beat intervals in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct IbiSeries {
    pub subject_id: String,
    pub trial_id: String,
    pub intervals_s: Vec<f64>,
}

impl IbiSeries {
    pub fn new(
        subject_id: impl Into<String>,
        trial_id: impl Into<String>,
        intervals_s: Vec<f64>,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            trial_id: trial_id.into(),
            intervals_s,
        }
    }

    pub fn len(&self) -> usize {
        self.intervals_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_s.is_empty()
    }
}

/// Z-scored, zero-padded model input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    values: Vec<f64>,
    valid_length: usize,
}

impl PreparedSeries {
    /// Builds a series from already-normalised values and a valid prefix
    /// length. Entries past `valid_length` must be zero.
    pub fn from_parts(values: Vec<f64>, valid_length: usize) -> Option<Self> {
        if valid_length > values.len() || values[valid_length..].iter().any(|&v| v != 0.0) {
            return None;
        }
        Some(Self {
            values,
            valid_length,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn padded_length(&self) -> usize {
        self.values.len()
    }

    /// The unpadded prefix.
    pub fn valid(&self) -> &[f64] {
        &self.values[..self.valid_length]
    }

    /// Re-pads to `target`, truncating the end of the valid region when it is
    /// longer than `target`.
    pub fn fit_to(&self, target: usize) -> PreparedSeries {
        let keep = self.valid_length.min(target);
        let mut values = self.values[..keep].to_vec();
        values.resize(target, 0.0);
        PreparedSeries {
            values,
            valid_length: keep,
        }
    }
}

/// Parameters of the adaptive-threshold R-peak detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Baseline moving-average window.
    pub baseline_window_s: f64,
    /// Smoothing window applied to the band-limited signal and to `Y`.
    pub smoothing_window_s: f64,
    /// Threshold as a fraction of `Y` (initial and at every reset).
    pub threshold_fraction: f64,
    /// Per-sample multiplicative threshold decay.
    pub threshold_decay: f64,
    /// Span used to initialise the threshold.
    pub init_window_s: f64,
    pub refractory_s: f64,
    /// Half-width of the search for the R-peak apex around a detection.
    pub refine_window_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            baseline_window_s: 0.6,
            smoothing_window_s: 0.04,
            threshold_fraction: 0.6,
            threshold_decay: 0.999,
            init_window_s: 5.0,
            refractory_s: 0.2,
            refine_window_s: 0.05,
        }
    }
}

/// Physiological band for interval cleaning, open at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbiBounds {
    pub min_s: f64,
    pub max_s: f64,
}

impl Default for IbiBounds {
    fn default() -> Self {
        Self {
            min_s: 0.2,
            max_s: 3.0,
        }
    }
}

impl IbiBounds {
    pub fn contains(&self, interval_s: f64) -> bool {
        interval_s > self.min_s && interval_s < self.max_s
    }
}

fn window_samples(seconds: f64, fs: f64) -> usize {
    ((seconds * fs).round() as usize).max(1)
}

/// Centred moving average; windows are clipped at the edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    let before = width / 2;
    let after = width - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Band-limited signal and complex lead `Y` used by the detector.
fn detector_leads(samples: &[f64], fs: f64, cfg: &DetectorConfig) -> (Vec<f64>, Vec<f64>) {
    let baseline = moving_average(samples, window_samples(cfg.baseline_window_s, fs));
    let centred: Vec<f64> = samples.iter().zip(&baseline).map(|(x, b)| x - b).collect();
    let smooth_w = window_samples(cfg.smoothing_window_s, fs);
    let band = moving_average(&centred, smooth_w);
    let n = band.len();
    let deriv: Vec<f64> = (0..n)
        .map(|i| {
            let a = band[i.saturating_sub(1)];
            let b = band[(i + 1).min(n - 1)];
            ((b - a) / 2.0).abs()
        })
        .collect();
    let lead = moving_average(&deriv, smooth_w);
    (band, lead)
}

/// Detects R-peaks with the default [`DetectorConfig`].
pub fn detect_r_peaks(ecg: &EcgRecord) -> Result<BeatSequence, SignalError> {
    detect_r_peaks_with(ecg, &DetectorConfig::default())
}

pub fn detect_r_peaks_with(
    ecg: &EcgRecord,
    cfg: &DetectorConfig,
) -> Result<BeatSequence, SignalError> {
    let fs = ecg.sample_rate_hz;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SignalError::InvalidSampleRate(fs));
    }
    let n = ecg.samples.len();
    if (n as f64) < 2.0 * fs {
        return Err(SignalError::SignalTooShort {
            samples: n,
            sample_rate_hz: fs,
        });
    }
    if let Some(i) = ecg.samples.iter().position(|v| !v.is_finite()) {
        return Err(SignalError::NonFiniteSample(i));
    }

    let (band, lead) = detector_leads(&ecg.samples, fs, cfg);
    let init_span = window_samples(cfg.init_window_s, fs).min(n);
    let lead_max = lead[..init_span].iter().cloned().fold(0.0_f64, f64::max);
    let mut threshold = cfg.threshold_fraction * lead_max;
    let refractory = cfg.refractory_s * fs;
    let refine = window_samples(cfg.refine_window_s, fs);

    let mut peaks: Vec<usize> = Vec::new();
    let mut last_detection: Option<usize> = None;
    for i in 1..n - 1 {
        threshold *= cfg.threshold_decay;
        if let Some(last) = last_detection {
            if ((i - last) as f64) < refractory {
                continue;
            }
        }
        let y = lead[i];
        if y > threshold && y >= lead[i - 1] && y > lead[i + 1] {
            last_detection = Some(i);
            threshold = cfg.threshold_fraction * y;
            let lo = i.saturating_sub(refine);
            let hi = (i + refine).min(n - 1);
            let apex = (lo..=hi)
                .max_by(|&a, &b| band[a].abs().total_cmp(&band[b].abs()).then(b.cmp(&a)))
                .unwrap_or(i);
            match peaks.last() {
                Some(&prev) if ((apex.saturating_sub(prev)) as f64) < refractory || apex <= prev => {}
                _ => peaks.push(apex),
            }
        }
    }
    Ok(BeatSequence::new(peaks, fs))
}

/// Converts peaks to intervals and drops those outside the default band.
pub fn extract_ibi(beats: &BeatSequence) -> Result<IbiSeries, SignalError> {
    extract_ibi_with(beats, IbiBounds::default())
}

pub fn extract_ibi_with(beats: &BeatSequence, bounds: IbiBounds) -> Result<IbiSeries, SignalError> {
    if beats.len() < 3 {
        return Err(SignalError::TooFewBeats(beats.len()));
    }
    let intervals: Vec<f64> = beats
        .r_peak_indices
        .windows(2)
        .map(|w| (w[1] as f64 - w[0] as f64) / beats.sample_rate_hz)
        .filter(|&d| bounds.contains(d))
        .collect();
    if intervals.len() < 2 {
        return Err(SignalError::EmptyAfterCleaning(intervals.len()));
    }
    Ok(IbiSeries::new("", "", intervals))
}

/// Per-series z-score with the population standard deviation.
///
/// A zero-variance series maps to all zeros.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>, SignalError> {
    let n = values.len();
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if values.iter().all(|&v| v == values[0]) || sd <= 1e-12 * scale {
        return Ok(vec![0.0; n]);
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Appends zeros up to `target_length`.
pub fn zero_pad(values: &[f64], target_length: usize) -> Result<PreparedSeries, SignalError> {
    if target_length < values.len() {
        return Err(SignalError::TargetTooSmall {
            target: target_length,
            len: values.len(),
        });
    }
    let mut padded = values.to_vec();
    padded.resize(target_length, 0.0);
    Ok(PreparedSeries {
        values: padded,
        valid_length: values.len(),
    })
}

/// Z-scores and pads an interval series.
pub fn prepare_ibi(ibi: &IbiSeries, target_length: usize) -> Result<PreparedSeries, SignalError> {
    if let Some(&bad) = ibi.intervals_s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(SignalError::InvalidInterval(bad));
    }
    zero_pad(&zscore(&ibi.intervals_s)?, target_length)
}

/// Pipeline stage that failed inside [`preprocess_trial`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    DetectPeaks,
    ExtractIbi,
    ZScore,
    ZeroPad,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::DetectPeaks => "detect_r_peaks",
            Stage::ExtractIbi => "extract_ibi",
            Stage::ZScore => "zscore",
            Stage::ZeroPad => "zero_pad",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage}: {source}")]
pub struct PreprocessError {
    pub stage: Stage,
    pub source: SignalError,
}

fn at(stage: Stage) -> impl FnOnce(SignalError) -> PreprocessError {
    move |source| PreprocessError { stage, source }
}

/// ECG to IBI series (detection plus cleaning), keeping the record's ids.
pub fn ecg_to_ibi(ecg: &EcgRecord, cfg: &DetectorConfig) -> Result<IbiSeries, PreprocessError> {
    let beats = detect_r_peaks_with(ecg, cfg).map_err(at(Stage::DetectPeaks))?;
    let mut ibi = extract_ibi(&beats).map_err(at(Stage::ExtractIbi))?;
    ibi.subject_id = ecg.subject_id.clone();
    ibi.trial_id = ecg.trial_id.clone();
    Ok(ibi)
}

/// Full ECG-to-input pipeline.
pub fn preprocess_trial(
    ecg: &EcgRecord,
    target_length: usize,
) -> Result<PreparedSeries, PreprocessError> {
    preprocess_trial_with(ecg, target_length, &DetectorConfig::default())
}

pub fn preprocess_trial_with(
    ecg: &EcgRecord,
    target_length: usize,
    cfg: &DetectorConfig,
) -> Result<PreparedSeries, PreprocessError> {
    let ibi = ecg_to_ibi(ecg, cfg)?;
    let z = zscore(&ibi.intervals_s).map_err(at(Stage::ZScore))?;
    zero_pad(&z, target_length).map_err(at(Stage::ZeroPad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn beats(idx: &[usize]) -> BeatSequence {
        BeatSequence::new(idx.to_vec(), 256.0)
    }

    #[test]
    fn extract_ibi_examples() {
        let ibi = extract_ibi(&beats(&[256, 512, 768])).unwrap();
        assert_eq!(ibi.intervals_s, vec![1.0, 1.0]);
        let ibi = extract_ibi(&beats(&[0, 128, 384, 512])).unwrap();
        assert_eq!(ibi.intervals_s, vec![0.5, 1.0, 0.5]);
        assert_eq!(
            extract_ibi(&beats(&[0, 25, 281])),
            Err(SignalError::EmptyAfterCleaning(1))
        );
        assert_eq!(extract_ibi(&beats(&[0, 256])), Err(SignalError::TooFewBeats(2)));
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in z.iter().zip([-1.224745, 0.0, 1.224745]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
        }
        assert_eq!(zscore(&[0.8, 0.8, 0.8]).unwrap(), vec![0.0; 3]);
        assert_eq!(zscore(&[0.8]), Err(SignalError::TooShort(1)));
    }

    #[test]
    fn zero_pad_examples() {
        let p = zero_pad(&[1.0, -1.0], 4).unwrap();
        assert_eq!(p.values(), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(p.valid_length(), 2);
        let p = zero_pad(&[1.0, -1.0], 2).unwrap();
        assert_eq!(p.values(), &[1.0, -1.0]);
        assert_eq!(
            zero_pad(&[0.5], 0),
            Err(SignalError::TargetTooSmall { target: 0, len: 1 })
        );
    }

    #[test]
    fn fit_to_truncates_and_pads() {
        let p = zero_pad(&[1.0, 2.0, 3.0], 5).unwrap();
        let short = p.fit_to(2);
        assert_eq!(short.values(), &[1.0, 2.0]);
        assert_eq!(short.valid_length(), 2);
        let long = p.fit_to(6);
        assert_eq!(long.values(), &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(long.valid_length(), 3);
    }

    #[test]
    fn short_and_flat_signals() {
        let short = EcgRecord::new("s", "t", 256.0, vec![0.0; 500]);
        assert!(matches!(
            detect_r_peaks(&short),
            Err(SignalError::SignalTooShort { .. })
        ));
        let flat = EcgRecord::new("s", "t", 256.0, vec![0.0; 60 * 256]);
        assert!(detect_r_peaks(&flat).unwrap().is_empty());
        let err = preprocess_trial(&flat, 100).unwrap_err();
        assert_eq!(err.stage, Stage::ExtractIbi);
        assert_eq!(err.source, SignalError::TooFewBeats(0));
        let err = preprocess_trial(&short, 100).unwrap_err();
        assert_eq!(err.stage, Stage::DetectPeaks);
    }

    #[test]
    fn moving_average_clips_edges() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(m, vec![1.5, 2.0, 3.0, 3.5]);
    }

    proptest! {
        #[test]
        fn zscore_affine_invariant(
            xs in prop::collection::vec(0.3f64..2.0, 2..60),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            prop_assume!(xs.iter().any(|&v| (v - xs[0]).abs() > 1e-6));
            let z1 = zscore(&xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let z2 = zscore(&ys).unwrap();
            for (p, q) in z1.iter().zip(&z2) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn zscore_moments(xs in prop::collection::vec(-100.0f64..100.0, 2..80)) {
            prop_assume!(xs.iter().any(|&v| (v - xs[0]).abs() > 1e-3));
            let z = zscore(&xs).unwrap();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn padded_tail_is_zero(xs in prop::collection::vec(-3.0f64..3.0, 0..40), extra in 0usize..40) {
            let p = zero_pad(&xs, xs.len() + extra).unwrap();
            prop_assert_eq!(p.padded_length(), xs.len() + extra);
            prop_assert!(p.values()[xs.len()..].iter().all(|&v| v == 0.0));
            prop_assert_eq!(p.values().iter().sum::<f64>(), xs.iter().sum::<f64>());
        }

        #[test]
        fn ibi_cumsum_reconstructs_peaks(gaps in prop::collection::vec(60usize..700, 2..40), start in 0usize..500) {
            let mut idx = vec![start];
            for g in &gaps {
                let next = idx.last().unwrap() + g;
                idx.push(next);
            }
            let b = beats(&idx);
            let ibi = extract_ibi(&b).unwrap();
            let mut t = start as f64 / 256.0;
            for (k, d) in ibi.intervals_s.iter().enumerate() {
                t += d;
                prop_assert!((t * 256.0 - idx[k + 1] as f64).abs() < 1e-6);
            }
        }

        #[test]
        fn detector_refractory_and_determinism(
            xs in prop::collection::vec(-2.0f64..2.0, 520..900),
        ) {
            let ecg = EcgRecord::new("s", "t", 256.0, xs);
            let a = detect_r_peaks(&ecg).unwrap();
            let b = detect_r_peaks(&ecg).unwrap();
            prop_assert_eq!(&a, &b);
            for w in a.r_peak_indices.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!((w[1] - w[0]) as f64 >= 0.2 * 256.0);
            }
        }
    }
}
