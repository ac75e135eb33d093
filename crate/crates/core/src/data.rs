//! Corpus ingestion and synthetic generators.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/manifest.csv                subject_id,trial_id,sample_rate_hz,valence_raw,scale_min,scale_max
//! <root>/<subject>/<trial>.csv       t_s,ecg_mv
//! <root>/<subject>/<trial>.ibi.csv   ibi_s
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, KvFile};
use crate::seed::rng_for;
use crate::signal::{ecg_to_ibi, zscore, zero_pad, BeatSequence, DetectorConfig, EcgRecord, IbiSeries, PreparedSeries};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 6] = [
    "subject_id",
    "trial_id",
    "sample_rate_hz",
    "valence_raw",
    "scale_min",
    "scale_max",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("manifest line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("all {0} trial(s) were skipped")]
    AllTrialsSkipped(usize),
    #[error("invalid beat times: {0}")]
    InvalidBeatTimes(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// 1-based line in `manifest.csv`.
    pub line: u64,
    pub subject_id: String,
    pub trial_id: String,
    pub sample_rate_hz: f64,
    pub valence_raw: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSample {
    pub subject_id: String,
    pub trial_id: String,
    pub prepared: PreparedSeries,
    /// Raw intervals in seconds, before z-scoring.
    pub ibi_s: Vec<f64>,
    pub valence_raw: f64,
    pub scale: (f64, f64),
}

impl TrialSample {
    /// Label mapped linearly onto `[0, 1]`.
    pub fn target(&self) -> f64 {
        (self.valence_raw - self.scale.0) / (self.scale.1 - self.scale.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedTrial {
    pub subject_id: String,
    pub trial_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrialSample>,
    pub pad_length: usize,
    pub name: String,
    pub skipped: Vec<SkippedTrial>,
}

impl Dataset {
    /// Pads every sample to the longest series and wraps them.
    pub fn assemble(name: impl Into<String>, mut samples: Vec<TrialSample>, skipped: Vec<SkippedTrial>) -> Self {
        let pad_length = samples.iter().map(|s| s.prepared.valid_length()).max().unwrap_or(0);
        for s in &mut samples {
            s.prepared = s.prepared.fit_to(pad_length);
        }
        Self {
            samples,
            pad_length,
            name: name.into(),
            skipped,
        }
    }

    /// Distinct subject ids, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn samples_of<'a>(&'a self, subjects: &'a [String]) -> impl Iterator<Item = &'a TrialSample> + 'a {
        self.samples
            .iter()
            .filter(move |s| subjects.contains(&s.subject_id))
    }

    /// Longest valid length among the given subjects' trials.
    pub fn pad_length_for(&self, subjects: &[String]) -> usize {
        self.samples_of(subjects)
            .map(|s| s.prepared.valid_length())
            .max()
            .unwrap_or(0)
    }
}

pub fn ecg_path(root: &Path, subject: &str, trial: &str) -> PathBuf {
    root.join(subject).join(format!("{trial}.csv"))
}

pub fn ibi_path(root: &Path, subject: &str, trial: &str) -> PathBuf {
    root.join(subject).join(format!("{trial}.ibi.csv"))
}

fn malformed(line: u64, message: impl Into<String>) -> DataError {
    DataError::MalformedRow {
        line,
        message: message.into(),
    }
}

/// Reads and validates `<root>/manifest.csv`.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(DataError::MissingManifest(path));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| malformed(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_HEADER) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(1, format!("missing column `{name}`")))?;
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        let number = |i: usize| -> Result<f64, DataError> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("`{}` is not a number: `{}`", MANIFEST_HEADER[i], field(i))))
        };
        let row = ManifestRow {
            line,
            subject_id: field(0).to_string(),
            trial_id: field(1).to_string(),
            sample_rate_hz: number(2)?,
            valence_raw: number(3)?,
            scale_min: number(4)?,
            scale_max: number(5)?,
        };
        if row.subject_id.is_empty() || row.trial_id.is_empty() {
            return Err(malformed(line, "empty subject or trial id"));
        }
        if row.sample_rate_hz <= 0.0 {
            return Err(malformed(line, format!("sample rate {} Hz", row.sample_rate_hz)));
        }
        if row.scale_min >= row.scale_max {
            return Err(malformed(line, format!("scale ({}, {})", row.scale_min, row.scale_max)));
        }
        if row.valence_raw < row.scale_min || row.valence_raw > row.scale_max {
            return Err(malformed(
                line,
                format!(
                    "valence {} outside scale ({}, {})",
                    row.valence_raw, row.scale_min, row.scale_max
                ),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_column(path: &Path, header: &str) -> Result<Vec<f64>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let col = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .position(|h| h == header)
        .ok_or_else(|| format!("{}: no `{header}` column", path.display()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let text = record.get(col).unwrap_or("");
        let v: f64 = text
            .parse()
            .map_err(|_| format!("{}: bad value `{text}`", path.display()))?;
        out.push(v);
    }
    Ok(out)
}

/// Raw IBI series for one manifest row, either from the ECG file through the
/// signal pipeline or straight from the `.ibi.csv` file.
pub fn read_trial_ibi(root: &Path, row: &ManifestRow, use_precomputed_ibi: bool) -> Result<IbiSeries, String> {
    if use_precomputed_ibi {
        let intervals = read_column(&ibi_path(root, &row.subject_id, &row.trial_id), "ibi_s")?;
        return Ok(IbiSeries::new(&row.subject_id, &row.trial_id, intervals));
    }
    let samples = read_column(&ecg_path(root, &row.subject_id, &row.trial_id), "ecg_mv")?;
    let ecg = EcgRecord::new(&row.subject_id, &row.trial_id, row.sample_rate_hz, samples);
    ecg_to_ibi(&ecg, &DetectorConfig::default()).map_err(|e| e.to_string())
}

/// Loads every manifest trial in manifest order. Trials that fail to read or
/// preprocess are skipped, logged and listed in [`Dataset::skipped`].
pub fn load_dataset(root: &Path, use_precomputed_ibi: bool) -> Result<Dataset, DataError> {
    let rows = read_manifest(root)?;
    let loaded: Vec<Result<TrialSample, SkippedTrial>> = rows
        .par_iter()
        .map(|row| {
            let skip = |reason: String| SkippedTrial {
                subject_id: row.subject_id.clone(),
                trial_id: row.trial_id.clone(),
                reason,
            };
            let ibi = read_trial_ibi(root, row, use_precomputed_ibi).map_err(skip)?;
            let prepared = prepare_unpadded(&ibi.intervals_s).map_err(skip)?;
            Ok(TrialSample {
                subject_id: row.subject_id.clone(),
                trial_id: row.trial_id.clone(),
                prepared,
                ibi_s: ibi.intervals_s,
                valence_raw: row.valence_raw,
                scale: (row.scale_min, row.scale_max),
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => samples.push(s),
            Err(s) => {
                log::warn!("skipping {}/{}: {}", s.subject_id, s.trial_id, s.reason);
                skipped.push(s);
            }
        }
    }
    if samples.is_empty() {
        return Err(DataError::AllTrialsSkipped(skipped.len()));
    }
    let name = root
        .file_name()
        .map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Dataset::assemble(name, samples, skipped))
}

fn prepare_unpadded(intervals: &[f64]) -> Result<PreparedSeries, String> {
    if let Some(bad) = intervals.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(format!("invalid interval {bad}"));
    }
    let z = zscore(intervals).map_err(|e| e.to_string())?;
    zero_pad(&z, z.len()).map_err(|e| e.to_string())
}

/// Width (standard deviation) of the Gaussian QRS template in seconds.
pub const QRS_SIGMA_S: f64 = 0.02;
const QRS_AMPLITUDE_MV: f64 = 1.0;

/// Sum of Gaussian QRS templates at `beat_times_s` plus white noise.
/// Ground-truth peaks are the nearest samples to the beat times.
pub fn synth_ecg(
    beat_times_s: &[f64],
    duration_s: f64,
    sample_rate_hz: f64,
    noise_sd_mv: f64,
    seed: u64,
) -> Result<(EcgRecord, BeatSequence), DataError> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(DataError::InvalidBeatTimes(format!("sample rate {sample_rate_hz}")));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(DataError::InvalidBeatTimes(format!("duration {duration_s}")));
    }
    if !(noise_sd_mv.is_finite() && noise_sd_mv >= 0.0) {
        return Err(DataError::InvalidBeatTimes(format!("noise sd {noise_sd_mv}")));
    }
    if beat_times_s.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t < duration_s)) {
        return Err(DataError::InvalidBeatTimes("beat outside [0, duration)".into()));
    }
    if beat_times_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DataError::InvalidBeatTimes("beat times must increase".into()));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    let mut samples = vec![0.0; n];
    let reach = (5.0 * QRS_SIGMA_S * sample_rate_hz).ceil() as isize;
    for &b in beat_times_s {
        let centre = (b * sample_rate_hz).round() as isize;
        for i in (centre - reach).max(0)..(centre + reach + 1).min(n as isize) {
            let dt = i as f64 / sample_rate_hz - b;
            samples[i as usize] += QRS_AMPLITUDE_MV * (-dt * dt / (2.0 * QRS_SIGMA_S * QRS_SIGMA_S)).exp();
        }
    }
    if noise_sd_mv > 0.0 {
        let normal = Normal::new(0.0, noise_sd_mv).expect("validated sd");
        let mut rng = rng_for(seed, "ecg_noise", 0);
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    let truth = beat_times_s
        .iter()
        .map(|t| ((t * sample_rate_hz).round() as usize).min(n.saturating_sub(1)))
        .collect();
    Ok((
        EcgRecord::new("", "", sample_rate_hz, samples),
        BeatSequence::new(truth, sample_rate_hz),
    ))
}

/// AR(1) interval generator for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbiClassParams {
    pub mean_s: f64,
    pub sd_s: f64,
    /// Lag-1 autocorrelation.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    /// Probability that a trial is high-valence.
    pub balance: f64,
    pub low: IbiClassParams,
    pub high: IbiClassParams,
    /// Inclusive range of intervals per trial.
    pub min_beats: usize,
    pub max_beats: usize,
    /// SD of the per-subject shift added to every interval.
    pub subject_offset_sd_s: f64,
    pub scale: (f64, f64),
    pub seed: u64,
    /// Also write ECG files when emitting a corpus.
    pub write_ecg: bool,
    pub sample_rate_hz: f64,
    pub ecg_noise_sd_mv: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            trials_per_subject: 8,
            balance: 0.5,
            low: IbiClassParams {
                mean_s: 0.8,
                sd_s: 0.12,
                rho: 0.6,
            },
            high: IbiClassParams {
                mean_s: 0.8,
                sd_s: 0.03,
                rho: 0.1,
            },
            min_beats: 48,
            max_beats: 80,
            subject_offset_sd_s: 0.05,
            scale: (1.0, 9.0),
            seed: 0,
            write_ecg: true,
            sample_rate_hz: 256.0,
            ecg_noise_sd_mv: 0.02,
        }
    }
}

/// Intervals are clamped to this range after generation.
pub const SYNTH_IBI_RANGE: (f64, f64) = (0.25, 2.5);

const SPEC_KEYS: &[&str] = &[
    "n_subjects",
    "trials_per_subject",
    "balance",
    "low_mean_s",
    "low_sd_s",
    "low_rho",
    "high_mean_s",
    "high_sd_s",
    "high_rho",
    "min_beats",
    "max_beats",
    "subject_offset_sd_s",
    "scale_min",
    "scale_max",
    "seed",
    "write_ecg",
    "sample_rate_hz",
    "ecg_noise_sd_mv",
];

impl SyntheticSpec {
    /// Default spec overridden by the keys present in `kv`.
    pub fn from_kv(kv: &KvFile) -> Result<Self, DataError> {
        kv.reject_unknown(SPEC_KEYS)?;
        let mut s = Self::default();
        kv.set("n_subjects", &mut s.n_subjects)?;
        kv.set("trials_per_subject", &mut s.trials_per_subject)?;
        kv.set("balance", &mut s.balance)?;
        kv.set("low_mean_s", &mut s.low.mean_s)?;
        kv.set("low_sd_s", &mut s.low.sd_s)?;
        kv.set("low_rho", &mut s.low.rho)?;
        kv.set("high_mean_s", &mut s.high.mean_s)?;
        kv.set("high_sd_s", &mut s.high.sd_s)?;
        kv.set("high_rho", &mut s.high.rho)?;
        kv.set("min_beats", &mut s.min_beats)?;
        kv.set("max_beats", &mut s.max_beats)?;
        kv.set("subject_offset_sd_s", &mut s.subject_offset_sd_s)?;
        kv.set("scale_min", &mut s.scale.0)?;
        kv.set("scale_max", &mut s.scale.1)?;
        kv.set("seed", &mut s.seed)?;
        kv.set("write_ecg", &mut s.write_ecg)?;
        kv.set("sample_rate_hz", &mut s.sample_rate_hz)?;
        kv.set("ecg_noise_sd_mv", &mut s.ecg_noise_sd_mv)?;
        Ok(s)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("n_subjects", self.n_subjects.to_string());
        line("trials_per_subject", self.trials_per_subject.to_string());
        line("balance", self.balance.to_string());
        line("low_mean_s", self.low.mean_s.to_string());
        line("low_sd_s", self.low.sd_s.to_string());
        line("low_rho", self.low.rho.to_string());
        line("high_mean_s", self.high.mean_s.to_string());
        line("high_sd_s", self.high.sd_s.to_string());
        line("high_rho", self.high.rho.to_string());
        line("min_beats", self.min_beats.to_string());
        line("max_beats", self.max_beats.to_string());
        line("subject_offset_sd_s", self.subject_offset_sd_s.to_string());
        line("scale_min", self.scale.0.to_string());
        line("scale_max", self.scale.1.to_string());
        line("seed", self.seed.to_string());
        line("write_ecg", self.write_ecg.to_string());
        line("sample_rate_hz", self.sample_rate_hz.to_string());
        line("ecg_noise_sd_mv", self.ecg_noise_sd_mv.to_string());
        out
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_subjects == 0 || self.trials_per_subject == 0 {
            return bad("need at least one subject and one trial".into());
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return bad(format!("balance {} outside [0, 1]", self.balance));
        }
        for (name, c) in [("low", self.low), ("high", self.high)] {
            if !(c.mean_s > 0.2 && c.mean_s < 3.0) {
                return bad(format!("{name} mean {} s outside (0.2, 3.0)", c.mean_s));
            }
            if !(c.sd_s.is_finite() && c.sd_s >= 0.0) {
                return bad(format!("{name} sd {} s", c.sd_s));
            }
            if !(c.rho > -1.0 && c.rho < 1.0) {
                return bad(format!("{name} autocorrelation {} outside (-1, 1)", c.rho));
            }
        }
        if self.min_beats < 2 || self.max_beats < self.min_beats {
            return bad(format!("length range {}..={}", self.min_beats, self.max_beats));
        }
        if !(self.subject_offset_sd_s.is_finite() && self.subject_offset_sd_s >= 0.0) {
            return bad(format!("subject offset sd {}", self.subject_offset_sd_s));
        }
        let (lo, hi) = self.scale;
        if !(lo.is_finite() && hi.is_finite() && hi - lo >= 4.0) {
            return bad(format!("scale ({lo}, {hi}) must span at least 4 so midpoint +/- 2 fits"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if !(self.ecg_noise_sd_mv.is_finite() && self.ecg_noise_sd_mv >= 0.0) {
            return bad(format!("ECG noise sd {}", self.ecg_noise_sd_mv));
        }
        Ok(())
    }
}

/// One generated trial before normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrial {
    pub subject_id: String,
    pub trial_id: String,
    pub high: bool,
    pub valence_raw: f64,
    pub intervals_s: Vec<f64>,
}

pub fn subject_name(index: usize) -> String {
    format!("s{:02}", index + 1)
}

pub fn trial_name(index: usize) -> String {
    format!("t{:02}", index + 1)
}

fn ar1(params: IbiClassParams, offset: f64, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = (1.0 - params.rho * params.rho).sqrt();
    let mut x = params.sd_s * std.sample(rng);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            x = params.rho * x + innovation * params.sd_s * std.sample(rng);
        }
        out.push((params.mean_s + offset + x).clamp(SYNTH_IBI_RANGE.0, SYNTH_IBI_RANGE.1));
    }
    out
}

/// Generates every trial of `spec` in subject-major order.
pub fn synth_trials(spec: &SyntheticSpec) -> Result<Vec<SynthTrial>, DataError> {
    spec.validate()?;
    let mid = 0.5 * (spec.scale.0 + spec.scale.1);
    let mut trials = Vec::with_capacity(spec.n_subjects * spec.trials_per_subject);
    for s in 0..spec.n_subjects {
        let offset = if spec.subject_offset_sd_s > 0.0 {
            Normal::new(0.0, spec.subject_offset_sd_s)
                .expect("validated sd")
                .sample(&mut rng_for(spec.seed, "subject_offset", s as u64))
        } else {
            0.0
        };
        for t in 0..spec.trials_per_subject {
            let mut rng = rng_for(spec.seed, "synth_trial", (s * spec.trials_per_subject + t) as u64);
            let high = rng.gen::<f64>() < spec.balance;
            let len = rng.gen_range(spec.min_beats..=spec.max_beats);
            let params = if high { spec.high } else { spec.low };
            trials.push(SynthTrial {
                subject_id: subject_name(s),
                trial_id: trial_name(t),
                high,
                valence_raw: if high { mid + 2.0 } else { mid - 2.0 },
                intervals_s: ar1(params, offset, len, &mut rng),
            });
        }
    }
    Ok(trials)
}

/// In-memory synthetic dataset, z-scored per trial and padded to the longest
/// trial.
pub fn synth_ibi_dataset(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for t in synth_trials(spec)? {
        let prepared = prepare_unpadded(&t.intervals_s).map_err(DataError::InvalidSpec)?;
        samples.push(TrialSample {
            subject_id: t.subject_id,
            trial_id: t.trial_id,
            prepared,
            ibi_s: t.intervals_s,
            valence_raw: t.valence_raw,
            scale: spec.scale,
        });
    }
    Ok(Dataset::assemble("synthetic", samples, Vec::new()))
}

/// Lead-in and lead-out around the beats of a synthesized ECG trial.
const ECG_MARGIN_S: f64 = 0.5;

/// Writes a synthetic corpus in the on-disk layout and returns the number of
/// trials written.
pub fn write_synthetic_corpus(spec: &SyntheticSpec, out: &Path) -> Result<usize, DataError> {
    let trials = synth_trials(spec)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = MANIFEST_HEADER.join(",");
    manifest.push('\n');
    for (i, t) in trials.iter().enumerate() {
        let _ = writeln!(
            manifest,
            "{},{},{},{},{},{}",
            t.subject_id, t.trial_id, spec.sample_rate_hz, t.valence_raw, spec.scale.0, spec.scale.1
        );
        let dir = out.join(&t.subject_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_ibi_csv(&ibi_path(out, &t.subject_id, &t.trial_id), &t.intervals_s)?;
        if spec.write_ecg {
            let mut beats = Vec::with_capacity(t.intervals_s.len() + 1);
            let mut time = ECG_MARGIN_S;
            beats.push(time);
            for ibi in &t.intervals_s {
                time += ibi;
                beats.push(time);
            }
            let (ecg, _) = synth_ecg(
                &beats,
                time + ECG_MARGIN_S,
                spec.sample_rate_hz,
                spec.ecg_noise_sd_mv,
                crate::seed::derive_seed(spec.seed, "synth_ecg", i as u64),
            )?;
            write_ecg_csv(&ecg_path(out, &t.subject_id, &t.trial_id), &ecg)?;
        }
    }
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(trials.len())
}

pub fn write_ibi_csv(path: &Path, intervals_s: &[f64]) -> Result<(), DataError> {
    let mut text = String::from("ibi_s\n");
    for v in intervals_s {
        let _ = writeln!(text, "{v}");
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_ecg_csv(path: &Path, ecg: &EcgRecord) -> Result<(), DataError> {
    let mut text = String::from("t_s,ecg_mv\n");
    for (i, v) in ecg.samples.iter().enumerate() {
        let _ = writeln!(text, "{},{v}", i as f64 / ecg.sample_rate_hz);
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let mut text = MANIFEST_HEADER.join(",");
    text.push('\n');
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.subject_id, r.trial_id, r.sample_rate_hz, r.valence_raw, r.scale_min, r.scale_max
        );
    }
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population_sd(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    }

    fn ibi_corpus(dir: &Path, rows: &[(&str, &str, f64)], lengths: &[usize]) {
        let mut manifest = String::from("subject_id,trial_id,sample_rate_hz,valence_raw,scale_min,scale_max\n");
        for ((s, t, v), &n) in rows.iter().zip(lengths) {
            manifest.push_str(&format!("{s},{t},256,{v},1,9\n"));
            std::fs::create_dir_all(dir.join(s)).unwrap();
            let ibis: Vec<f64> = (0..n).map(|i| 0.8 + 0.01 * ((i % 7) as f64)).collect();
            write_ibi_csv(&ibi_path(dir, s, t), &ibis).unwrap();
        }
        std::fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
    }

    #[test]
    fn pad_length_is_longest_trial() {
        let dir = tempfile::tempdir().unwrap();
        ibi_corpus(
            dir.path(),
            &[("a", "1", 3.0), ("a", "2", 7.0), ("b", "1", 5.0), ("b", "2", 6.0)],
            &[50, 74, 60, 74],
        );
        let ds = load_dataset(dir.path(), true).unwrap();
        assert_eq!(ds.pad_length, 74);
        assert_eq!(ds.samples.len(), 4);
        assert!(ds.samples.iter().all(|s| s.prepared.padded_length() == 74));
        assert_eq!(ds.samples[0].prepared.valid_length(), 50);
        assert_eq!(ds.subjects(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn out_of_scale_valence_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        ibi_corpus(dir.path(), &[("a", "1", 3.0), ("a", "2", 11.0)], &[10, 10]);
        match load_dataset(dir.path(), true) {
            Err(DataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_manifest_skips_everything() {
        let dir = tempfile::tempdir().unwrap();
        ibi_corpus(dir.path(), &[], &[]);
        assert!(matches!(
            load_dataset(dir.path(), true),
            Err(DataError::AllTrialsSkipped(0))
        ));
        assert!(matches!(
            load_dataset(&dir.path().join("nope"), true),
            Err(DataError::MissingManifest(_))
        ));
    }

    #[test]
    fn unreadable_trials_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        ibi_corpus(dir.path(), &[("a", "1", 3.0), ("a", "2", 7.0)], &[10, 12]);
        std::fs::remove_file(ibi_path(dir.path(), "a", "2")).unwrap();
        let ds = load_dataset(dir.path(), true).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.skipped.len(), 1);
        assert_eq!(ds.skipped[0].trial_id, "2");
    }

    #[test]
    fn synth_ecg_peaks_at_beats() {
        let beats: Vec<f64> = (0..75).map(|k| 0.4 + 0.8 * k as f64).collect();
        let (ecg, truth) = synth_ecg(&beats, 60.0, 256.0, 0.0, 1).unwrap();
        assert_eq!(ecg.samples.len(), 60 * 256);
        for (&b, &idx) in beats.iter().zip(&truth.r_peak_indices) {
            let lo = idx.saturating_sub(20);
            let hi = (idx + 20).min(ecg.samples.len() - 1);
            let argmax = (lo..=hi)
                .max_by(|&i, &j| ecg.samples[i].total_cmp(&ecg.samples[j]))
                .unwrap();
            assert!((argmax as f64 - b * 256.0).abs() <= 1.0);
        }
        let max = ecg.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!((max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synth_ecg_is_seeded() {
        let beats = [0.5, 1.3, 2.1];
        let a = synth_ecg(&beats, 3.0, 128.0, 0.1, 5).unwrap().0;
        let b = synth_ecg(&beats, 3.0, 128.0, 0.1, 5).unwrap().0;
        let c = synth_ecg(&beats, 3.0, 128.0, 0.1, 6).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(matches!(
            synth_ecg(&[1.0, 0.5], 3.0, 128.0, 0.0, 0),
            Err(DataError::InvalidBeatTimes(_))
        ));
    }

    #[test]
    fn default_spec_separates_raw_variability() {
        let trials = synth_trials(&SyntheticSpec::default()).unwrap();
        assert_eq!(trials.len(), 160);
        let mean_sd = |high: bool| {
            let sds: Vec<f64> = trials
                .iter()
                .filter(|t| t.high == high)
                .map(|t| population_sd(&t.intervals_s))
                .collect();
            sds.iter().sum::<f64>() / sds.len() as f64
        };
        assert!(mean_sd(false) >= 3.0 * mean_sd(true));
    }

    #[test]
    fn balance_one_is_single_class() {
        let spec = SyntheticSpec {
            balance: 1.0,
            ..SyntheticSpec::default()
        };
        let ds = synth_ibi_dataset(&spec).unwrap();
        assert!(ds.samples.iter().all(|s| s.valence_raw == 7.0));
        assert!(ds.samples.iter().all(|s| s.prepared.padded_length() == ds.pad_length));
    }

    #[test]
    fn spec_validation() {
        let bad = SyntheticSpec {
            min_beats: 1,
            ..SyntheticSpec::default()
        };
        assert!(matches!(synth_trials(&bad), Err(DataError::InvalidSpec(_))));
        let bad = SyntheticSpec {
            balance: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
        let s = SyntheticSpec::default();
        let back = SyntheticSpec::from_kv(&KvFile::parse(&s.to_kv_string()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn written_corpus_loads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_subjects: 2,
            trials_per_subject: 2,
            write_ecg: false,
            ..SyntheticSpec::default()
        };
        assert_eq!(write_synthetic_corpus(&spec, dir.path()).unwrap(), 4);
        let loaded = load_dataset(dir.path(), true).unwrap();
        let direct = synth_ibi_dataset(&spec).unwrap();
        assert_eq!(loaded.samples, direct.samples);
    }
}
