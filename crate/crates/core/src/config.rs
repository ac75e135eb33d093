//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored;
//! arrays are comma-separated. [`RunConfig`] is the run-level container used
//! by the CLI and is written back verbatim next to every output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::nn::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Parsed key/value pairs in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if entries.iter().any(|(e, _, _)| e == key) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
            entries.push((key.to_string(), v.trim().to_string(), line));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.entries.iter().find(|(k, _, _)| !known.contains(&k.as_str())) {
            Some((key, _, line)) => Err(ConfigError::UnknownKey {
                key: key.clone(),
                line: *line,
            }),
            None => Ok(()),
        }
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::InvalidValue {
                    key: key.to_string(),
                    message: format!("`{v}`: {e}"),
                })
            })
            .transpose()
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| parse_list(key, v))
            .transpose()
    }

    /// Overrides `target` when `key` is present.
    pub fn set<T: FromStr>(&self, key: &str, target: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.parse_value(key)? {
            *target = v;
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|e| ConfigError::InvalidValue {
                key: key.to_string(),
                message: format!("`{s}`: {e}"),
            })
        })
        .collect()
}

pub fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// `0.5, 0.55, ..., 0.95`, built from integers so every value prints exactly.
pub fn default_alphas() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Everything a `train`, `evaluate` or `sweep` run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `input_length` and `label_scale` are filled from the dataset at run time.
    pub model: ModelConfig,
    pub dataset_root: PathBuf,
    pub use_precomputed_ibi: bool,
    pub n_passes: usize,
    pub alphas: Vec<f64>,
    pub k_out: usize,
    pub n_folds: usize,
    pub val_subjects: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            dataset_root: PathBuf::from("data"),
            use_precomputed_ibi: false,
            n_passes: 1000,
            alphas: default_alphas(),
            k_out: 4,
            n_folds: 10,
            val_subjects: 4,
            workers: 1,
            seed: 0,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "conv_layers",
    "conv_filters",
    "conv_window_sizes",
    "conv_dropout_rate",
    "lstm_hidden_units",
    "lstm_dropout_rate",
    "epochs",
    "lr_initial",
    "lr_floor",
    "lr_patience_epochs",
    "batch_size",
];

const RUN_KEYS: &[&str] = &[
    "dataset_root",
    "use_precomputed_ibi",
    "n_passes",
    "alphas",
    "k_out",
    "n_folds",
    "val_subjects",
    "workers",
    "seed",
];

/// Applies the hyperparameter keys present in `kv` onto `model`.
pub fn apply_model_keys(kv: &KvFile, model: &mut ModelConfig) -> Result<(), ConfigError> {
    kv.set("conv_filters", &mut model.conv_filters)?;
    if let Some(w) = kv.parse_list::<usize>("conv_window_sizes")? {
        model.conv_window_sizes = w;
    }
    kv.set("conv_dropout_rate", &mut model.conv_dropout_rate)?;
    kv.set("lstm_hidden_units", &mut model.lstm_hidden_units)?;
    kv.set("lstm_dropout_rate", &mut model.lstm_dropout_rate)?;
    kv.set("epochs", &mut model.epochs)?;
    kv.set("lr_initial", &mut model.lr_initial)?;
    kv.set("lr_floor", &mut model.lr_floor)?;
    kv.set("lr_patience_epochs", &mut model.lr_patience_epochs)?;
    kv.set("batch_size", &mut model.batch_size)?;
    if let Some(layers) = kv.parse_value::<usize>("conv_layers")? {
        if layers != model.conv_window_sizes.len() {
            return Err(ConfigError::InvalidValue {
                key: "conv_layers".into(),
                message: format!(
                    "{layers} layers but {} window sizes",
                    model.conv_window_sizes.len()
                ),
            });
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self, ConfigError> {
        let known: Vec<&str> = MODEL_KEYS.iter().chain(RUN_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let mut cfg = RunConfig::default();
        apply_model_keys(kv, &mut cfg.model)?;
        if let Some(root) = kv.get("dataset_root") {
            cfg.dataset_root = PathBuf::from(root);
        }
        kv.set("use_precomputed_ibi", &mut cfg.use_precomputed_ibi)?;
        kv.set("n_passes", &mut cfg.n_passes)?;
        if let Some(a) = kv.parse_list::<f64>("alphas")? {
            cfg.alphas = a;
        }
        kv.set("k_out", &mut cfg.k_out)?;
        kv.set("n_folds", &mut cfg.n_folds)?;
        kv.set("val_subjects", &mut cfg.val_subjects)?;
        kv.set("workers", &mut cfg.workers)?;
        kv.set("seed", &mut cfg.seed)?;
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::from_kv(&KvFile::read(path)?)?;
        if cfg.dataset_root.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset_root = dir.join(&cfg.dataset_root);
            }
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| {
            Err(ConfigError::InvalidValue {
                key: key.into(),
                message,
            })
        };
        // input_length is a placeholder until the dataset is loaded.
        if let Err(e) = self.model.validate() {
            return invalid("model", e.to_string());
        }
        if self.n_passes == 0 {
            return invalid("n_passes", "must be at least 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.5..=1.0).contains(*a)) {
            return invalid("alphas", format!("{a} outside [0.5, 1]"));
        }
        if self.k_out == 0 || self.n_folds == 0 {
            return invalid("k_out", "k_out and n_folds must be positive".into());
        }
        if self.val_subjects == 0 {
            return invalid("val_subjects", "must be at least 1".into());
        }
        if self.workers == 0 {
            return invalid("workers", "must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it back yields `self`.
    pub fn to_kv_string(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("dataset_root", self.dataset_root.display().to_string());
        line("use_precomputed_ibi", self.use_precomputed_ibi.to_string());
        line("seed", self.seed.to_string());
        line("conv_layers", m.conv_window_sizes.len().to_string());
        line("conv_filters", m.conv_filters.to_string());
        line("conv_window_sizes", join_list(&m.conv_window_sizes));
        line("conv_dropout_rate", m.conv_dropout_rate.to_string());
        line("lstm_hidden_units", m.lstm_hidden_units.to_string());
        line("lstm_dropout_rate", m.lstm_dropout_rate.to_string());
        line("epochs", m.epochs.to_string());
        line("lr_initial", m.lr_initial.to_string());
        line("lr_floor", m.lr_floor.to_string());
        line("lr_patience_epochs", m.lr_patience_epochs.to_string());
        line("batch_size", m.batch_size.to_string());
        line("n_passes", self.n_passes.to_string());
        line("alphas", join_list(&self.alphas));
        line("k_out", self.k_out.to_string());
        line("n_folds", self.n_folds.to_string());
        line("val_subjects", self.val_subjects.to_string());
        line("workers", self.workers.to_string());
        s
    }
}
