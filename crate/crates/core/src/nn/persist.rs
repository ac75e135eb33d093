//! Two-file model format.
//!
//! `model.meta` is `key = value` text holding the configuration and a tensor
//! directory (`tensor.<name> = <d0>x<d1>x... <byte offset>`, in storage
//! order); `model.bin` is the concatenation of every tensor as little-endian
//! `f64` in that order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ModelConfig, ModelParams, Tensor};
use crate::config::{join_list, parse_list, ConfigError, KvFile};

pub const META_FILE: &str = "model.meta";
pub const BIN_FILE: &str = "model.bin";
const FORMAT: &str = "valence-model/1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("model.meta: {0}")]
    Meta(#[from] ConfigError),
    #[error("model files disagree: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `model.meta` and `model.bin` into `dir`. `extra` pairs are stored
/// in the meta file under `info.<key>`.
pub fn save_model(
    dir: &Path,
    params: &ModelParams,
    config: &ModelConfig,
    extra: &[(&str, String)],
) -> Result<(), PersistError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut meta = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(meta, "{k} = {v}");
    };
    kv("format", FORMAT.into());
    kv("creator", format!("valence-core {}", env!("CARGO_PKG_VERSION")));
    kv("input_length", config.input_length.to_string());
    kv("conv_filters", config.conv_filters.to_string());
    kv("conv_window_sizes", join_list(&config.conv_window_sizes));
    kv("conv_dropout_rate", config.conv_dropout_rate.to_string());
    kv("lstm_hidden_units", config.lstm_hidden_units.to_string());
    kv("lstm_dropout_rate", config.lstm_dropout_rate.to_string());
    kv("epochs", config.epochs.to_string());
    kv("lr_initial", config.lr_initial.to_string());
    kv("lr_floor", config.lr_floor.to_string());
    kv("lr_patience_epochs", config.lr_patience_epochs.to_string());
    kv("batch_size", config.batch_size.to_string());
    kv("seed", config.seed.to_string());
    kv(
        "label_scale",
        join_list(&[config.label_scale.0, config.label_scale.1]),
    );
    for (k, v) in extra {
        kv(&format!("info.{k}"), v.clone());
    }
    let mut bin = Vec::with_capacity(params.num_values() * 8);
    for (name, t) in params.named_tensors() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        kv(&format!("tensor.{name}"), format!("{} {}", dims.join("x"), bin.len()));
        for v in t.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta_path = dir.join(META_FILE);
    let bin_path = dir.join(BIN_FILE);
    std::fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;
    std::fs::write(&bin_path, bin).map_err(io_err(&bin_path))?;
    Ok(())
}

fn required<T: std::str::FromStr>(kv: &KvFile, key: &str) -> Result<T, PersistError>
where
    T::Err: std::fmt::Display,
{
    kv.parse_value(key)?
        .ok_or_else(|| PersistError::Meta(ConfigError::Missing(key.into())))
}

/// Reads a model written by [`save_model`]; values are bit-identical.
pub fn load_model(dir: &Path) -> Result<(ModelParams, ModelConfig), PersistError> {
    load_model_files(&dir.join(META_FILE), &dir.join(BIN_FILE))
}

pub fn load_model_files(
    meta_path: &Path,
    bin_path: &Path,
) -> Result<(ModelParams, ModelConfig), PersistError> {
    let text = std::fs::read_to_string(meta_path).map_err(io_err(meta_path))?;
    let kv = KvFile::parse(&text)?;
    let format: String = required(&kv, "format")?;
    if format != FORMAT {
        return Err(PersistError::Inconsistent(format!("unsupported format `{format}`")));
    }
    let scale: Vec<f64> = parse_list("label_scale", &required::<String>(&kv, "label_scale")?)?;
    if scale.len() != 2 {
        return Err(PersistError::Inconsistent("label_scale needs two values".into()));
    }
    let config = ModelConfig {
        input_length: required(&kv, "input_length")?,
        conv_filters: required(&kv, "conv_filters")?,
        conv_window_sizes: parse_list(
            "conv_window_sizes",
            &required::<String>(&kv, "conv_window_sizes")?,
        )?,
        conv_dropout_rate: required(&kv, "conv_dropout_rate")?,
        lstm_hidden_units: required(&kv, "lstm_hidden_units")?,
        lstm_dropout_rate: required(&kv, "lstm_dropout_rate")?,
        epochs: required(&kv, "epochs")?,
        lr_initial: required(&kv, "lr_initial")?,
        lr_floor: required(&kv, "lr_floor")?,
        lr_patience_epochs: required(&kv, "lr_patience_epochs")?,
        batch_size: required(&kv, "batch_size")?,
        seed: required(&kv, "seed")?,
        label_scale: (scale[0], scale[1]),
    };
    config
        .validate()
        .map_err(|e| PersistError::Inconsistent(e.to_string()))?;

    let bin = std::fs::read(bin_path).map_err(io_err(bin_path))?;
    let mut params = ModelParams::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let directory: Vec<(&str, &str)> = kv
        .entries()
        .filter_map(|(k, v)| k.strip_prefix("tensor.").map(|n| (n, v)))
        .collect();
    if directory.len() != expected.len() {
        return Err(PersistError::Inconsistent(format!(
            "{} tensors listed, {} expected",
            directory.len(),
            expected.len()
        )));
    }
    let mut total = 0;
    for ((name, value), (slot, (want_name, want_shape))) in directory
        .iter()
        .zip(params.tensors_mut().into_iter().zip(expected))
    {
        if *name != want_name {
            return Err(PersistError::Inconsistent(format!(
                "tensor `{name}` where `{want_name}` was expected"
            )));
        }
        let (shape_str, offset_str) = value
            .split_once(' ')
            .ok_or_else(|| PersistError::Inconsistent(format!("bad directory entry `{value}`")))?;
        let shape: Vec<usize> = shape_str
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| PersistError::Inconsistent(format!("`{name}` shape: {e}")))?;
        let offset: usize = offset_str
            .trim()
            .parse()
            .map_err(|e| PersistError::Inconsistent(format!("`{name}` offset: {e}")))?;
        if shape != want_shape {
            return Err(PersistError::Inconsistent(format!(
                "`{name}` has shape {shape:?}, config implies {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let end = offset + 8 * n;
        if end > bin.len() {
            return Err(PersistError::Inconsistent(format!(
                "`{name}` extends past the end of model.bin"
            )));
        }
        let values: Vec<f64> = bin[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *slot = Tensor::new(shape, values)
            .map_err(|e| PersistError::Inconsistent(e.to_string()))?;
        total += 8 * n;
    }
    if total != bin.len() {
        return Err(PersistError::Inconsistent(format!(
            "model.bin holds {} bytes, directory covers {total}",
            bin.len()
        )));
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::he_normal_init;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig {
            input_length: 12,
            conv_filters: 3,
            conv_window_sizes: vec![4, 2],
            lstm_hidden_units: 2,
            seed: 77,
            label_scale: (1.0, 5.0),
            ..ModelConfig::default()
        };
        let mut params = he_normal_init(&config, 77);
        params.dense_bias.data_mut()[0] = 0.1 + 0.2;
        save_model(dir.path(), &params, &config, &[("best_epoch", "3".into())]).unwrap();
        let (p2, c2) = load_model(dir.path()).unwrap();
        assert_eq!(c2, config);
        let a: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = p2.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_bin_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig {
            input_length: 4,
            conv_filters: 2,
            conv_window_sizes: vec![2],
            lstm_hidden_units: 1,
            ..ModelConfig::default()
        };
        save_model(dir.path(), &he_normal_init(&config, 1), &config, &[]).unwrap();
        let bin = dir.path().join(BIN_FILE);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(dir.path()), Err(PersistError::Inconsistent(_))));
    }
}
