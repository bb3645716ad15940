use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::FeatureConfig;
use crate::train::{NoiseKind, OptimizerKind, SplitSpec, TrainConfig};

/// Every pipeline knob. Serialized as flat `key = value` lines; `#` starts
/// a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    /// Share of each cross-validation training portion held out for
    /// checkpoint selection.
    pub crossval_val_fraction: f64,
    pub noise_kind: NoiseKind,
    pub snr_grid_db: Vec<f64>,
    pub noise_bank: Option<PathBuf>,
    pub benchmark_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            crossval_val_fraction: 0.1,
            noise_kind: NoiseKind::Gaussian,
            snr_grid_db: vec![-5.0, 0.0, 5.0, 10.0],
            noise_bank: None,
            benchmark_runs: 10,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "window_sec",
    "overlap",
    "filter_order",
    "filter_cutoff_hz",
    "stft_window",
    "stft_hop",
    "n_mels",
    "mel_fmin_hz",
    "mel_fmax_hz",
    "image_size",
    "patch_size",
    "proj_len",
    "n_blocks",
    "n_heads",
    "head_dim",
    "mlp_dims",
    "dropout",
    "n_classes",
    "epochs",
    "learning_rate",
    "batch_size",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "stop_at_val_acc",
    "split_train",
    "split_val",
    "split_test",
    "folds",
    "crossval_val_fraction",
    "noise_kind",
    "snr_grid_db",
    "noise_bank",
    "benchmark_runs",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
                self.split.seed = self.seed;
            }
            "window_sec" => self.features.window_sec = parse(key, v)?,
            "overlap" => self.features.overlap = parse(key, v)?,
            "filter_order" => self.features.filter_order = parse(key, v)?,
            "filter_cutoff_hz" => self.features.filter_cutoff_hz = parse(key, v)?,
            "stft_window" => self.features.stft_window = parse(key, v)?,
            "stft_hop" => self.features.stft_hop = parse(key, v)?,
            "n_mels" => self.features.n_mels = parse(key, v)?,
            "mel_fmin_hz" => self.features.mel_fmin_hz = parse(key, v)?,
            "mel_fmax_hz" => self.features.mel_fmax_hz = parse(key, v)?,
            "image_size" => {
                self.features.image_size = parse(key, v)?;
                self.model.image_size = self.features.image_size;
            }
            "patch_size" => self.model.patch_size = parse(key, v)?,
            "proj_len" => self.model.proj_len = parse(key, v)?,
            "n_blocks" => self.model.n_blocks = parse(key, v)?,
            "n_heads" => self.model.n_heads = parse(key, v)?,
            "head_dim" => self.model.head_dim = parse(key, v)?,
            "mlp_dims" => self.model.mlp_dims = parse_list(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "n_classes" => self.model.n_classes = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "optimizer" => {
                self.train.optimizer = match v.to_ascii_lowercase().as_str() {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("optimizer: unknown {v:?}"))),
                }
            }
            "adam_beta1" => self.train.beta1 = parse(key, v)?,
            "adam_beta2" => self.train.beta2 = parse(key, v)?,
            "adam_epsilon" => self.train.epsilon = parse(key, v)?,
            "stop_at_val_acc" => {
                self.train.stop_at_val_acc = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "split_train" => self.split.fractions[0] = parse(key, v)?,
            "split_val" => self.split.fractions[1] = parse(key, v)?,
            "split_test" => self.split.fractions[2] = parse(key, v)?,
            "folds" => self.split.folds = parse(key, v)?,
            "crossval_val_fraction" => self.crossval_val_fraction = parse(key, v)?,
            "noise_kind" => self.noise_kind = v.parse()?,
            "snr_grid_db" => self.snr_grid_db = parse_list(key, v)?,
            "noise_bank" => {
                self.noise_bank = (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
            }
            "benchmark_runs" => self.benchmark_runs = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "window_sec" => self.features.window_sec.to_string(),
            "overlap" => self.features.overlap.to_string(),
            "filter_order" => self.features.filter_order.to_string(),
            "filter_cutoff_hz" => self.features.filter_cutoff_hz.to_string(),
            "stft_window" => self.features.stft_window.to_string(),
            "stft_hop" => self.features.stft_hop.to_string(),
            "n_mels" => self.features.n_mels.to_string(),
            "mel_fmin_hz" => self.features.mel_fmin_hz.to_string(),
            "mel_fmax_hz" => self.features.mel_fmax_hz.to_string(),
            "image_size" => self.features.image_size.to_string(),
            "patch_size" => self.model.patch_size.to_string(),
            "proj_len" => self.model.proj_len.to_string(),
            "n_blocks" => self.model.n_blocks.to_string(),
            "n_heads" => self.model.n_heads.to_string(),
            "head_dim" => self.model.head_dim.to_string(),
            "mlp_dims" => join(&self.model.mlp_dims),
            "dropout" => self.model.dropout.to_string(),
            "n_classes" => self.model.n_classes.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "optimizer" => match self.train.optimizer {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            "adam_beta1" => self.train.beta1.to_string(),
            "adam_beta2" => self.train.beta2.to_string(),
            "adam_epsilon" => self.train.epsilon.to_string(),
            "stop_at_val_acc" => self
                .train
                .stop_at_val_acc
                .map_or("none".into(), |v| v.to_string()),
            "split_train" => self.split.fractions[0].to_string(),
            "split_val" => self.split.fractions[1].to_string(),
            "split_test" => self.split.fractions[2].to_string(),
            "folds" => self.split.folds.to_string(),
            "crossval_val_fraction" => self.crossval_val_fraction.to_string(),
            "noise_kind" => match self.noise_kind {
                NoiseKind::Gaussian => "gaussian".into(),
                NoiseKind::HeartSound => "heart_sound".into(),
            },
            "snr_grid_db" => join(&self.snr_grid_db),
            "noise_bank" => self
                .noise_bank
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
            "benchmark_runs" => self.benchmark_runs.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Defaults overridden by `text`; duplicate and unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.image_size != self.features.image_size {
            return Err(Error::Config("model and feature image sizes differ".into()));
        }
        self.model.validate()?;
        self.split.validate()?;
        if !(0.0..1.0).contains(&self.crossval_val_fraction) {
            return Err(Error::Config(format!(
                "crossval_val_fraction {} outside [0, 1)",
                self.crossval_val_fraction
            )));
        }
        if self.benchmark_runs < 10 {
            return Err(Error::Config("benchmark_runs must be at least 10".into()));
        }
        Ok(())
    }

    /// Fully resolved document, one line per key in canonical order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Hex SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let d = RunConfig::default();
        let text = d.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), d);
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
        assert!(text.contains("n_blocks = 4\n"));
        assert!(text.contains("learning_rate = 0.001\n"));
    }

    #[test]
    fn every_key_is_settable_and_gettable() {
        for k in CONFIG_KEYS {
            let mut c = RunConfig::default();
            let v = c.get(k).unwrap();
            c.set(k, &v).unwrap();
            assert_eq!(c.get(k).unwrap(), v, "{k}");
        }
    }

    #[test]
    fn overrides_comments_and_errors() {
        let c = RunConfig::parse("# comment\nepochs = 3 # inline\nseed=9\nmlp_dims = 32, 64\n")
            .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!((c.seed, c.train.seed, c.split.seed), (9, 9, 9));
        assert_eq!(c.model.mlp_dims, vec![32, 64]);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("epochs = 1\nepochs = 2").is_err());
        assert!(RunConfig::parse("epochs").is_err());
        assert!(RunConfig::parse("epochs = many").is_err());
        assert!(RunConfig::parse("split_val = 0.5").is_err());
        assert!(RunConfig::parse("benchmark_runs = 3").is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("dropout", "0.1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
    }
}
