//! Experiment configuration: TOML schema, dataset assembly, and defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sqsnn_core::encoding::{
    load_idx_dataset, load_spiketrain_file, load_usps_csv, synth_two_pattern, Dataset,
    EncoderConfig,
};
use sqsnn_core::error::{CoreError, Result};
use sqsnn_core::learning::TrainerConfig;
use sqsnn_core::network::{LayerSpec, LayeredSpec, NeuronModelSpec};
use sqsnn_core::rng::{Purpose, RngFactory};
use sqsnn_core::Real;

/// Environment variable naming the default data directory; relative dataset
/// paths resolve against it.
pub const DATA_DIR_ENV: &str = "SQSNN_DATA_DIR";

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub encoder: Option<EncoderSpec>,
    pub model: ModelSpec,
    pub trainer: TrainerSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Generated two-pattern task; train and test sets use disjoint streams.
    Synthetic {
        train_per_class: usize,
        test_per_class: usize,
        channels: usize,
        noise_flip_prob: Real,
        t_len: usize,
    },
    /// USPS-style CSV (pixels in [0,1], then the digit label).
    UspsCsv {
        train_path: PathBuf,
        test_path: PathBuf,
        /// Raw digit labels to keep, remapped to class indices in order.
        #[serde(default)]
        classes: Option<Vec<usize>>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// IDX image/label file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Recorded spike trains in the container format.
    SpikeTrain { train_path: PathBuf, test_path: PathBuf },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub t_len: usize,
    pub p_max: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub neuron: NeuronChoice,
    /// Hidden layer sizes; the output layer matches the class count.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_one")]
    pub n_io: usize,
    #[serde(default = "default_one")]
    pub n_mem: usize,
    #[serde(default = "default_qlif_threshold")]
    pub qlif_threshold: Real,
    #[serde(default = "default_one_f")]
    pub qlif_beta: Real,
    #[serde(default = "default_one_f")]
    pub qlif_t1: Real,
    #[serde(default)]
    pub qlif_shots: Option<usize>,
    #[serde(default = "default_lif_decay")]
    pub lif_decay: Real,
    #[serde(default = "default_one_f")]
    pub lif_threshold: Real,
    #[serde(default)]
    pub self_synapse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronChoice {
    Sqs,
    Qlif,
    Lif,
}

fn default_one() -> usize {
    1
}

fn default_one_f() -> Real {
    1.0
}

fn default_qlif_threshold() -> Real {
    0.5
}

fn default_lif_decay() -> Real {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerSpec {
    pub kind: TrainerKind,
    #[serde(flatten)]
    pub config: TrainerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Local,
    Surrogate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub iterations: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_one")]
    pub workers: usize,
}

fn default_eval_every() -> u64 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<Real>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CoreError::config(format!(
                "unsupported config version {}",
                cfg.version
            )));
        }
        cfg.trainer.config.validate()?;
        Ok(cfg)
    }

    /// Encoder settings: explicit section, or per-dataset-kind defaults.
    pub fn encoder(&self) -> EncoderConfig {
        if let Some(e) = &self.encoder {
            return EncoderConfig { t_len: e.t_len, p_max: e.p_max };
        }
        match &self.dataset {
            DatasetSpec::Synthetic { t_len, .. } => EncoderConfig { t_len: *t_len, p_max: 1.0 },
            DatasetSpec::UspsCsv { .. } => EncoderConfig { t_len: 10, p_max: 0.5 },
            DatasetSpec::Idx { .. } => EncoderConfig { t_len: 5, p_max: 1.0 },
            DatasetSpec::SpikeTrain { .. } => EncoderConfig { t_len: 20, p_max: 1.0 },
        }
    }

    /// Train and test datasets, fully materialized.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::Synthetic { train_per_class, test_per_class, channels, noise_flip_prob, t_len } => {
                let factory = RngFactory::new(seed);
                let train = synth_two_pattern(
                    *train_per_class,
                    *noise_flip_prob,
                    *t_len,
                    *channels,
                    &mut factory.stream(Purpose::Synth, &[0]),
                )?;
                let test = synth_two_pattern(
                    *test_per_class,
                    *noise_flip_prob,
                    *t_len,
                    *channels,
                    &mut factory.stream(Purpose::Synth, &[1]),
                )?;
                Ok((train, test))
            }
            DatasetSpec::UspsCsv { train_path, test_path, classes, train_limit, test_limit } => {
                let mut train = load_usps_csv(&resolve(train_path))?;
                let mut test = load_usps_csv(&resolve(test_path))?;
                if let Some(keep) = classes {
                    train = train.filter_classes(keep);
                    test = test.filter_classes(keep);
                }
                truncate(&mut train, *train_limit);
                truncate(&mut test, *test_limit);
                Ok((train, test))
            }
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, train_limit, test_limit } => {
                let t = self.encoder().t_len;
                let mut train = load_idx_dataset(&resolve(train_images), &resolve(train_labels), t)?;
                let mut test = load_idx_dataset(&resolve(test_images), &resolve(test_labels), t)?;
                truncate(&mut train, *train_limit);
                truncate(&mut test, *test_limit);
                Ok((train, test))
            }
            DatasetSpec::SpikeTrain { train_path, test_path } => Ok((
                load_spiketrain_file(&resolve(train_path))?,
                load_spiketrain_file(&resolve(test_path))?,
            )),
        }
    }

    /// Layered network description for the given class count.
    pub fn layered_spec(&self, input_dim: usize, num_classes: usize) -> LayeredSpec {
        let model = match self.model.neuron {
            NeuronChoice::Sqs => {
                NeuronModelSpec::Sqs { n_io: self.model.n_io, n_mem: self.model.n_mem }
            }
            NeuronChoice::Qlif => NeuronModelSpec::Qlif {
                threshold: self.model.qlif_threshold,
                beta: self.model.qlif_beta,
                t1: self.model.qlif_t1,
                shots: self.model.qlif_shots,
            },
            NeuronChoice::Lif => NeuronModelSpec::Lif {
                decay: self.model.lif_decay,
                threshold: self.model.lif_threshold,
            },
        };
        let mut layers: Vec<LayerSpec> = self
            .model
            .hidden
            .iter()
            .map(|&size| LayerSpec { size, model: model.clone() })
            .collect();
        layers.push(LayerSpec { size: num_classes, model });
        LayeredSpec { input_dim, layers, self_synapse: self.model.self_synapse }
    }

    /// Apply a sweep value to the trainer configuration.
    pub fn with_sweep_value(&self, param: &str, value: Real) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        let t = &mut cfg.trainer.config;
        match param {
            "lambda" => t.lambda = value,
            "epsilon" => t.epsilon = value,
            "lr_w" => t.lr_w = value,
            "lr_theta" => t.lr_theta = value,
            "global_passes" => t.global_passes = value as usize,
            "m_syn" => t.m_syn = value as usize,
            "m_som" => t.m_som = value as usize,
            "m_p" => t.m_p = value as usize,
            other => return Err(CoreError::config(format!("unknown sweep parameter '{other}'"))),
        }
        t.validate()?;
        Ok(cfg)
    }
}

fn truncate(ds: &mut Dataset, limit: Option<usize>) {
    if let Some(n) = limit {
        ds.items.truncate(n);
    }
}

/// Resolve a dataset path against the data-directory environment variable.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

