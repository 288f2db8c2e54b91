//! Experiment configuration file.
//!
//! One JSON document per experiment. Unknown keys are rejected. Relative
//! paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use quantbench::data::{load_cifar10, load_csv, make_synthetic, DatasetSplit, SyntheticSpec};
use quantbench::experiments::{Arch, Family, Interpolation, QuantMode};
use quantbench::nn::{cnn_spec, ffdnn_spec, FFDNN_DROPOUT};
use quantbench::quantizer::bits_to_levels;
use quantbench::trainer::TrainConfig;
use quantbench::{Error, Result};
use serde::Deserialize;

pub const SEED_ENV: &str = "QUANTBENCH_SEED";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub dataset: Option<DatasetConfig>,
    pub network: Option<NetworkConfig>,
    pub train: TrainConfig,
    /// Defaults to `train` with a tenth of the learning rate and half the epochs.
    pub retrain: Option<TrainConfig>,
    pub quant: QuantConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
    Cifar10,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Training samples; defaults to 70% (ignored for CIFAR-10).
    #[serde(default)]
    pub train: Option<usize>,
    /// Validation samples; defaults to 15%. The remainder is the test split.
    #[serde(default)]
    pub valid: Option<usize>,
}

/// A hidden-unit count or a feature-map list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Size {
    Units(usize),
    Maps(Vec<usize>),
}

impl Size {
    fn as_vec(&self) -> Vec<usize> {
        match self {
            Size::Units(u) => vec![*u],
            Size::Maps(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub family: Family,
    #[serde(default)]
    pub hidden_units: Option<usize>,
    #[serde(default)]
    pub hidden_layers: Option<usize>,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub map_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub fc_units: Option<usize>,
    /// Sizes for a width sweep.
    #[serde(default)]
    pub widths: Option<Vec<Size>>,
    /// Depths for a depth sweep.
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: Vec<u32>,
    /// Weight groups to quantize; all when absent.
    pub groups: Option<Vec<String>>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: vec![2],
            groups: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    #[default]
    Width,
    Depth,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub modes: Vec<QuantMode>,
    pub seeds_per_point: usize,
    pub interpolation: Interpolation,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Width,
            modes: vec![QuantMode::Float, QuantMode::Direct, QuantMode::Retrained],
            seeds_per_point: 3,
            interpolation: Interpolation::Linear,
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

/// Prefixes a config error with the field it came from.
fn within(path: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => field(path, m),
        other => other,
    }
}

/// Parsed config plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let at = if at == "." { "config".to_string() } else { at };
        Error::Config(format!("{at}: {}", e.inner()))
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

/// Seed precedence: `--seed` flag, then `QUANTBENCH_SEED`, then the config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}: {v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        match (flag, &self.config.output_dir) {
            (Some(f), _) => Ok(f.to_path_buf()),
            (None, Some(d)) => Ok(self.resolve(d)),
            (None, None) => Err(field("output_dir", "required unless --out is given")),
        }
    }

    pub fn retrain_config(&self) -> TrainConfig {
        self.config
            .retrain
            .clone()
            .unwrap_or_else(|| self.config.train.for_retraining())
    }

    /// Checks everything a data-consuming command needs before any work starts.
    pub fn validate_dataset(&self) -> Result<&DatasetConfig> {
        let d = self
            .config
            .dataset
            .as_ref()
            .ok_or_else(|| field("dataset", "required for this command"))?;
        match d.kind {
            DatasetKind::Synthetic => {
                if d.synthetic.is_none() {
                    return Err(field("dataset.synthetic", "required for kind \"synthetic\""));
                }
            }
            DatasetKind::Csv | DatasetKind::Cifar10 => {
                let p = d
                    .path
                    .as_ref()
                    .ok_or_else(|| field("dataset.path", format!("required for kind {:?}", d.kind)))?;
                let p = self.resolve(p);
                if !p.exists() {
                    return Err(field("dataset.path", format!("{} does not exist", p.display())));
                }
                if let Some(l) = &d.labels_path {
                    let l = self.resolve(l);
                    if !l.exists() {
                        return Err(field("dataset.labels_path", format!("{} does not exist", l.display())));
                    }
                }
            }
        }
        Ok(d)
    }

    pub fn load_dataset(&self) -> Result<DatasetSplit> {
        let d = self.validate_dataset()?;
        let all = match d.kind {
            DatasetKind::Cifar10 => {
                return load_cifar10(&self.resolve(d.path.as_ref().expect("validated")));
            }
            DatasetKind::Synthetic => make_synthetic(d.synthetic.as_ref().expect("validated"))?,
            DatasetKind::Csv => load_csv(
                &self.resolve(d.path.as_ref().expect("validated")),
                d.labels_path.as_ref().map(|l| self.resolve(l)).as_deref(),
            )?,
        };
        let n = all.len();
        let train = d.train.unwrap_or(n * 7 / 10);
        let valid = d.valid.unwrap_or(n * 15 / 100);
        if train == 0 || valid == 0 || train + valid > n {
            return Err(field(
                "dataset.train",
                format!("split {train} train + {valid} valid does not fit {n} samples"),
            ));
        }
        all.split(train, valid)
    }

    fn network(&self) -> Result<&NetworkConfig> {
        self.config
            .network
            .as_ref()
            .ok_or_else(|| field("network", "required for this command"))
    }

    /// Architecture from the network block, sized for `sample_shape` inputs.
    pub fn arch(&self, sample_shape: &[usize], classes: usize, for_sweep: Option<SweepKind>) -> Result<Arch> {
        let n = self.network()?;
        let width_sweep = for_sweep == Some(SweepKind::Width);
        match n.family {
            Family::Ffdnn => {
                let [input_dim] = sample_shape else {
                    return Err(field(
                        "network.family",
                        format!("ffdnn needs flat samples, dataset samples have shape {sample_shape:?}"),
                    ));
                };
                let hidden_units = match (n.hidden_units, width_sweep) {
                    (Some(u), _) => u,
                    (None, true) => 1,
                    (None, false) => return Err(field("network.hidden_units", "required")),
                };
                let hidden_layers = match (n.hidden_layers, for_sweep) {
                    (Some(l), _) => l,
                    (None, Some(SweepKind::Depth)) => 0,
                    (None, _) => return Err(field("network.hidden_layers", "required")),
                };
                Ok(Arch::Ffdnn {
                    input_dim: *input_dim,
                    hidden_units,
                    hidden_layers,
                    classes,
                    dropout: n.dropout.unwrap_or(FFDNN_DROPOUT),
                })
            }
            Family::Cnn => {
                let &[c, h, w] = sample_shape else {
                    return Err(field(
                        "network.family",
                        format!("cnn needs [channels, height, width] samples, got {sample_shape:?}"),
                    ));
                };
                let map_counts = match (&n.map_counts, width_sweep) {
                    (Some(m), _) => m.clone(),
                    (None, true) => vec![1],
                    (None, false) => return Err(field("network.map_counts", "required")),
                };
                Ok(Arch::Cnn {
                    map_counts,
                    input_shape: [c, h, w],
                    fc_units: n.fc_units.unwrap_or(64),
                    classes,
                })
            }
        }
    }

    pub fn sweep_archs(&self, sample_shape: &[usize], classes: usize) -> Result<Vec<Arch>> {
        let kind = self.config.sweep.kind;
        let template = self.arch(sample_shape, classes, Some(kind))?;
        let n = self.network()?;
        match kind {
            SweepKind::Width => {
                let widths = n
                    .widths
                    .as_ref()
                    .filter(|w| !w.is_empty())
                    .ok_or_else(|| field("network.widths", "required for a width sweep"))?;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        template
                            .with_width(&s.as_vec())
                            .map_err(|e| within(&format!("network.widths[{i}]"), e))
                    })
                    .collect()
            }
            SweepKind::Depth => {
                let depths = n
                    .depths
                    .as_ref()
                    .filter(|d| !d.is_empty())
                    .ok_or_else(|| field("network.depths", "required for a depth sweep"))?;
                depths
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        template
                            .with_depth(d)
                            .map_err(|e| within(&format!("network.depths[{i}]"), e))
                    })
                    .collect()
            }
        }
    }

    pub fn validate_training(&self) -> Result<()> {
        self.config.train.validate().map_err(|e| within("train", e))?;
        self.retrain_config().validate().map_err(|e| within("retrain", e))
    }

    pub fn validate_quant(&self) -> Result<()> {
        let q = &self.config.quant;
        for (i, &b) in q.bits.iter().enumerate() {
            bits_to_levels(b).map_err(|e| within(&format!("quant.bits[{i}]"), e))?;
        }
        if let (Some(groups), Some(n)) = (&q.groups, &self.config.network) {
            let names = group_names(n)?;
            for (i, g) in groups.iter().enumerate() {
                if !names.contains(g) {
                    return Err(field(
                        &format!("quant.groups[{i}]"),
                        format!("no weight group {g:?} in this network (groups: {})", names.join(", ")),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        let s = &self.config.sweep;
        if s.modes.is_empty() {
            return Err(field("sweep.modes", "needs at least one mode"));
        }
        if s.seeds_per_point == 0 {
            return Err(field("sweep.seeds_per_point", "must be at least 1"));
        }
        if s.modes.iter().any(|m| *m != QuantMode::Float) && self.config.quant.bits.is_empty() {
            return Err(field("quant.bits", "quantized sweep modes need at least one bit width"));
        }
        Ok(())
    }
}

/// Group names the network block declares, independent of input size.
fn group_names(n: &NetworkConfig) -> Result<Vec<String>> {
    let spec = match n.family {
        Family::Ffdnn => ffdnn_spec(1, 1, n.hidden_layers.unwrap_or(0), 2, 0.0)?,
        Family::Cnn => cnn_spec(n.map_counts.as_deref().unwrap_or(&[1]), [1, 64, 64], 1, 2)?,
    };
    Ok(quantbench::nn::Network::new(spec, &mut quantbench::Rng::new(0))?
        .group_names()
        .into_iter()
        .map(String::from)
        .collect())
}
