//! The JSON configuration schema shared by the CLI, the library tests,
//! and result replay. One schema serves all three: a stored result
//! embeds its exact config, and re-running that config reproduces the
//! result bit for bit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{gen_train_test, load_dataset_csv, SyntheticKind};
use crate::error::{Error, Result};
use crate::losses::{BaseLoss, LossSpec};
use crate::model::{Activation, MlpModel};
use crate::noise::{
    asymmetric_circular_matrix, asymmetric_pairs_matrix, cifar10_asym_pairs, inject,
    inject_instance_dependent, load_external_noisy, symmetric_matrix, NoisyDataset,
    TransitionMatrix,
};
use crate::numerics::{Rng, Vec64};
use crate::train::TrainConfig;
use crate::transforms::ClipConfig;

/// Dataset source: a synthetic generator or a CSV pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gaussians,
    TwoMoons,
    Rings,
    Csv,
}

fn default_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub k: usize,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    /// Test-set size for synthetic generators; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_n: Option<usize>,
    /// Held-out CSV for `kind = csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv_path: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn synthetic(kind: DatasetKind, k: usize, n: usize, d: usize, separation: f64) -> Self {
        DatasetConfig {
            kind,
            k,
            n,
            d,
            separation,
            csv_path: None,
            test_n: None,
            test_csv_path: None,
        }
    }

    fn synthetic_kind(&self) -> Result<SyntheticKind> {
        match self.kind {
            DatasetKind::Gaussians => Ok(SyntheticKind::Gaussians),
            DatasetKind::TwoMoons => Ok(SyntheticKind::TwoMoons),
            DatasetKind::Rings => Ok(SyntheticKind::Rings),
            DatasetKind::Csv => Err(Error::config("csv datasets are not generated")),
        }
    }

    /// Produce the clean (train, test) pair. Synthetic kinds draw from
    /// the given rng; CSV kinds read both files.
    pub fn load_pair(&self, rng: &Rng) -> Result<(NoisyDataset, NoisyDataset)> {
        match self.kind {
            DatasetKind::Csv => {
                let train_path = self
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::config("csv dataset requires csv_path"))?;
                let test_path = self.test_csv_path.as_ref().ok_or_else(|| {
                    Error::config("csv dataset requires test_csv_path for training runs")
                })?;
                Ok((
                    load_dataset_csv(train_path, self.k)?,
                    load_dataset_csv(test_path, self.k)?,
                ))
            }
            _ => {
                let kind = self.synthetic_kind()?;
                gen_train_test(
                    kind,
                    self.k,
                    self.n,
                    self.test_n.unwrap_or(self.n),
                    self.d,
                    self.separation,
                    rng,
                )
            }
        }
    }
}

/// Pair map: either the CIFAR-10 style preset name or explicit
/// source → target pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairMap {
    Preset(String),
    Pairs(Vec<(usize, usize)>),
}

impl PairMap {
    pub fn resolve(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            PairMap::Pairs(p) => Ok(p.clone()),
            PairMap::Preset(name) if name == "cifar10" => Ok(cifar10_asym_pairs()),
            PairMap::Preset(name) => Err(Error::config(format!("unknown pair preset '{name}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    AsymmetricPairs,
    AsymmetricCircular,
    InstanceDependent,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default)]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PairMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl NoiseConfig {
    pub fn clean() -> Self {
        NoiseConfig {
            kind: NoiseKind::Symmetric,
            eta: 0.0,
            pairs: None,
            path: None,
        }
    }

    pub fn symmetric(eta: f64) -> Self {
        NoiseConfig {
            kind: NoiseKind::Symmetric,
            eta,
            pairs: None,
            path: None,
        }
    }

    /// The class-conditional transition matrix, when the kind has one.
    pub fn transition_matrix(&self, k: usize) -> Result<Option<TransitionMatrix>> {
        match self.kind {
            NoiseKind::Symmetric => Ok(Some(symmetric_matrix(k, self.eta)?)),
            NoiseKind::AsymmetricPairs => {
                let pairs = self
                    .pairs
                    .as_ref()
                    .ok_or_else(|| Error::config("asymmetric_pairs noise requires 'pairs'"))?
                    .resolve()?;
                Ok(Some(asymmetric_pairs_matrix(k, &pairs, self.eta)?))
            }
            NoiseKind::AsymmetricCircular => {
                Ok(Some(asymmetric_circular_matrix(k, self.eta)?))
            }
            NoiseKind::InstanceDependent | NoiseKind::External => Ok(None),
        }
    }

    /// Corrupt the dataset's labels in place according to this spec.
    /// Returns the per-instance flip rates for instance-dependent noise.
    pub fn apply(&self, data: &mut NoisyDataset, rng: &mut Rng) -> Result<Option<Vec64>> {
        let clean = data
            .clean_labels
            .clone()
            .ok_or_else(|| Error::config("noise injection requires clean labels"))?;
        match self.kind {
            NoiseKind::Symmetric | NoiseKind::AsymmetricPairs | NoiseKind::AsymmetricCircular => {
                if self.eta == 0.0 {
                    data.noisy_labels = clean;
                    return Ok(None);
                }
                let t = self.transition_matrix(data.k)?.unwrap();
                data.noisy_labels = inject(&clean, &t, rng);
                Ok(None)
            }
            NoiseKind::InstanceDependent => {
                let (noisy, rates) =
                    inject_instance_dependent(&data.features, &clean, data.k, self.eta, rng)?;
                data.noisy_labels = noisy;
                Ok(Some(rates))
            }
            NoiseKind::External => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("external noise requires 'path'"))?;
                let labels = load_external_noisy(path, data.k)?;
                if labels.len() != data.n() {
                    return Err(Error::dimension(format!(
                        "external labels have {} entries, dataset has {}",
                        labels.len(),
                        data.n()
                    )));
                }
                data.noisy_labels = labels;
                Ok(None)
            }
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// MLP shape: hidden widths plus activation. Input and output widths
/// come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

impl ModelConfig {
    pub fn widths(&self, d: usize, k: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(d);
        w.extend_from_slice(&self.hidden);
        w.push(k);
        w
    }

    pub fn build(&self, d: usize, k: usize, rng: &mut Rng) -> Result<MlpModel> {
        MlpModel::init(&self.widths(d, k), self.activation, rng)
    }
}

fn default_params() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn default_clip() -> ClipConfig {
    ClipConfig::identity()
}

/// Loss selection: base-loss name, hyperparameter overrides, clip
/// transform, and norm-regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub base: String,
    #[serde(default = "default_params")]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_clip")]
    pub clip: ClipConfig,
    #[serde(default)]
    pub norm_reg_lambda: f64,
}

impl LossConfig {
    pub fn plain(base: &str) -> Self {
        LossConfig {
            base: base.to_string(),
            params: BTreeMap::new(),
            clip: ClipConfig::identity(),
            norm_reg_lambda: 0.0,
        }
    }

    pub fn with_clip(mut self, clip: ClipConfig) -> Self {
        self.clip = clip;
        self
    }

    fn take(params: &mut BTreeMap<String, f64>, key: &str) -> Option<f64> {
        params.remove(key)
    }

    /// Build the concrete loss. Unknown base names and unused parameter
    /// keys are config errors.
    pub fn build(&self) -> Result<LossSpec> {
        let mut params = self.params.clone();
        let base = match self.base.as_str() {
            "ce" => BaseLoss::Ce,
            "focal" => BaseLoss::Focal {
                gamma: Self::take(&mut params, "gamma").unwrap_or(0.5),
            },
            "mae" => BaseLoss::Mae,
            "gce" => BaseLoss::Gce {
                q: Self::take(&mut params, "q").unwrap_or(0.7),
            },
            "sce" => BaseLoss::Sce {
                alpha: Self::take(&mut params, "alpha").unwrap_or(0.5),
                beta: Self::take(&mut params, "beta").unwrap_or(1.0),
                a_clamp: Self::take(&mut params, "a_clamp").unwrap_or(-4.0),
            },
            "phuber_ce" => BaseLoss::PHuberCe {
                tau_h: Self::take(&mut params, "tau_h").unwrap_or(10.0),
            },
            "taylor_ce" => BaseLoss::TaylorCe {
                order: Self::take(&mut params, "t").unwrap_or(2.0) as usize,
            },
            "nce" => BaseLoss::Nce,
            "ael" => BaseLoss::Ael {
                a: Self::take(&mut params, "a").unwrap_or(2.5),
            },
            "aul" => BaseLoss::Aul {
                a: Self::take(&mut params, "a").unwrap_or(5.5),
                q: Self::take(&mut params, "q").unwrap_or(3.0),
            },
            "agce" => BaseLoss::Agce {
                a: Self::take(&mut params, "a").unwrap_or(1.8),
                q: Self::take(&mut params, "q").unwrap_or(3.0),
            },
            "nce+mae" => BaseLoss::Combo {
                alpha: Self::take(&mut params, "alpha").unwrap_or(50.0),
                beta: Self::take(&mut params, "beta").unwrap_or(1.0),
                active: Box::new(BaseLoss::Nce),
                passive: Box::new(BaseLoss::Mae),
            },
            "nce+agce" => BaseLoss::Combo {
                alpha: Self::take(&mut params, "alpha").unwrap_or(50.0),
                beta: Self::take(&mut params, "beta").unwrap_or(0.1),
                active: Box::new(BaseLoss::Nce),
                passive: Box::new(BaseLoss::Agce {
                    a: Self::take(&mut params, "a").unwrap_or(1.8),
                    q: Self::take(&mut params, "q").unwrap_or(3.0),
                }),
            },
            other => {
                return Err(Error::config(format!(
                    "unknown base loss '{other}' (known: ce, focal, mae, gce, sce, phuber_ce, \
                     taylor_ce, nce, ael, aul, agce, nce+mae, nce+agce)"
                )))
            }
        };
        if let Some(key) = params.keys().next() {
            return Err(Error::config(format!(
                "unused loss parameter '{key}' for base '{}'",
                self.base
            )));
        }
        let spec = LossSpec {
            base,
            clip: self.clip,
            norm_reg_lambda: self.norm_reg_lambda,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A single training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

fn default_val_fraction() -> f64 {
    0.1
}

/// A loss-comparison experiment: each listed loss runs with and without
/// logit clipping across all seeds; the clipped arm tunes τ by sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub losses: Vec<LossConfig>,
    pub seeds: Vec<u64>,
    /// 1/τ grid for the sweep; defaults to {0.1, 0.5, …, 5.0}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}
