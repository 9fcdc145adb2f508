//! JSON experiment and sweep configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::FeatureKind;
use crate::data_io::StateSelection;
use crate::error::{Error, Result};
use crate::mesh::ElectrodeSetName;
use crate::neural::{NetworkConfig, RecurrentKind, TrainConfig};
use crate::signal::BandSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    I,
    II,
    III,
    IV,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gru,
    Lstm,
    Svm,
    Mahalanobis,
}

impl ModelKind {
    pub fn recurrent(self) -> Option<RecurrentKind> {
        match self {
            ModelKind::Gru => Some(RecurrentKind::Gru),
            ModelKind::Lstm => Some(RecurrentKind::Lstm),
            _ => None,
        }
    }
}

fn default_conv() -> Vec<usize> {
    vec![128, 64, 32]
}
fn default_units() -> Vec<usize> {
    vec![32, 16]
}
fn default_td() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_conv")]
    pub conv_filters: Vec<usize>,
    #[serde(default = "default_units")]
    pub recurrent_units: Vec<usize>,
    #[serde(default = "default_td")]
    pub td_dense_units: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Feature family for the baselines.
    #[serde(default = "default_features")]
    pub features: FeatureKind,
}

fn default_features() -> FeatureKind {
    FeatureKind::Psd
}

impl ModelSpec {
    pub fn neural(kind: RecurrentKind, conv_filters: &[usize], recurrent_units: &[usize]) -> Self {
        ModelSpec {
            kind: match kind {
                RecurrentKind::Gru => ModelKind::Gru,
                RecurrentKind::Lstm => ModelKind::Lstm,
            },
            conv_filters: conv_filters.to_vec(),
            recurrent_units: recurrent_units.to_vec(),
            td_dense_units: default_td(),
            dropout: default_dropout(),
            features: default_features(),
        }
    }

    pub fn baseline(kind: ModelKind, features: FeatureKind) -> Self {
        ModelSpec {
            kind,
            conv_filters: default_conv(),
            recurrent_units: default_units(),
            td_dense_units: default_td(),
            dropout: default_dropout(),
            features,
        }
    }

    pub fn network_config(&self, n_classes: usize) -> Option<NetworkConfig> {
        let kind = self.kind.recurrent()?;
        let mut c = NetworkConfig::new(kind, &self.conv_filters, &self.recurrent_units, n_classes);
        c.td_dense_units = self.td_dense_units;
        c.dropout = self.dropout;
        Some(c)
    }

    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Gru | ModelKind::Lstm => format!(
                "cnn-{}[{}]-[{}]",
                if self.kind == ModelKind::Gru { "gru" } else { "lstm" },
                join(&self.conv_filters),
                join(&self.recurrent_units)
            ),
            ModelKind::Svm => format!("svm-{}", self.features),
            ModelKind::Mahalanobis => format!("mahalanobis-{}", self.features),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_lr() -> f64 {
    0.003
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            lr: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
        }
    }
}

impl TrainSpec {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub data: u64,
    #[serde(default)]
    pub folds: u64,
    #[serde(default)]
    pub init: u64,
}

/// Where the recordings come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory from `seeds.data`.
    Synthetic {
        subjects: usize,
        #[serde(default = "default_trials_per_state")]
        trials_per_state: usize,
    },
    /// An export directory (or its manifest), relative paths resolved
    /// against the config file's directory.
    Export { path: PathBuf },
}

fn default_trials_per_state() -> usize {
    5
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            subjects: 8,
            trials_per_state: 5,
        }
    }
}

fn default_filter_order() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub state: StateSelection,
    pub band: BandSpec,
    pub electrodes: ElectrodeSetName,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_filter_order")]
    pub filter_order: usize,
}

impl ExperimentConfig {
    /// Experiment I defaults: pooled states, 4-40 Hz, all electrodes, CNN-GRU.
    pub fn experiment_i(model: ModelSpec) -> Self {
        ExperimentConfig {
            experiment: ExperimentId::I,
            name: None,
            state: StateSelection::All,
            band: BandSpec::All,
            electrodes: ElectrodeSetName::All,
            model,
            train: TrainSpec::default(),
            seeds: Seeds::default(),
            data: DataSource::default(),
            filter_order: default_filter_order(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative export path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Export { path } = &mut self.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "exp{}-{}-{}-{}-{}",
                self.experiment,
                self.state,
                self.band,
                self.electrodes,
                self.model.label()
            )
        })
    }

    /// Checks the per-experiment constraints on state, band and electrodes.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("experiment {}: {m}", self.experiment)));
        let all_el = self.electrodes == ElectrodeSetName::All;
        let all_band = self.band == BandSpec::All;
        let all_state = self.state == StateSelection::All;
        match self.experiment {
            ExperimentId::I if !(all_band && all_el) => {
                return bad("varies the affective state only; band and electrodes must be `all`".into())
            }
            ExperimentId::II if !(all_state && all_el) => {
                return bad("varies the band only; state and electrodes must be `ALL`/`all`".into())
            }
            ExperimentId::III if !(all_state && all_band) => {
                return bad("varies the electrode set only; state and band must be `ALL`/`all`".into())
            }
            ExperimentId::IV if !(all_state && all_band && all_el) => {
                return bad("varies the network only; state, band and electrodes must be `ALL`/`all`".into())
            }
            _ => {}
        }
        if self.experiment == ExperimentId::IV && self.model.kind.recurrent().is_none() {
            return bad("sweeps CNN-GRU/LSTM models only".into());
        }
        if self.model.kind.recurrent().is_some() {
            self.model
                .network_config(2)
                .expect("neural model")
                .validate()?;
            self.train.train_config(0).validate()?;
        }
        if !(2..=8).contains(&self.filter_order) {
            return bad(format!("filter order {} outside [2, 8]", self.filter_order));
        }
        if let DataSource::Synthetic { subjects, trials_per_state } = self.data {
            if subjects < 2 || trials_per_state < 5 {
                return bad("synthetic data needs >= 2 subjects and >= 5 trials per state".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A grid of neural variants over one base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<RecurrentKind>,
    pub conv_filters: Vec<Vec<usize>>,
    pub recurrent_units: Vec<Vec<usize>>,
}

fn default_kinds() -> Vec<RecurrentKind> {
    vec![RecurrentKind::Gru, RecurrentKind::Lstm]
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s: SweepConfig = serde_json::from_str(&text)?;
        s.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        s.expand()?;
        Ok(s)
    }

    /// One experiment config per (kind, conv filters, recurrent units).
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.kinds.is_empty() || self.conv_filters.is_empty() || self.recurrent_units.is_empty() {
            return Err(Error::Argument("sweep grid has an empty axis".into()));
        }
        let mut out = Vec::new();
        for conv in &self.conv_filters {
            for units in &self.recurrent_units {
                for &kind in &self.kinds {
                    let mut cfg = self.base.clone();
                    let mut model = ModelSpec::neural(kind, conv, units);
                    model.td_dense_units = self.base.model.td_dense_units;
                    model.dropout = self.base.model.dropout;
                    cfg.model = model;
                    cfg.name = None;
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}
