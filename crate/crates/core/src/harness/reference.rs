//! Published mean CRR values for the standard configurations, carried in
//! reports for side-by-side comparison.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentId, ModelKind};
use crate::baselines::FeatureKind;
use crate::data_io::{AffectiveState, StateSelection};
use crate::mesh::ElectrodeSetName;
use crate::signal::BandSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedCrr {
    pub mean: f64,
    pub se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footnote: Option<String>,
}

fn crr(mean: f64, se: f64) -> Option<PublishedCrr> {
    Some(PublishedCrr {
        mean,
        se: Some(se),
        footnote: None,
    })
}

const DEFAULT_CONV: [usize; 3] = [128, 64, 32];
const DEFAULT_UNITS: [usize; 2] = [32, 16];

/// Published value for `cfg`, when one exists.
pub fn published_crr(cfg: &ExperimentConfig) -> Option<PublishedCrr> {
    let m = &cfg.model;
    let default_net = m.conv_filters == DEFAULT_CONV && m.recurrent_units == DEFAULT_UNITS;
    let neural_col = |gru: Option<PublishedCrr>, lstm: Option<PublishedCrr>| match m.kind {
        ModelKind::Gru if default_net => gru,
        ModelKind::Lstm if default_net => lstm,
        _ => None,
    };
    let svm_psd = m.kind == ModelKind::Svm && m.features == FeatureKind::Psd;
    match cfg.experiment {
        ExperimentId::I => {
            let (gru, lstm, svm) = match cfg.state {
                StateSelection::State(AffectiveState::LL) => (crr(99.90, 0.10), crr(99.79, 0.14), crr(33.02, 1.58)),
                StateSelection::State(AffectiveState::LH) => (crr(99.71, 0.19), crr(100.0, 0.0), crr(36.38, 1.71)),
                StateSelection::State(AffectiveState::HL) => (crr(99.86, 0.14), crr(99.86, 0.14), crr(36.25, 2.45)),
                StateSelection::State(AffectiveState::HH) => (crr(99.87, 0.12), crr(99.74, 0.26), crr(33.59, 1.65)),
                StateSelection::All => (crr(100.0, 0.0), crr(99.79, 0.14), crr(33.02, 1.58)),
            };
            if svm_psd {
                return svm;
            }
            if cfg.state == StateSelection::All && m.kind == ModelKind::Mahalanobis {
                return match m.features {
                    FeatureKind::Psd => crr(47.09, 2.34),
                    FeatureKind::Coh => crr(47.81, 3.29),
                };
            }
            neural_col(gru, lstm)
        }
        ExperimentId::II => {
            let (gru, lstm, svm) = match cfg.band {
                BandSpec::Theta => (crr(99.69, 0.22), crr(99.69, 0.22), crr(98.54, 0.35)),
                BandSpec::Alpha => (crr(99.58, 0.23), crr(99.69, 0.22), crr(98.75, 0.34)),
                BandSpec::Beta => (crr(99.90, 0.10), crr(99.86, 0.16), crr(87.50, 0.64)),
                BandSpec::Gamma => (crr(100.0, 0.0), crr(99.74, 0.14), crr(33.54, 1.57)),
                BandSpec::All => (crr(100.0, 0.0), crr(99.79, 0.14), crr(33.02, 1.58)),
            };
            if svm_psd {
                svm
            } else {
                neural_col(gru, lstm)
            }
        }
        ExperimentId::III if cfg.electrodes == ElectrodeSetName::F => {
            let gru = Some(PublishedCrr {
                mean: 99.10,
                se: Some(0.34),
                footnote: Some(
                    "the comparison table gives 99.10 +/- 0.34; the running text states 99.17 +/- 0.34. \
                     The table value is used."
                        .into(),
                ),
            });
            neural_col(gru, crr(98.23, 0.52))
        }
        ExperimentId::IV => {
            let (gru, lstm) = match (m.conv_filters.as_slice(), m.recurrent_units.as_slice()) {
                ([128], [32, 16]) => (crr(100.0, 0.0), crr(99.69, 0.16)),
                ([128, 64], [32, 16]) => (crr(99.90, 0.10), crr(99.69, 0.16)),
                ([128, 64, 32], [32, 16]) => (crr(99.90, 0.10), crr(99.90, 0.10)),
                ([128, 64, 32], [16, 8]) => (crr(97.29, 0.75), crr(89.58, 1.81)),
                ([128, 64, 32], [64, 32]) => (crr(99.90, 0.10), crr(99.79, 0.25)),
                _ => (None, None),
            };
            match m.kind {
                ModelKind::Gru => gru,
                ModelKind::Lstm => lstm,
                _ => None,
            }
        }
        _ => None,
    }
}
