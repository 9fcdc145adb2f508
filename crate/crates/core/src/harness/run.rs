//! Experiment driver: selection, preprocessing, encoding and 10-fold
//! train/evaluate for one configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, ModelKind};
use super::folds::{compute_crr, make_folds, mean_and_se, Fold, TRIALS_PER_SUBJECT};
use super::reference::{published_crr, PublishedCrr};
use crate::checkpoint::Checkpoint;
use crate::baselines::{extract_features, feature_rows, fit_mahalanobis, fit_svm, FeatureVector};
use crate::data_io::{
    generate_synthetic_dataset, load_deap_export, select_trials_and_subsample, RawRecording, Subsample,
    DEAP_CHANNELS, SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::mesh::{build_standard_layout, electrode_set, encode_subsample};
use crate::neural::{argmax, param_count, predict_set, train, Network, SequenceSet};
use crate::signal::{common_average_reference, design_butterworth_bandpass, filter_signal, FilterCoeffs};
use crate::tensor::Tensor;

/// Recordings plus the channel order they are stored in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub recordings: Vec<RawRecording>,
}

impl Dataset {
    pub fn synthetic(subjects: usize, trials_per_state: usize, seed: u64) -> Result<Self> {
        Ok(Dataset {
            channel_names: DEAP_CHANNELS.iter().map(|s| s.to_string()).collect(),
            recordings: generate_synthetic_dataset(subjects, trials_per_state, seed)?,
        })
    }
}

pub fn load_dataset(source: &DataSource, data_seed: u64) -> Result<Dataset> {
    match source {
        DataSource::Synthetic {
            subjects,
            trials_per_state,
        } => Dataset::synthetic(*subjects, *trials_per_state, data_seed),
        DataSource::Export { path } => {
            let (manifest, recordings) = load_deap_export(path)?;
            Ok(Dataset {
                channel_names: manifest.channel_names,
                recordings,
            })
        }
    }
}

/// Worker count: `NEUROBIT_THREADS` when set to a positive integer, else
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("NEUROBIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// Derives an independent 64-bit seed for `stream` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub design: String,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_trials: usize,
    pub val_trials: usize,
    pub test_trials: usize,
    pub subsamples_per_trial: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub crr: f64,
    pub n_test: usize,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub best_epoch: usize,
    #[serde(default)]
    pub train_loss: Vec<f64>,
    #[serde(default)]
    pub val_loss: Vec<f64>,
    /// Wall-clock seconds of each training epoch.
    #[serde(default)]
    pub epoch_seconds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrrReport {
    pub label: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_hash: Option<String>,
    pub filter: FilterSummary,
    pub subjects: Vec<u32>,
    pub split: SplitSummary,
    pub fold_crr: Vec<f64>,
    pub mean_crr: f64,
    pub standard_error: f64,
    pub folds: Vec<FoldResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<PublishedCrr>,
    pub notes: Vec<String>,
    pub wall_seconds: f64,
}

impl CrrReport {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timings(&self) -> CrrReport {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for f in &mut r.folds {
            f.epoch_seconds.iter_mut().for_each(|s| *s = 0.0);
        }
        r
    }

    /// Recomputes mean and SE from the per-fold values.
    pub fn recomputed_summary(&self) -> (f64, f64) {
        mean_and_se(&self.fold_crr)
    }
}

const SPLIT_NOTE: &str = "Each subject's 5 selected trials are split 3/1/1 into train/validation/test \
     (60/20/20 of its 30 subsamples) so that no trial contributes to more than one set; \
     an 80/10/10 split would have to cut a 6-subsample trial across sets.";

/// CAR followed by the zero-phase band-pass filter, per subsample.
pub fn preprocess(subsamples: &mut [Subsample], coeffs: &FilterCoeffs) -> Result<()> {
    for s in subsamples {
        let car = common_average_reference(&s.data)?;
        s.data = filter_signal(&car, coeffs)?;
    }
    Ok(())
}

/// Subsamples for `cfg` after selection and preprocessing, with class
/// labels (index of the subject among the retained, sorted subject IDs).
pub fn prepare_subsamples(
    cfg: &ExperimentConfig,
    data: &Dataset,
) -> Result<(Vec<Subsample>, Vec<usize>, Vec<u32>, FilterCoeffs)> {
    let mut subs = select_trials_and_subsample(&data.recordings, cfg.state, TRIALS_PER_SUBJECT, cfg.seeds.data)?;
    let coeffs = design_butterworth_bandpass(cfg.filter_order, cfg.band, SAMPLE_RATE)?;
    preprocess(&mut subs, &coeffs)?;
    let mut subjects: Vec<u32> = subs.iter().map(|s| s.subject_id).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "state {} retains {} subject(s); identification needs at least 2",
            cfg.state,
            subjects.len()
        )));
    }
    let index: BTreeMap<u32, usize> = subjects.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let labels = subs.iter().map(|s| index[&s.subject_id]).collect();
    Ok((subs, labels, subjects, coeffs))
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn with_fold<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Fold {
        fold,
        source: Box::new(e),
    })
}

/// Runs the configured model over all ten folds.
/// Optional side outputs of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// When set, each fold's trained model is saved here as
    /// `fold_KK.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<CrrReport> {
    run_experiment_with(cfg, data, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, data: &Dataset, opts: &RunOptions) -> Result<CrrReport> {
    cfg.validate()?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ckpt_dir = opts.checkpoint_dir.as_deref();
    let start = Instant::now();
    let (subs, labels, subjects, coeffs) = prepare_subsamples(cfg, data)?;
    let plan = make_folds(&subs, cfg.seeds.folds)?;
    let n_classes = subjects.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;

    let mut layout_hash = None;
    let mut n_params = None;
    let folds: Vec<FoldResult> = match cfg.model.kind {
        ModelKind::Gru | ModelKind::Lstm => {
            let layout = build_standard_layout(&data.channel_names)?;
            layout_hash = Some(layout.table_hash().to_string());
            let active = electrode_set(cfg.electrodes);
            let meshes = subs
                .iter()
                .map(|s| Ok(encode_subsample(s, &layout, &active)?.tensor))
                .collect::<Result<Vec<Tensor>>>()?;
            let net_cfg = cfg.model.network_config(n_classes).expect("neural model");
            n_params = Some(param_count(&net_cfg));
            let pool_data = Arc::new(meshes);
            pool.install(|| {
                plan.folds
                    .par_iter()
                    .map(|fold| {
                        with_fold(
                            fold.index,
                            run_neural_fold(cfg, fold, &subs, &labels, &pool_data, net_cfg.clone(), ckpt_dir),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
        ModelKind::Svm | ModelKind::Mahalanobis => {
            let features = pool.install(|| {
                subs.par_iter()
                    .map(|s| extract_features(s, cfg.model.features, cfg.band))
                    .collect::<Result<Vec<_>>>()
            })?;
            let rows = (cfg.model.kind == ModelKind::Svm).then(|| feature_rows(&features));
            pool.install(|| {
                plan.folds
                    .par_iter()
                    .map(|fold| {
                        with_fold(
                            fold.index,
                            run_baseline_fold(cfg, fold, &subs, &labels, &features, rows.as_deref(), ckpt_dir),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
    };

    let fold_crr: Vec<f64> = folds.iter().map(|f| f.crr).collect();
    let (mean_crr, standard_error) = mean_and_se(&fold_crr);
    let published = published_crr(cfg);
    let mut notes = vec![SPLIT_NOTE.to_string()];
    if matches!(cfg.model.kind, ModelKind::Svm) {
        notes.push("SVM: linear kernel, one-vs-one, C chosen per fold from {0.01, 0.1, 1, 10, 100} by validation CRR.".into());
    }
    if let Some(f) = published.as_ref().and_then(|p| p.footnote.as_ref()) {
        notes.push(f.clone());
    }
    let (low_hz, high_hz) = cfg.band.edges();
    Ok(CrrReport {
        label: cfg.label(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        layout_hash,
        filter: FilterSummary {
            design: "Butterworth band-pass, second-order sections, forward-backward (zero phase), after CAR".into(),
            order: coeffs.order,
            low_hz,
            high_hz,
        },
        subjects,
        split: SplitSummary {
            train_trials: 3,
            val_trials: 1,
            test_trials: 1,
            subsamples_per_trial: crate::data_io::SUBSAMPLES_PER_TRIAL,
        },
        fold_crr,
        mean_crr,
        standard_error,
        folds,
        param_count: n_params,
        published,
        notes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_neural_fold(
    cfg: &ExperimentConfig,
    fold: &Fold,
    subs: &[Subsample],
    labels: &[usize],
    pool: &Arc<Vec<Tensor>>,
    net_cfg: crate::neural::NetworkConfig,
    ckpt_dir: Option<&Path>,
) -> Result<FoldResult> {
    let (tr, va, te) = fold.partition(subs);
    let set = |idx: &[usize]| SequenceSet::subset(Arc::clone(pool), idx.to_vec(), pick(labels, idx));
    let (train_set, val_set, test_set) = (set(&tr)?, set(&va)?, set(&te)?);
    let k = fold.index as u64;
    let init_seed = derive_seed(cfg.seeds.init, 2 * k);
    let net = Network::new(net_cfg, init_seed)?;
    let tcfg = cfg.train.train_config(derive_seed(cfg.seeds.init, 2 * k + 1));
    let (net, history) = train(net, &train_set, Some(&val_set), &tcfg)?;
    if let Some(dir) = ckpt_dir {
        net.to_checkpoint(init_seed, history.best_epoch)?.save(&fold_checkpoint(dir, fold.index))?;
    }
    let preds: Vec<usize> = predict_set(&net, &test_set)?.iter().map(|p| argmax(p)).collect();
    Ok(FoldResult {
        fold: fold.index,
        crr: compute_crr(&preds, test_set.labels())?,
        n_test: te.len(),
        epochs: history.train_loss.len(),
        best_epoch: history.best_epoch,
        train_loss: history.train_loss,
        val_loss: history.val_loss,
        epoch_seconds: history.epoch_seconds,
        svm_c: None,
    })
}

fn run_baseline_fold(
    cfg: &ExperimentConfig,
    fold: &Fold,
    subs: &[Subsample],
    labels: &[usize],
    features: &[FeatureVector],
    rows: Option<&[Vec<f64>]>,
    ckpt_dir: Option<&Path>,
) -> Result<FoldResult> {
    let save = |ckpt: Checkpoint| -> Result<()> {
        match ckpt_dir {
            Some(dir) => ckpt.save(&fold_checkpoint(dir, fold.index)),
            None => Ok(()),
        }
    };
    let (tr, va, te) = fold.partition(subs);
    let truth = pick(labels, &te);
    let (preds, svm_c) = match cfg.model.kind {
        ModelKind::Svm => {
            let rows = rows.expect("SVM rows prepared");
            let model = fit_svm(&pick(rows, &tr), &pick(labels, &tr), &pick(rows, &va), &pick(labels, &va))?;
            save(model.to_checkpoint()?)?;
            (te.iter().map(|&i| model.predict(&rows[i])).collect::<Vec<_>>(), Some(model.c))
        }
        _ => {
            let model = fit_mahalanobis(&pick(features, &tr), &pick(labels, &tr))?;
            save(model.to_checkpoint()?)?;
            let preds = te
                .iter()
                .map(|&i| Ok(model.classify(&features[i])?.0))
                .collect::<Result<Vec<_>>>()?;
            (preds, None)
        }
    };
    Ok(FoldResult {
        fold: fold.index,
        crr: compute_crr(&preds, &truth)?,
        n_test: te.len(),
        epochs: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        epoch_seconds: Vec::new(),
        svm_c,
    })
}

pub fn fold_checkpoint(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold:02}.ckpt"))
}

/// Runs every configuration of a sweep on the same data, in grid order.
pub fn run_sweep(configs: &[ExperimentConfig], data: &Dataset) -> Result<Vec<CrrReport>> {
    configs.iter().map(|c| run_experiment(c, data)).collect()
}

