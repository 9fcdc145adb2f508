//! Recording containers, the binary export format, synthetic data and the
//! affective-state trial selection that feeds every experiment.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: f64 = 128.0;
pub const N_CHANNELS: usize = 32;
pub const DEAP_TRIALS: usize = 40;
/// 63 s at 128 Hz: a 3 s pre-trial baseline followed by the 60 s stimulus.
pub const TRIAL_SAMPLES: usize = 8064;
pub const PRETRIAL_SAMPLES: usize = 384;
pub const SUBSAMPLE_LEN: usize = 1280;
pub const SUBSAMPLES_PER_TRIAL: usize = 6;
pub const RATING_THRESHOLD: f64 = 5.0;

pub const EXPORT_MAGIC: &[u8; 16] = b"NEUROBIT-EEG\0\0\0\0";
pub const EXPORT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// DEAP channel storage order.
pub const DEAP_CHANNELS: [&str; N_CHANNELS] = [
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1",
    "Oz", "Pz", "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2",
    "P4", "P8", "PO4", "O2",
];

/// Labels accepted as ten-twenty electrode names.
pub const TEN_TWENTY_VOCABULARY: [&str; 44] = [
    "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2",
    "F4", "F6", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8", "CP5", "CP1",
    "CPz", "CP2", "CP6", "P7", "P3", "Pz", "P4", "P8", "PO3", "POz", "PO4", "O1", "Oz", "O2",
    "FCz", "Iz",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AffectiveState {
    LL,
    LH,
    HL,
    HH,
}

impl AffectiveState {
    pub const ALL: [AffectiveState; 4] = [
        AffectiveState::LL,
        AffectiveState::LH,
        AffectiveState::HL,
        AffectiveState::HH,
    ];

    pub fn is_high_valence(self) -> bool {
        matches!(self, AffectiveState::HL | AffectiveState::HH)
    }

    pub fn is_high_arousal(self) -> bool {
        matches!(self, AffectiveState::LH | AffectiveState::HH)
    }
}

impl fmt::Display for AffectiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AffectiveState::LL => "LL",
            AffectiveState::LH => "LH",
            AffectiveState::HL => "HL",
            AffectiveState::HH => "HH",
        };
        f.write_str(s)
    }
}

/// Which trials an experiment draws from: one affective state, or the pooled set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StateSelection {
    State(AffectiveState),
    All,
}

impl fmt::Display for StateSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSelection::State(s) => s.fmt(f),
            StateSelection::All => f.write_str("ALL"),
        }
    }
}

impl FromStr for StateSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "LL" => StateSelection::State(AffectiveState::LL),
            "LH" => StateSelection::State(AffectiveState::LH),
            "HL" => StateSelection::State(AffectiveState::HL),
            "HH" => StateSelection::State(AffectiveState::HH),
            "ALL" => StateSelection::All,
            other => return Err(Error::Argument(format!("unknown affective state `{other}`"))),
        })
    }
}

impl TryFrom<String> for StateSelection {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StateSelection> for String {
    fn from(s: StateSelection) -> String {
        s.to_string()
    }
}

/// Thresholds a (valence, arousal) pair at 5: strictly below is low, otherwise high.
pub fn label_affective_state(valence: f64, arousal: f64) -> Result<AffectiveState> {
    for (name, v) in [("valence", valence), ("arousal", arousal)] {
        if !(1.0..=9.0).contains(&v) {
            return Err(Error::Argument(format!("{name} {v} outside [1, 9]")));
        }
    }
    let hv = valence >= RATING_THRESHOLD;
    let ha = arousal >= RATING_THRESHOLD;
    Ok(match (hv, ha) {
        (false, false) => AffectiveState::LL,
        (false, true) => AffectiveState::LH,
        (true, false) => AffectiveState::HL,
        (true, true) => AffectiveState::HH,
    })
}

/// One subject's full session: `n_trials` x 32 channels x 8064 samples plus ratings.
///
/// Samples are kept in single precision, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub subject_id: u32,
    n_trials: usize,
    trials: Vec<f32>,
    ratings: Vec<[f64; 2]>,
}

impl RawRecording {
    pub fn new(subject_id: u32, trials: Vec<f32>, ratings: Vec<[f64; 2]>) -> Result<Self> {
        if subject_id < 1 {
            return Err(Error::Argument("subject_id must be >= 1".into()));
        }
        let n_trials = ratings.len();
        if n_trials == 0 {
            return Err(Error::Argument("recording has no trials".into()));
        }
        let expected = n_trials * N_CHANNELS * TRIAL_SAMPLES;
        if trials.len() != expected {
            return Err(Error::Shape(format!(
                "{} samples for {n_trials} trials x {N_CHANNELS} x {TRIAL_SAMPLES}",
                trials.len()
            )));
        }
        for (t, r) in ratings.iter().enumerate() {
            for (k, &v) in r.iter().enumerate() {
                if !(1.0..=9.0).contains(&v) {
                    return Err(Error::Argument(format!(
                        "rating [{t}][{k}] = {v} outside [1, 9]"
                    )));
                }
            }
        }
        Ok(RawRecording {
            subject_id,
            n_trials,
            trials,
            ratings,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_trials, N_CHANNELS, TRIAL_SAMPLES]
    }

    pub fn ratings(&self) -> &[[f64; 2]] {
        &self.ratings
    }

    pub fn samples(&self) -> &[f32] {
        &self.trials
    }

    /// Samples of one channel of one trial, including the pre-trial baseline.
    pub fn channel(&self, trial: usize, channel: usize) -> &[f32] {
        let start = (trial * N_CHANNELS + channel) * TRIAL_SAMPLES;
        &self.trials[start..start + TRIAL_SAMPLES]
    }

    /// The 60 s stimulus portion of a channel, with the 3 s baseline dropped.
    pub fn stimulus(&self, trial: usize, channel: usize) -> &[f32] {
        &self.channel(trial, channel)[PRETRIAL_SAMPLES..]
    }

    pub fn state(&self, trial: usize) -> AffectiveState {
        let [v, a] = self.ratings[trial];
        // ratings were validated on construction
        label_affective_state(v, a).expect("validated rating")
    }

    pub fn trials_in_state(&self, state: AffectiveState) -> Vec<usize> {
        (0..self.n_trials).filter(|&t| self.state(t) == state).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DeapExport,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub subject_id: u32,
    pub file: String,
}

/// Sidecar JSON describing an export directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub provenance: Provenance,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub subjects: Vec<ManifestSubject>,
}

impl DatasetManifest {
    pub fn new(provenance: Provenance, subject_ids: &[u32]) -> Self {
        DatasetManifest {
            format_version: EXPORT_VERSION,
            provenance,
            sample_rate: SAMPLE_RATE,
            channel_names: DEAP_CHANNELS.iter().map(|s| s.to_string()).collect(),
            subjects: subject_ids
                .iter()
                .map(|&id| ManifestSubject {
                    subject_id: id,
                    file: format!("s{id:02}.bin"),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != EXPORT_VERSION {
            return Err(Error::load(
                "manifest.format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::load(
                "manifest.sample_rate",
                format!("expected {SAMPLE_RATE} Hz, got {}", self.sample_rate),
            ));
        }
        if self.channel_names.len() != N_CHANNELS {
            return Err(Error::load(
                "manifest.channel_names",
                format!(
                    "shape mismatch: {} names, expected {N_CHANNELS}",
                    self.channel_names.len()
                ),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.channel_names {
            if !TEN_TWENTY_VOCABULARY.contains(&name.as_str()) {
                return Err(Error::load(
                    "manifest.channel_names",
                    format!("`{name}` is not a ten-twenty label"),
                ));
            }
            if !seen.insert(name) {
                return Err(Error::load(
                    "manifest.channel_names",
                    format!("duplicate channel `{name}`"),
                ));
            }
        }
        if self.subjects.is_empty() || self.subjects.len() > 32 {
            return Err(Error::load(
                "manifest.subjects",
                format!("expected 1..=32 subjects, got {}", self.subjects.len()),
            ));
        }
        Ok(())
    }
}

/// Encodes one recording in the little-endian export layout.
pub fn encode_recording(rec: &RawRecording) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + rec.trials.len() * 4 + rec.n_trials * 8);
    out.extend_from_slice(EXPORT_MAGIC);
    for v in [
        EXPORT_VERSION,
        rec.n_trials as u32,
        N_CHANNELS as u32,
        TRIAL_SAMPLES as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &s in &rec.trials {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for r in &rec.ratings {
        for &v in r {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses one subject file. `n_channels` is the manifest's channel count.
pub fn decode_recording(subject_id: u32, bytes: &[u8], n_channels: usize) -> Result<RawRecording> {
    if bytes.len() < 32 {
        return Err(Error::load("header", format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..16] != EXPORT_MAGIC {
        return Err(Error::load("magic", "not a NEUROBIT-EEG export"));
    }
    let version = read_u32(bytes, 16);
    if version != EXPORT_VERSION {
        return Err(Error::load("version", format!("unsupported version {version}")));
    }
    let n_trials = read_u32(bytes, 20) as usize;
    let n_chan = read_u32(bytes, 24) as usize;
    let n_samples = read_u32(bytes, 28) as usize;
    if n_trials == 0 || n_trials > DEAP_TRIALS {
        return Err(Error::load(
            "n_trials",
            format!("shape mismatch: header claims {n_trials} trials, expected 1..={DEAP_TRIALS}"),
        ));
    }
    if n_chan != N_CHANNELS || n_chan != n_channels {
        return Err(Error::load(
            "n_channels",
            format!("shape mismatch: header claims {n_chan} channels, expected {N_CHANNELS}"),
        ));
    }
    if n_samples != TRIAL_SAMPLES {
        return Err(Error::load(
            "n_samples",
            format!("shape mismatch: header claims {n_samples} samples, expected {TRIAL_SAMPLES}"),
        ));
    }
    let n_values = n_trials * n_chan * n_samples;
    let expected = 32 + 4 * (n_values + 2 * n_trials);
    if bytes.len() != expected {
        return Err(Error::load(
            "payload",
            format!("file has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let payload = &bytes[32..32 + 4 * n_values];
    let trials: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(i) = trials.iter().position(|v| !v.is_finite()) {
        return Err(Error::load("samples", format!("non-finite value at flat index {i}")));
    }
    let mut ratings = Vec::with_capacity(n_trials);
    let rating_bytes = &bytes[32 + 4 * n_values..];
    for t in 0..n_trials {
        let mut r = [0.0; 2];
        for (k, slot) in r.iter_mut().enumerate() {
            let at = 8 * t + 4 * k;
            let v = f32::from_le_bytes(rating_bytes[at..at + 4].try_into().expect("4 bytes")) as f64;
            if !(1.0..=9.0).contains(&v) {
                return Err(Error::load(
                    format!("ratings[{t}][{k}]"),
                    format!("{v} outside [1, 9]"),
                ));
            }
            *slot = v;
        }
        ratings.push(r);
    }
    RawRecording::new(subject_id, trials, ratings)
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::load("manifest", e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads every subject listed in an export's manifest. `path` may be the
/// export directory or the manifest file itself.
pub fn load_deap_export(path: &Path) -> Result<(DatasetManifest, Vec<RawRecording>)> {
    let manifest = read_manifest(path)?;
    let root = manifest_path(path)
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut recordings = Vec::with_capacity(manifest.subjects.len());
    for subject in &manifest.subjects {
        let file = root.join(&subject.file);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        recordings.push(decode_recording(
            subject.subject_id,
            &bytes,
            manifest.channel_names.len(),
        )?);
    }
    Ok((manifest, recordings))
}

/// Writes recordings plus a manifest into `dir` (created if missing).
pub fn write_export(
    dir: &Path,
    provenance: Provenance,
    recordings: &[RawRecording],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids: Vec<u32> = recordings.iter().map(|r| r.subject_id).collect();
    let manifest = DatasetManifest::new(provenance, &ids);
    for (rec, entry) in recordings.iter().zip(&manifest.subjects) {
        let file = dir.join(&entry.file);
        fs::write(&file, encode_recording(rec)).map_err(|e| Error::io(&file, e))?;
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Signature components per synthetic subject.
const SYNTH_COMPONENTS: usize = 3;
const SYNTH_AMPLITUDE_UV: f64 = 10.0;
const SYNTH_AR_COEFF: f64 = 0.8;
const SYNTH_NOISE_UV: f64 = 6.0;

/// Builds a desk-scale stand-in for the affective dataset.
///
/// Each subject carries a private set of sinusoids (4-40 Hz, distinct across
/// subjects) mixed into every channel with a subject-specific spatial
/// pattern, on top of AR(1) background noise and a shared 10 Hz rhythm whose
/// strength depends on arousal. Trials vary in phase and amplitude. Every
/// subject gets exactly `n_trials_per_state` trials in each affective state.
pub fn generate_synthetic_dataset(
    n_subjects: usize,
    n_trials_per_state: usize,
    seed: u64,
) -> Result<Vec<RawRecording>> {
    if n_subjects < 2 {
        return Err(Error::Argument(format!("need at least 2 subjects, got {n_subjects}")));
    }
    if n_trials_per_state == 0 || 4 * n_trials_per_state > DEAP_TRIALS {
        return Err(Error::Argument(format!(
            "n_trials_per_state must be in 1..={}, got {n_trials_per_state}",
            DEAP_TRIALS / 4
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_trials = 4 * n_trials_per_state;
    let dt = 1.0 / SAMPLE_RATE;
    let noise = Normal::new(0.0, SYNTH_NOISE_UV * (1.0 - SYNTH_AR_COEFF * SYNTH_AR_COEFF).sqrt())
        .expect("valid normal");

    // 0.25 Hz grid over [4.5, 39.5]; drawn without replacement until exhausted
    let grid: Vec<f64> = (0..=140).map(|i| 4.5 + 0.25 * i as f64).collect();
    let mut pool: Vec<f64> = Vec::new();

    let mut recordings = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let mut freqs = Vec::with_capacity(SYNTH_COMPONENTS);
        while freqs.len() < SYNTH_COMPONENTS {
            if pool.is_empty() {
                pool = grid.clone();
                pool.shuffle(&mut rng);
            }
            let f = pool.pop().expect("non-empty pool");
            if !freqs.contains(&f) {
                freqs.push(f);
            }
        }
        let spatial: Vec<[f64; SYNTH_COMPONENTS]> = (0..N_CHANNELS)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.4..1.6)))
            .collect();

        let mut states: Vec<AffectiveState> = (0..n_trials).map(|i| AffectiveState::ALL[i % 4]).collect();
        states.shuffle(&mut rng);

        let mut trials = vec![0f32; n_trials * N_CHANNELS * TRIAL_SAMPLES];
        let mut ratings = Vec::with_capacity(n_trials);
        let mut sources = vec![[0.0f64; SYNTH_COMPONENTS]; TRIAL_SAMPLES];
        let mut alpha = vec![0.0f64; TRIAL_SAMPLES];
        for (t, &state) in states.iter().enumerate() {
            let mut rate = |high: bool| {
                if high {
                    rng.gen_range(5.0..=9.0)
                } else {
                    rng.gen_range(1.0..=4.9)
                }
            };
            let valence = rate(state.is_high_valence());
            let arousal = rate(state.is_high_arousal());
            ratings.push([valence, arousal]);

            let comps: Vec<(f64, f64, f64)> = freqs
                .iter()
                .map(|&f| {
                    let jitter: f64 = rng.gen_range(-0.1..0.1);
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let gain: f64 = rng.gen_range(0.8..1.2);
                    (f + jitter, phase, gain)
                })
                .collect();
            for (n, src) in sources.iter_mut().enumerate() {
                let time = n as f64 * dt;
                for (k, &(f, ph, g)) in comps.iter().enumerate() {
                    src[k] = g * SYNTH_AMPLITUDE_UV * (std::f64::consts::TAU * f * time + ph).sin();
                }
            }
            let alpha_gain = if state.is_high_arousal() { 0.3 } else { 0.6 } * SYNTH_AMPLITUDE_UV;
            let alpha_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for (n, a) in alpha.iter_mut().enumerate() {
                *a = alpha_gain * (std::f64::consts::TAU * 10.0 * n as f64 * dt + alpha_phase).sin();
            }

            for (c, weights) in spatial.iter().enumerate() {
                let base = (t * N_CHANNELS + c) * TRIAL_SAMPLES;
                let mut ar = 0.0;
                for n in 0..TRIAL_SAMPLES {
                    ar = SYNTH_AR_COEFF * ar + noise.sample(&mut rng);
                    let mut v = ar + alpha[n];
                    for k in 0..SYNTH_COMPONENTS {
                        v += weights[k] * sources[n][k];
                    }
                    trials[base + n] = v as f32;
                }
            }
        }
        recordings.push(RawRecording::new(s as u32 + 1, trials, ratings)?);
    }
    Ok(recordings)
}

/// A 10 s, 1280-sample multichannel slice of one selected trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub subject_id: u32,
    pub trial_id: usize,
    pub subsample_index: usize,
    pub state: AffectiveState,
    /// `[channels, 1280]`.
    pub data: Tensor,
}

impl Subsample {
    pub fn n_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.data.outer(c)
    }
}

fn subject_rng(seed: u64, subject_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject_id as u64);
    rng
}

/// Trials of `rec` chosen for an experiment, or `None` when the subject has
/// fewer than `trials_per_state` qualifying trials.
pub fn select_trials(
    rec: &RawRecording,
    selection: StateSelection,
    trials_per_state: usize,
    seed: u64,
) -> Option<Vec<usize>> {
    let qualifying: Vec<usize> = match selection {
        StateSelection::State(s) => rec.trials_in_state(s),
        StateSelection::All => (0..rec.n_trials()).collect(),
    };
    if qualifying.len() < trials_per_state {
        return None;
    }
    let mut rng = subject_rng(seed, rec.subject_id);
    let mut chosen: Vec<usize> = qualifying
        .choose_multiple(&mut rng, trials_per_state)
        .copied()
        .collect();
    chosen.sort_unstable();
    Some(chosen)
}

/// Cuts the stimulus portion of a trial into six disjoint 10 s subsamples.
pub fn cut_subsamples(rec: &RawRecording, trial: usize) -> Vec<Subsample> {
    let state = rec.state(trial);
    (0..SUBSAMPLES_PER_TRIAL)
        .map(|j| {
            let mut data = Vec::with_capacity(N_CHANNELS * SUBSAMPLE_LEN);
            for c in 0..N_CHANNELS {
                let body = rec.stimulus(trial, c);
                data.extend(body[j * SUBSAMPLE_LEN..(j + 1) * SUBSAMPLE_LEN].iter().map(|&v| v as f64));
            }
            Subsample {
                subject_id: rec.subject_id,
                trial_id: trial,
                subsample_index: j,
                state,
                data: Tensor::from_vec(&[N_CHANNELS, SUBSAMPLE_LEN], data).expect("fixed shape"),
            }
        })
        .collect()
}

/// Draws `trials_per_state` trials per retained subject and cuts each into six
/// subsamples. Subjects short of qualifying trials are dropped. With
/// [`StateSelection::All`] the draw is over the subject's pooled trials.
pub fn select_trials_and_subsample(
    recordings: &[RawRecording],
    selection: StateSelection,
    trials_per_state: usize,
    seed: u64,
) -> Result<Vec<Subsample>> {
    if trials_per_state == 0 {
        return Err(Error::Argument("trials_per_state must be >= 1".into()));
    }
    let mut out = Vec::new();
    for rec in recordings {
        if let Some(trials) = select_trials(rec, selection, trials_per_state, seed) {
            for t in trials {
                out.extend(cut_subsamples(rec, t));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no subject has {trials_per_state} trials in state {selection}"
        )));
    }
    Ok(out)
}

/// Number of subjects retained per selection (the per-state participant table).
pub fn participant_counts(
    recordings: &[RawRecording],
    trials_per_state: usize,
) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    let selections = AffectiveState::ALL
        .iter()
        .map(|&s| StateSelection::State(s))
        .chain(std::iter::once(StateSelection::All));
    for sel in selections {
        let n = recordings
            .iter()
            .filter(|r| match sel {
                StateSelection::State(s) => r.trials_in_state(s).len() >= trials_per_state,
                StateSelection::All => r.n_trials() >= trials_per_state,
            })
            .count();
        counts.insert(sel.to_string(), n);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_recording(id: u32, ratings: Vec<[f64; 2]>) -> RawRecording {
        let n = ratings.len();
        let trials = (0..n * N_CHANNELS * TRIAL_SAMPLES).map(|i| (i % 997) as f32).collect();
        RawRecording::new(id, trials, ratings).unwrap()
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(label_affective_state(4.9, 5.0).unwrap(), AffectiveState::LH);
        assert_eq!(label_affective_state(5.0, 5.0).unwrap(), AffectiveState::HH);
        assert_eq!(label_affective_state(1.0, 1.0).unwrap(), AffectiveState::LL);
        assert_eq!(label_affective_state(9.0, 4.99).unwrap(), AffectiveState::HL);
        assert!(label_affective_state(0.5, 5.0).is_err());
        assert!(label_affective_state(5.0, 9.5).is_err());
    }

    #[test]
    fn selection_round_trips_through_strings() {
        for s in ["LL", "LH", "HL", "HH", "ALL"] {
            let sel: StateSelection = s.parse().unwrap();
            assert_eq!(sel.to_string(), s);
        }
        assert!("XX".parse::<StateSelection>().is_err());
    }

    #[test]
    fn recording_rejects_bad_shapes_and_ratings() {
        assert!(RawRecording::new(1, vec![0.0; 10], vec![[5.0, 5.0]]).is_err());
        assert!(RawRecording::new(1, vec![0.0; N_CHANNELS * TRIAL_SAMPLES], vec![[0.0, 5.0]]).is_err());
        assert!(RawRecording::new(0, vec![0.0; N_CHANNELS * TRIAL_SAMPLES], vec![[5.0, 5.0]]).is_err());
    }

    #[test]
    fn subsamples_tile_the_stimulus() {
        let rec = tiny_recording(3, vec![[2.0, 2.0], [7.0, 7.0]]);
        let subs = cut_subsamples(&rec, 1);
        assert_eq!(subs.len(), 6);
        for c in [0, 17, 31] {
            let joined: Vec<f64> = subs.iter().flat_map(|s| s.channel(c).to_vec()).collect();
            let body: Vec<f64> = rec.stimulus(1, c)[..7680].iter().map(|&v| v as f64).collect();
            assert_eq!(joined, body);
        }
        assert!(subs.iter().all(|s| s.state == AffectiveState::HH && s.trial_id == 1));
    }

    #[test]
    fn short_subjects_are_excluded() {
        let a = tiny_recording(1, vec![[2.0, 2.0]; 5]);
        let b = tiny_recording(2, vec![[2.0, 2.0], [2.0, 2.0], [7.0, 7.0], [7.0, 7.0], [7.0, 7.0]]);
        let ll = select_trials_and_subsample(&[a.clone(), b.clone()], StateSelection::State(AffectiveState::LL), 5, 1).unwrap();
        assert_eq!(ll.len(), 30);
        assert!(ll.iter().all(|s| s.subject_id == 1));
        let err = select_trials_and_subsample(&[a.clone(), b.clone()], StateSelection::State(AffectiveState::HL), 5, 1);
        assert!(matches!(err, Err(Error::EmptyDataset(_))));
        let all = select_trials_and_subsample(&[a, b], StateSelection::All, 5, 1).unwrap();
        assert_eq!(all.len(), 60);
    }

    #[test]
    fn encode_decode_preserves_recording() {
        let rec = tiny_recording(4, vec![[1.0, 9.0], [5.5, 3.25]]);
        let bytes = encode_recording(&rec);
        let back = decode_recording(4, &bytes, N_CHANNELS).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn decode_names_the_bad_field() {
        let rec = tiny_recording(4, vec![[1.0, 9.0]]);
        let mut bytes = encode_recording(&rec);
        bytes[24..28].copy_from_slice(&33u32.to_le_bytes());
        match decode_recording(4, &bytes, N_CHANNELS) {
            Err(Error::Load { field, detail }) => {
                assert_eq!(field, "n_channels");
                assert!(detail.contains("shape mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bytes = encode_recording(&rec);
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&9.5f32.to_le_bytes());
        match decode_recording(4, &bytes, N_CHANNELS) {
            Err(Error::Load { field, .. }) => assert_eq!(field, "ratings[0][1]"),
            other => panic!("unexpected {other:?}"),
        }

        let mut bytes = encode_recording(&rec);
        bytes[0] = b'X';
        assert!(matches!(decode_recording(4, &bytes, N_CHANNELS), Err(Error::Load { field, .. }) if field == "magic"));

        let bytes = encode_recording(&rec);
        assert!(matches!(decode_recording(4, &bytes[..bytes.len() - 1], N_CHANNELS), Err(Error::Load { field, .. }) if field == "payload"));
    }

    #[test]
    fn synthetic_rejects_single_subject() {
        assert!(generate_synthetic_dataset(1, 5, 0).is_err());
        assert!(generate_synthetic_dataset(2, 0, 0).is_err());
    }

    #[test]
    fn synthetic_states_are_balanced() {
        let recs = generate_synthetic_dataset(2, 2, 9).unwrap();
        for r in &recs {
            assert_eq!(r.n_trials(), 8);
            for s in AffectiveState::ALL {
                assert_eq!(r.trials_in_state(s).len(), 2);
            }
        }
        let counts = participant_counts(&recs, 2);
        assert!(counts.values().all(|&n| n == 2));
    }
}
