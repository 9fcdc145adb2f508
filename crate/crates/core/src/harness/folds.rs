//! Trial-disjoint, subject-stratified 10-fold plans.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Subsample;
use crate::error::{Error, Result};

pub const N_FOLDS: usize = 10;
pub const TRIALS_PER_SUBJECT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectAssignment {
    pub subject_id: u32,
    pub train_trials: Vec<usize>,
    pub val_trial: usize,
    pub test_trial: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub subjects: Vec<SubjectAssignment>,
}

impl Fold {
    pub fn split_of(&self, subject_id: u32, trial: usize) -> Option<Split> {
        let a = self.subjects.iter().find(|a| a.subject_id == subject_id)?;
        if a.test_trial == trial {
            Some(Split::Test)
        } else if a.val_trial == trial {
            Some(Split::Val)
        } else if a.train_trials.contains(&trial) {
            Some(Split::Train)
        } else {
            None
        }
    }

    /// Indices of `subsamples` falling in train, validation and test.
    pub fn partition(&self, subsamples: &[Subsample]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for (i, s) in subsamples.iter().enumerate() {
            match self.split_of(s.subject_id, s.trial_id) {
                Some(Split::Train) => tr.push(i),
                Some(Split::Val) => va.push(i),
                Some(Split::Test) => te.push(i),
                None => {}
            }
        }
        (tr, va, te)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Each subject's five trials are put in a seed-dependent order `o`; fold
/// `k` tests on `o[k / 2]`, validates on `o[(k / 2 + 1 + k % 2) % 5]` and
/// trains on the other three.
pub fn make_folds(subsamples: &[Subsample], seed: u64) -> Result<FoldPlan> {
    let mut trials: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for s in subsamples {
        let t = trials.entry(s.subject_id).or_default();
        if !t.contains(&s.trial_id) {
            t.push(s.trial_id);
        }
    }
    if trials.is_empty() {
        return Err(Error::EmptyDataset("no subsamples to fold".into()));
    }
    let mut orders = Vec::with_capacity(trials.len());
    for (&subject, t) in &mut trials {
        if t.len() != TRIALS_PER_SUBJECT {
            return Err(Error::Argument(format!(
                "subject {subject} has {} trials, folds need exactly {TRIALS_PER_SUBJECT}",
                t.len()
            )));
        }
        t.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(subject));
        let mut order = t.clone();
        order.shuffle(&mut rng);
        orders.push((subject, order));
    }
    let folds = (0..N_FOLDS)
        .map(|k| {
            let (t, delta) = (k / 2, 1 + k % 2);
            let subjects = orders
                .iter()
                .map(|(subject, o)| {
                    let v = (t + delta) % TRIALS_PER_SUBJECT;
                    SubjectAssignment {
                        subject_id: *subject,
                        train_trials: (0..TRIALS_PER_SUBJECT)
                            .filter(|&i| i != t && i != v)
                            .map(|i| o[i])
                            .collect(),
                        val_trial: o[v],
                        test_trial: o[t],
                    }
                })
                .collect();
            Fold { index: k, subjects }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Percentage of predictions equal to the truth.
pub fn compute_crr(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Argument("CRR of an empty prediction list".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let hits = predictions.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Mean and standard error (sample SD / sqrt(n)).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crr_examples() {
        assert_eq!(compute_crr(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(compute_crr(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(compute_crr(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 75.0);
        assert!(compute_crr(&[], &[]).is_err());
        assert!(compute_crr(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn mean_se_hand_values() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
