//! Minibatch training with RMSprop and early stopping on validation loss.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::softmax_cross_entropy;
use super::network::Network;
use super::optim::RmsProp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Seeds shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            rho: 0.9,
            eps: 1e-8,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return Err(Error::Argument("train config: need lr > 0, rho in [0,1), eps > 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Argument("train config: batch_size and max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Labeled view over a shared pool of equal-shaped sequences `[S, H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSet {
    pool: Arc<Vec<Tensor>>,
    members: Vec<usize>,
    labels: Vec<usize>,
}

impl SequenceSet {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        let members = (0..inputs.len()).collect();
        SequenceSet::subset(Arc::new(inputs), members, labels)
    }

    /// A view selecting `members` of `pool`, labelled by `labels`.
    pub fn subset(pool: Arc<Vec<Tensor>>, members: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if members.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs vs {} labels",
                members.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= pool.len()) {
            return Err(Error::Argument(format!("member {bad} outside a pool of {}", pool.len())));
        }
        if let Some(first) = members.first().map(|&m| &pool[m]) {
            if let Some(bad) = members.iter().map(|&m| &pool[m]).find(|t| t.shape() != first.shape()) {
                return Err(Error::Shape(format!(
                    "sequence shapes differ: {:?} vs {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        Ok(SequenceSet { pool, members, labels })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &Tensor {
        &self.pool[self.members[i]]
    }

    /// Stacks the selected sequences into a `[B, S, H, W, C]` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let items: Vec<&Tensor> = idx.iter().map(|&i| self.input(i)).collect();
        let x = Tensor::stack(&items)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Wall-clock seconds of each epoch's training pass.
    pub epoch_seconds: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss and accuracy of infer-mode predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 64;

/// Infer-mode class probabilities for every sequence in `set`.
pub fn predict_set(net: &Network, set: &SequenceSet) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = set.batch(chunk)?;
        let p = net.predict(&x)?;
        out.extend(p.data().chunks_exact(net.config.n_classes).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn evaluate(net: &Network, set: &SequenceSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty".into()));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = set.batch(chunk)?;
        let logits = net.logits_infer(&x)?;
        let (l, probs, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        for (row, &y) in probs.data().chunks_exact(net.config.n_classes).zip(&labels) {
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    let n = set.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Splits a shuffled order into minibatches, never leaving a batch of one
/// (batch norm needs two examples). A lone example overall is repeated.
fn minibatches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    if order.len() == 1 {
        return vec![vec![order[0], order[0]]];
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

/// Outcome of one [`Trainer::step_epoch`] call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochOutcome {
    pub train_loss: f64,
    pub val: Option<Evaluation>,
    /// Early stopping triggered or the epoch budget is spent.
    pub done: bool,
}

/// Stateful epoch-by-epoch trainer.
pub struct Trainer {
    net: Network,
    cfg: TrainConfig,
    opt: RmsProp,
    rng: ChaCha8Rng,
    history: TrainHistory,
    best: Option<(f64, Network)>,
    since_best: usize,
}

impl Trainer {
    pub fn new(net: Network, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            opt: RmsProp::new(cfg.lr, cfg.rho, cfg.eps),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net,
            cfg,
            history: TrainHistory::default(),
            best: None,
            since_best: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_run(&self) -> usize {
        self.history.train_loss.len()
    }

    /// One pass over shuffled minibatches. Returns the mean minibatch loss.
    pub fn run_epoch(&mut self, train: &SequenceSet) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("training set is empty".into()));
        }
        let epoch = self.epochs_run();
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let batches = minibatches(&order, self.cfg.batch_size);
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let (x, labels) = train.batch(idx)?;
            let (loss, grads, cache) = self.net.loss_and_grads(&x, &labels, &mut self.rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss {loss}, batch of {} sequences", idx.len()),
                });
            }
            self.opt.step(self.net.params_mut(), &grads)?;
            self.net.update_running_stats(&cache);
            total += loss;
        }
        let mean = total / batches.len() as f64;
        self.history.train_loss.push(mean);
        self.history.epoch_seconds.push(start.elapsed().as_secs_f64());
        Ok(mean)
    }

    /// Trains one epoch, evaluates on `val` and updates early-stopping state.
    pub fn step_epoch(&mut self, train: &SequenceSet, val: Option<&SequenceSet>) -> Result<EpochOutcome> {
        let train_loss = self.run_epoch(train)?;
        let epoch = self.epochs_run() - 1;
        let mut done = self.epochs_run() >= self.cfg.max_epochs;
        let val_eval = match val {
            Some(v) => {
                let e = evaluate(&self.net, v)?;
                self.history.val_loss.push(e.loss);
                self.history.val_accuracy.push(e.accuracy);
                if self.best.as_ref().is_none_or(|(b, _)| e.loss < *b) {
                    self.best = Some((e.loss, self.net.clone()));
                    self.history.best_epoch = epoch;
                    self.since_best = 0;
                } else {
                    self.since_best += 1;
                    if self.since_best >= self.cfg.patience {
                        self.history.stopped_early = true;
                        done = true;
                    }
                }
                Some(e)
            }
            None => {
                self.history.best_epoch = epoch;
                None
            }
        };
        Ok(EpochOutcome {
            train_loss,
            val: val_eval,
            done,
        })
    }

    /// Restores the best validation parameters (if any) and hands back the
    /// network with its history.
    pub fn finish(self) -> (Network, TrainHistory) {
        let net = match self.best {
            Some((_, best)) => best,
            None => self.net,
        };
        (net, self.history)
    }
}

/// Trains until the epoch budget is spent or validation loss stalls for
/// `patience` epochs, then restores the best-validation parameters.
pub fn train(
    net: Network,
    train_set: &SequenceSet,
    val: Option<&SequenceSet>,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    let mut trainer = Trainer::new(net, cfg.clone())?;
    loop {
        if trainer.step_epoch(train_set, val)?.done {
            break;
        }
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minibatches_avoid_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = minibatches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(minibatches(&[3], 8), vec![vec![3, 3]]);
        assert_eq!(minibatches(&order, 1).len(), 4);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }
}
