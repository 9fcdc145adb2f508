//! Time-distributed conv stack -> time-distributed dense -> recurrent
//! layers -> softmax head on the final time step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{apply_mask, dropout_mask, relu, relu_backward, softmax, softmax_cross_entropy};
use super::batchnorm::{BatchNorm, BnCache};
use super::conv::{Conv2d, KERNEL};
use super::dense::Dense;
use super::recurrent::{RecurrentKind, RecurrentLayer, SequenceCache};
use crate::error::{Error, Result};
use crate::mesh::{MeshSequence, GRID, WINDOW};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub conv_filters: Vec<usize>,
    pub td_dense_units: usize,
    pub recurrent_kind: RecurrentKind,
    pub recurrent_units: Vec<usize>,
    pub dropout: f64,
    pub n_classes: usize,
    /// Windows per sequence.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Spatial grid side.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Samples per mesh cell (input channels of the first conv).
    #[serde(default = "default_window")]
    pub in_channels: usize,
}

fn default_steps() -> usize {
    10
}
fn default_grid() -> usize {
    GRID
}
fn default_window() -> usize {
    WINDOW
}

impl NetworkConfig {
    /// Default layer sizes for the 9x9x128 mesh input.
    pub fn new(kind: RecurrentKind, conv_filters: &[usize], recurrent_units: &[usize], n_classes: usize) -> Self {
        NetworkConfig {
            conv_filters: conv_filters.to_vec(),
            td_dense_units: 128,
            recurrent_kind: kind,
            recurrent_units: recurrent_units.to_vec(),
            dropout: 0.3,
            n_classes,
            steps: default_steps(),
            grid: GRID,
            in_channels: WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(format!("network config: {m}")));
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return bad("need at least one conv layer with non-zero filters");
        }
        if self.recurrent_units.is_empty() || self.recurrent_units.contains(&0) {
            return bad("need at least one recurrent layer with non-zero units");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.n_classes < 2 {
            return bad("need at least two classes");
        }
        if self.td_dense_units == 0 || self.steps == 0 || self.grid == 0 || self.in_channels == 0 {
            return bad("dense units, steps, grid and input channels must be positive");
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.steps, self.grid, self.grid, self.in_channels]
    }
}

/// Closed-form trainable parameter count of the recurrent layers alone.
pub fn recurrent_param_count(kind: RecurrentKind, d: usize, units: &[usize]) -> usize {
    let mut d = d;
    let mut total = 0;
    for &n in units {
        total += match kind {
            RecurrentKind::Gru => 3 * (d * n + n * n),
            RecurrentKind::Lstm => 4 * (d * n + n * n) + 3 * n,
        };
        d = n;
    }
    total
}

/// Closed-form trainable parameter count (batch-norm running statistics
/// excluded).
pub fn param_count(cfg: &NetworkConfig) -> usize {
    let k2 = KERNEL * KERNEL;
    let mut total = 0;
    let mut c_in = cfg.in_channels;
    for &c in &cfg.conv_filters {
        total += k2 * c_in * c + 2 * c;
        c_in = c;
    }
    let flat = cfg.grid * cfg.grid * c_in;
    total += flat * cfg.td_dense_units + cfg.td_dense_units;
    total += recurrent_param_count(cfg.recurrent_kind, cfg.td_dense_units, &cfg.recurrent_units);
    let last = *cfg.recurrent_units.last().unwrap_or(&0);
    total += last * cfg.n_classes + cfg.n_classes;
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
    pub td_dense: Dense,
    pub recurrent: Vec<RecurrentLayer>,
    pub head: Dense,
}

/// Activations kept from a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// Inputs of conv layers 1.. (layer 0 reads the batch itself).
    conv_inputs: Vec<Tensor>,
    bn: Vec<BnCache>,
    /// Post-ReLU, pre-dropout conv activations.
    conv_relu: Vec<Tensor>,
    conv_masks: Vec<Option<Tensor>>,
    td_input: Tensor,
    td_relu: Tensor,
    td_mask: Option<Tensor>,
    /// Per recurrent layer: its input sequence data `[B * S * d]`.
    rec_inputs: Vec<Vec<f64>>,
    rec_caches: Vec<Vec<SequenceCache>>,
    rec_masks: Vec<Option<Tensor>>,
    head_input: Tensor,
}

impl ForwardCache {
    /// Batch statistics of each batch-norm layer, in order.
    pub fn batch_norm_caches(&self) -> &[BnCache] {
        &self.bn
    }
}

impl Network {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = config.in_channels;
        for &c in &config.conv_filters {
            convs.push(Conv2d::new(c_in, c, &mut rng));
            norms.push(BatchNorm::new(c));
            c_in = c;
        }
        let flat = config.grid * config.grid * c_in;
        let td_dense = Dense::new(flat, config.td_dense_units, &mut rng);
        let mut recurrent = Vec::new();
        let mut d = config.td_dense_units;
        for &n in &config.recurrent_units {
            recurrent.push(RecurrentLayer::new(config.recurrent_kind, d, n, &mut rng));
            d = n;
        }
        let head = Dense::new(d, config.n_classes, &mut rng);
        Ok(Network {
            config,
            convs,
            norms,
            td_dense,
            recurrent,
            head,
        })
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter().zip(&self.norms) {
            out.extend([&c.kernel, &b.gamma, &b.beta]);
        }
        out.extend([&self.td_dense.weight, &self.td_dense.bias]);
        for r in &self.recurrent {
            out.extend(r.tensors());
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut c.kernel);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        out.push(&mut self.td_dense.weight);
        out.push(&mut self.td_dense.bias);
        for r in &mut self.recurrent {
            out.extend(r.tensors_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like [`Network::params`].
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (bn, c) in self.norms.iter_mut().zip(&cache.bn) {
            bn.update_running(c);
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let want = self.config.input_shape();
        if x.rank() != 5 || x.shape()[1..] != want {
            return Err(Error::Shape(format!(
                "network expects [B, {}, {}, {}, {}], got {:?}",
                want[0],
                want[1],
                want[2],
                want[3],
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    /// Class probabilities `[B, n_classes]` for a batch `[B, S, H, W, C]`.
    /// In train mode the RNG draws dropout masks; in infer mode it is unused.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
        let logits = match mode {
            Mode::Infer => self.logits_infer(x)?,
            Mode::Train => self.forward_train(x, rng)?.0,
        };
        let k = self.config.n_classes;
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.data().chunks_exact(k) {
            probs.extend(softmax(row));
        }
        Tensor::from_vec(logits.shape(), probs)
    }

    /// Infer-mode probabilities without an RNG.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Infer-mode class probabilities for one mesh sequence.
    pub fn classify(&self, seq: &MeshSequence) -> Result<Vec<f64>> {
        let mut shape = vec![1];
        shape.extend_from_slice(seq.tensor.shape());
        let x = seq.tensor.clone().reshape(&shape)?;
        Ok(self.predict(&x)?.into_data())
    }

    pub fn logits_infer(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(x)?;
        let cfg = &self.config;
        let frames = b * cfg.steps;
        let g = cfg.grid;
        let mut act: Option<Tensor> = None;
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            let input = act.as_ref().map_or(x.data(), |t| t.data());
            let z = conv.forward_frames(input, frames, g, g);
            act = Some(relu(&bn.forward_infer(&z)?));
        }
        let act = act.expect("at least one conv layer");
        let flat = act.reshape(&[frames, self.td_dense.d_in()])?;
        let td = relu(&self.td_dense.forward(&flat)?);
        let mut seq = td.into_data();
        for layer in &self.recurrent {
            let d = layer.input_size();
            let mut out = Vec::with_capacity(frames * layer.units());
            for s in seq.chunks_exact(cfg.steps * d) {
                out.extend(layer.forward_sequence(s, cfg.steps, None)?.0);
            }
            seq = out;
        }
        let n = self.recurrent.last().expect("at least one recurrent layer").units();
        let last = last_steps(&seq, b, cfg.steps, n);
        self.head.forward(&Tensor::from_vec(&[b, n], last)?)
    }

    /// Train-mode logits plus everything the backward pass needs.
    pub fn forward_train(&self, x: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, ForwardCache)> {
        let b = self.check_batch(x)?;
        let cfg = &self.config;
        let frames = b * cfg.steps;
        let g = cfg.grid;
        let rate = cfg.dropout;
        let mut conv_inputs = Vec::new();
        let mut bn_caches = Vec::new();
        let mut conv_relu = Vec::new();
        let mut conv_masks = Vec::new();
        let mut act: Option<Tensor> = None;
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            let z = conv.forward_frames(act.as_ref().map_or(x.data(), |t| t.data()), frames, g, g);
            if let Some(prev) = act.take() {
                conv_inputs.push(prev);
            }
            let (y, cache) = bn.forward_train(&z)?;
            bn_caches.push(cache);
            let r = relu(&y);
            let mut a = r.clone();
            let mask = (rate > 0.0).then(|| dropout_mask(r.shape(), rate, rng));
            if let Some(m) = &mask {
                apply_mask(&mut a, m);
            }
            conv_relu.push(r);
            conv_masks.push(mask);
            act = Some(a);
        }
        let td_input = act
            .expect("at least one conv layer")
            .reshape(&[frames, self.td_dense.d_in()])?;
        let td_relu = relu(&self.td_dense.forward(&td_input)?);
        let mut td_out = td_relu.clone();
        let td_mask = (rate > 0.0).then(|| dropout_mask(td_relu.shape(), rate, rng));
        if let Some(m) = &td_mask {
            apply_mask(&mut td_out, m);
        }

        let mut seq = td_out.into_data();
        let mut rec_inputs = Vec::new();
        let mut rec_caches = Vec::new();
        let mut rec_masks = Vec::new();
        for layer in &self.recurrent {
            let (d, n) = (layer.input_size(), layer.units());
            let mask = (rate > 0.0).then(|| dropout_mask(&[b, n], rate, rng));
            let mut out = Vec::with_capacity(frames * n);
            let mut caches = Vec::with_capacity(b);
            for (i, s) in seq.chunks_exact(cfg.steps * d).enumerate() {
                let m = mask.as_ref().map(|m| m.outer(i));
                let (hs, c) = layer.forward_sequence(s, cfg.steps, m)?;
                out.extend(hs);
                caches.push(c);
            }
            rec_inputs.push(std::mem::replace(&mut seq, out));
            rec_caches.push(caches);
            rec_masks.push(mask);
        }
        let n = self.recurrent.last().expect("at least one recurrent layer").units();
        let head_input = Tensor::from_vec(&[b, n], last_steps(&seq, b, cfg.steps, n))?;
        let logits = self.head.forward(&head_input)?;
        Ok((
            logits,
            ForwardCache {
                batch: b,
                conv_inputs,
                bn: bn_caches,
                conv_relu,
                conv_masks,
                td_input,
                td_relu,
                td_mask,
                rec_inputs,
                rec_caches,
                rec_masks,
                head_input,
            },
        ))
    }

    /// Gradients of the loss with respect to every parameter (declaration
    /// order) given `d loss / d logits`.
    pub fn backward(&self, x: &Tensor, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.backward_full(x, cache, grad_logits, false)?.0)
    }

    /// Like [`Network::backward`] and also returns the input gradient.
    pub fn backward_with_input(
        &self,
        x: &Tensor,
        cache: &ForwardCache,
        grad_logits: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let (g, dx) = self.backward_full(x, cache, grad_logits, true)?;
        Ok((g, dx.expect("requested input gradient")))
    }

    fn backward_full(
        &self,
        x: &Tensor,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Vec<Tensor>, Option<Tensor>)> {
        let b = cache.batch;
        let cfg = &self.config;
        let steps = cfg.steps;
        let frames = b * steps;
        let g = cfg.grid;

        let (dhead_in, dhead_w, dhead_b) = self.head.backward(&cache.head_input, grad_logits)?;

        let n_top = self.recurrent.last().expect("recurrent layer").units();
        let mut dseq = vec![0.0; frames * n_top];
        for i in 0..b {
            let t = (i * steps + steps - 1) * n_top;
            dseq[t..t + n_top].copy_from_slice(dhead_in.outer(i));
        }
        let mut rec_grads: Vec<RecurrentLayer> = self.recurrent.iter().map(|l| l.zeros_like()).collect();
        for (li, layer) in self.recurrent.iter().enumerate().rev() {
            let (d, n) = (layer.input_size(), layer.units());
            let xs = &cache.rec_inputs[li];
            let mut dxs = Vec::with_capacity(frames * d);
            for i in 0..b {
                let m = cache.rec_masks[li].as_ref().map(|m| m.outer(i));
                dxs.extend(layer.backward_sequence(
                    &xs[i * steps * d..(i + 1) * steps * d],
                    &cache.rec_caches[li][i],
                    &dseq[i * steps * n..(i + 1) * steps * n],
                    m,
                    &mut rec_grads[li],
                )?);
            }
            dseq = dxs;
        }

        let mut dtd = Tensor::from_vec(&[frames, cfg.td_dense_units], dseq)?;
        if let Some(m) = &cache.td_mask {
            apply_mask(&mut dtd, m);
        }
        let dtd = relu_backward(&cache.td_relu, &dtd);
        let (dflat, dtd_w, dtd_b) = self.td_dense.backward(&cache.td_input, &dtd)?;

        let c_last = *cfg.conv_filters.last().expect("conv layer");
        let mut dact = dflat.reshape(&[frames, g, g, c_last])?;
        let mut conv_grads = Vec::with_capacity(self.convs.len());
        let mut input_grad = None;
        for li in (0..self.convs.len()).rev() {
            if let Some(m) = &cache.conv_masks[li] {
                apply_mask(&mut dact, m);
            }
            let dy = relu_backward(&cache.conv_relu[li], &dact);
            let (dz, dgamma, dbeta) = self.norms[li].backward(&cache.bn[li], &dy)?;
            let conv = &self.convs[li];
            let mut dk = Tensor::zeros(conv.kernel.shape());
            let input = if li == 0 { x.data() } else { cache.conv_inputs[li - 1].data() };
            let need = li > 0 || need_input_grad;
            let dx = conv.backward_frames(input, frames, g, g, &dz, &mut dk, need)?;
            conv_grads.push((dk, dgamma, dbeta));
            if li > 0 {
                dact = dx.expect("requested");
            } else if let Some(dx) = dx {
                input_grad = Some(dx.reshape(x.shape())?);
            }
        }
        conv_grads.reverse();

        let mut grads = Vec::new();
        for (k, ga, be) in conv_grads {
            grads.extend([k, ga, be]);
        }
        grads.extend([dtd_w, dtd_b]);
        for r in rec_grads {
            grads.extend(r.tensors().into_iter().cloned());
        }
        grads.extend([dhead_w, dhead_b]);
        Ok((grads, input_grad))
    }

    /// Mean cross-entropy of a train-mode pass, its parameter gradients and
    /// the forward cache (for running-statistic updates).
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        labels: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(f64, Vec<Tensor>, ForwardCache)> {
        let (logits, cache) = self.forward_train(x, rng)?;
        let (loss, _, grad) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(x, &cache, &grad)?;
        Ok((loss, grads, cache))
    }

    /// Batch-norm running statistics, `[mean, var]` per layer.
    pub fn running_stats(&self) -> Vec<&Vec<f64>> {
        self.norms
            .iter()
            .flat_map(|b| [&b.running_mean, &b.running_var])
            .collect()
    }
}

fn last_steps(seq: &[f64], b: usize, steps: usize, n: usize) -> Vec<f64> {
    (0..b)
        .flat_map(|i| {
            let t = (i * steps + steps - 1) * n;
            seq[t..t + n].iter().copied()
        })
        .collect()
}
