//! Per-channel batch normalization over every leading axis of a
//! channels-last tensor.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Batch statistics and normalized activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let c = self.channels();
        if x.rank() < 2 || *x.shape().last().expect("rank >= 2") != c {
            return Err(Error::Shape(format!(
                "batchnorm over {c} channels got {:?}",
                x.shape()
            )));
        }
        Ok(x.len() / c)
    }

    /// Normalizes with the batch's own (biased) statistics. The leading
    /// (batch) axis must hold at least two entries.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let m = self.check(x)?;
        if x.shape()[0] < 2 {
            return Err(Error::Argument(
                "batch norm in train mode needs a batch of at least 2".into(),
            ));
        }
        let c = self.channels();
        let mut mean = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|a| *a /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.data(), self.beta.data());
        for ((xr, hr), yr) in x
            .data()
            .chunks_exact(c)
            .zip(xhat.data_mut().chunks_exact_mut(c))
            .zip(y.data_mut().chunks_exact_mut(c))
        {
            for j in 0..c {
                let n = (xr[j] - mean[j]) * inv_std[j];
                hr[j] = n;
                yr[j] = g[j] * n + b[j];
            }
        }
        Ok((
            y,
            BnCache {
                xhat,
                mean,
                var,
                inv_std,
            },
        ))
    }

    /// Exponential moving update of the running statistics from one batch.
    pub fn update_running(&mut self, cache: &BnCache) {
        for j in 0..self.channels() {
            self.running_mean[j] = BN_MOMENTUM * self.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.mean[j];
            self.running_var[j] = BN_MOMENTUM * self.running_var[j] + (1.0 - BN_MOMENTUM) * cache.var[j];
        }
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let c = self.channels();
        let scale: Vec<f64> = (0..c)
            .map(|j| self.gamma.data()[j] / (self.running_var[j] + BN_EPS).sqrt())
            .collect();
        let mut y = x.clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta.data()[j];
            }
        }
        Ok(y)
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        grad_out.expect_shape(cache.xhat.shape(), "batchnorm grad_out")?;
        let c = self.channels();
        let m = (grad_out.len() / c) as f64;
        let mut dbeta = vec![0.0; c];
        let mut dgamma = vec![0.0; c];
        for (gr, hr) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for j in 0..c {
                dbeta[j] += gr[j];
                dgamma[j] += gr[j] * hr[j];
            }
        }
        let mut dx = Tensor::zeros(grad_out.shape());
        let g = self.gamma.data();
        for ((dr, gr), hr) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(grad_out.data().chunks_exact(c))
            .zip(cache.xhat.data().chunks_exact(c))
        {
            for j in 0..c {
                dr[j] = g[j] * cache.inv_std[j] / m * (m * gr[j] - dbeta[j] - hr[j] * dgamma[j]);
            }
        }
        Ok((
            dx,
            Tensor::from_vec(&[c], dgamma)?,
            Tensor::from_vec(&[c], dbeta)?,
        ))
    }
}
