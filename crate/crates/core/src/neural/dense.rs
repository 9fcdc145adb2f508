use rand::Rng;

use super::gemm::{gemm, Op};
use super::init::glorot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[d_in, d_out]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: glorot(&[d_in, d_out], d_in, d_out, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn rows(&self, x: &Tensor) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.d_in() {
            return Err(Error::Shape(format!(
                "dense expects [N, {}], got {:?}",
                self.d_in(),
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.rows(x)?;
        let (di, dout) = (self.d_in(), self.d_out());
        let mut y = Tensor::zeros(&[n, dout]);
        for row in y.data_mut().chunks_exact_mut(dout) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(n, di, dout, x.data(), Op::N, self.weight.data(), Op::N, y.data_mut(), true);
        Ok(y)
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let n = self.rows(x)?;
        let (di, dout) = (self.d_in(), self.d_out());
        grad_out.expect_shape(&[n, dout], "dense grad_out")?;
        let g = grad_out.data();
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, dout, di, g, Op::N, self.weight.data(), Op::T, dx.data_mut(), false);
        let mut dw = Tensor::zeros(self.weight.shape());
        gemm(di, n, dout, x.data(), Op::T, g, Op::N, dw.data_mut(), false);
        let mut db = Tensor::zeros(&[dout]);
        for row in g.chunks_exact(dout) {
            for (b, v) in db.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok((dx, dw, db))
    }
}
