//! 3x3, stride-1, zero-padded ("same") convolution over channels-last frames.

use rand::Rng;

use super::gemm::{gemm, Op};
use super::init::glorot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

/// Bias-free convolution; the batch norm that follows supplies the shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[3, 3, c_in, c_out]`.
    pub kernel: Tensor,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let k2 = KERNEL * KERNEL;
        Conv2d {
            kernel: glorot(&[KERNEL, KERNEL, c_in, c_out], k2 * c_in, k2 * c_out, rng),
        }
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[3]
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        if x.rank() != 4 || x.shape()[3] != self.c_in() {
            return Err(Error::Shape(format!(
                "conv expects [N, H, W, {}], got {:?}",
                self.c_in(),
                x.shape()
            )));
        }
        Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
    }

    /// `[N, H, W, c_in] -> [N, H, W, c_out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w) = self.check_input(x)?;
        Ok(self.forward_frames(x.data(), n, h, w))
    }

    /// Same as [`Conv2d::forward`] on raw channels-last frame data.
    pub fn forward_frames(&self, xd: &[f64], n: usize, h: usize, w: usize) -> Tensor {
        let (ci, co) = (self.c_in(), self.c_out());
        assert_eq!(xd.len(), n * h * w * ci, "conv input length");
        let cells = CellGather::new(xd, ci);
        // Every live input cell is multiplied against all nine taps at once,
        // then the products are scattered to the outputs they feed.
        let kp = self.tap_major_kernel();
        let width = TAPS * co;
        let mut prod = vec![0.0; cells.len() * width];
        gemm(cells.len(), ci, width, cells.rows(xd), Op::N, &kp, Op::N, &mut prod, false);
        let mut y = Tensor::zeros(&[n, h, w, co]);
        let yd = y.data_mut();
        for (slot, p) in prod.chunks_exact(width).enumerate() {
            for_each_tap(cells.cell(slot), h, w, |tap, out| {
                let dst = &mut yd[out * co..][..co];
                for (o, v) in dst.iter_mut().zip(&p[tap * co..][..co]) {
                    *o += v;
                }
            });
        }
        y
    }

    // Kernel reordered from `[tap, c_in, c_out]` to `[c_in, tap, c_out]`.
    fn tap_major_kernel(&self) -> Vec<f64> {
        let (ci, co) = (self.c_in(), self.c_out());
        let k = self.kernel.data();
        let mut kp = vec![0.0; k.len()];
        for tap in 0..TAPS {
            for c in 0..ci {
                kp[(c * TAPS + tap) * co..][..co].copy_from_slice(&k[(tap * ci + c) * co..][..co]);
            }
        }
        kp
    }

    /// Accumulates the kernel gradient into `grad_kernel` and returns the
    /// input gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_kernel: &mut Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (n, h, w) = self.check_input(x)?;
        self.backward_frames(x.data(), n, h, w, grad_out, grad_kernel, need_input_grad)
    }

    /// Same as [`Conv2d::backward`] on raw channels-last frame data.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_frames(
        &self,
        xd: &[f64],
        n: usize,
        h: usize,
        w: usize,
        grad_out: &Tensor,
        grad_kernel: &mut Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (ci, co) = (self.c_in(), self.c_out());
        if xd.len() != n * h * w * ci {
            return Err(Error::Shape("conv backward: input length".into()));
        }
        grad_out.expect_shape(&[n, h, w, co], "conv grad_out")?;
        grad_kernel.expect_shape(self.kernel.shape(), "conv grad_kernel")?;
        let gd = grad_out.data();
        let width = TAPS * co;
        // Row r holds, tap by tap, the output gradient that input cell r fed.
        let gather = |cell: usize, row: &mut [f64]| {
            for_each_tap(cell, h, w, |tap, out| {
                row[tap * co..][..co].copy_from_slice(&gd[out * co..][..co]);
            });
        };
        let cells = CellGather::new(xd, ci);
        let mut g_live = vec![0.0; cells.len() * width];
        for (slot, row) in g_live.chunks_exact_mut(width).enumerate() {
            gather(cells.cell(slot), row);
        }
        let mut dkp = vec![0.0; ci * width];
        gemm(ci, cells.len(), width, cells.rows(xd), Op::T, &g_live, Op::N, &mut dkp, false);
        let gk = grad_kernel.data_mut();
        for tap in 0..TAPS {
            for c in 0..ci {
                let src = &dkp[(c * TAPS + tap) * co..][..co];
                for (a, v) in gk[(tap * ci + c) * co..][..co].iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let total = n * h * w;
        let g_all = if cells.len() == total {
            g_live
        } else {
            let mut g = vec![0.0; total * width];
            for (cell, row) in g.chunks_exact_mut(width).enumerate() {
                gather(cell, row);
            }
            g
        };
        let kp = self.tap_major_kernel();
        let mut dx = Tensor::zeros(&[n, h, w, ci]);
        gemm(total, width, ci, &g_all, Op::N, &kp, Op::T, dx.data_mut(), false);
        Ok(Some(dx))
    }
}

const TAPS: usize = KERNEL * KERNEL;

// Calls `f(tap, output_cell)` for each output the input `cell` contributes
// to. Cells are flat `(frame, row, col)` indices.
fn for_each_tap(cell: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    let (frame, rest) = (cell / (h * w), cell % (h * w));
    let (iy, ix) = (rest / w, rest % w);
    for ky in 0..KERNEL {
        let Some(oy) = (iy + 1).checked_sub(ky).filter(|&v| v < h) else {
            continue;
        };
        for kx in 0..KERNEL {
            let Some(ox) = (ix + 1).checked_sub(kx).filter(|&v| v < w) else {
                continue;
            };
            f(ky * KERNEL + kx, (frame * h + oy) * w + ox);
        }
    }
}

// Mesh frames are mostly empty cells, so only cells holding a nonzero
// channel take part in the products. Dense inputs are used in place.
struct CellGather {
    live: Option<Vec<usize>>,
    packed: Vec<f64>,
    total: usize,
}

impl CellGather {
    fn new(xd: &[f64], ci: usize) -> Self {
        let total = if ci == 0 { 0 } else { xd.len() / ci };
        let live: Vec<usize> = (0..total)
            .filter(|&c| xd[c * ci..][..ci].iter().any(|&v| v != 0.0))
            .collect();
        if live.len() == total {
            return CellGather { live: None, packed: Vec::new(), total };
        }
        let mut packed = Vec::with_capacity(live.len() * ci);
        for &c in &live {
            packed.extend_from_slice(&xd[c * ci..][..ci]);
        }
        CellGather { live: Some(live), packed, total }
    }

    fn len(&self) -> usize {
        self.live.as_ref().map_or(self.total, Vec::len)
    }

    fn cell(&self, slot: usize) -> usize {
        self.live.as_ref().map_or(slot, |l| l[slot])
    }

    fn rows<'a>(&'a self, xd: &'a [f64]) -> &'a [f64] {
        if self.live.is_some() {
            &self.packed
        } else {
            xd
        }
    }
}

/// Single-image convolution: `[H, W, c_in]` with `[3, 3, c_in, c_out]` kernels.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 || kernels.rank() != 4 || kernels.shape()[..2] != [KERNEL, KERNEL] {
        return Err(Error::Shape(format!(
            "conv2d_forward: input {:?}, kernels {:?}",
            input.shape(),
            kernels.shape()
        )));
    }
    let (h, w) = (input.shape()[0], input.shape()[1]);
    let conv = Conv2d {
        kernel: kernels.clone(),
    };
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let y = conv.forward(&input.clone().reshape(&shape)?)?;
    y.reshape(&[h, w, conv.c_out()])
}
