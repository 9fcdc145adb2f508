//! Bias-free GRU and peephole LSTM cells, plus sequence-level forward and
//! backpropagation through time.
//!
//! Weight matrices are stored row-major as `[n, d]` (input) and `[n, n]`
//! (recurrent), so a gate pre-activation is `W x + U h`. Recurrent dropout
//! multiplies `h_prev` by a fixed per-sequence mask wherever it enters a
//! `U` product; the interpolation/cell paths see the unmasked state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrentKind {
    Gru,
    Lstm,
}

impl std::fmt::Display for RecurrentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecurrentKind::Gru => "gru",
            RecurrentKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for RecurrentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(RecurrentKind::Gru),
            "lstm" => Ok(RecurrentKind::Lstm),
            other => Err(Error::Argument(format!("unknown recurrent kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_f: Tensor,
    pub w_c: Tensor,
    pub u_i: Tensor,
    pub u_o: Tensor,
    pub u_f: Tensor,
    pub u_c: Tensor,
    /// Diagonal peephole weights, `[n]`.
    pub v_i: Tensor,
    pub v_o: Tensor,
    pub v_f: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M v` for row-major `M` of `out.len()` rows.
fn matvec_acc(out: &mut [f64], m: &[f64], v: &[f64]) {
    let d = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(d)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ g`.
fn matvec_t_acc(out: &mut [f64], m: &[f64], g: &[f64]) {
    let d = out.len();
    for (gi, row) in g.iter().zip(m.chunks_exact(d)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `dM += g vᵀ`.
fn outer_acc(dm: &mut [f64], g: &[f64], v: &[f64]) {
    let d = v.len();
    for (gi, row) in g.iter().zip(dm.chunks_exact_mut(d)) {
        if *gi != 0.0 {
            for (a, b) in row.iter_mut().zip(v) {
                *a += gi * b;
            }
        }
    }
}

fn masked(h: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => h.to_vec(),
    }
}

fn check_dims(what: &str, x: usize, d: usize, h: usize, n: usize) -> Result<()> {
    if x != d || h != n {
        return Err(Error::Shape(format!(
            "{what}: expected input {d} and state {n}, got {x} and {h}"
        )));
    }
    Ok(())
}

impl GruLayerParams {
    pub fn new(d: usize, n: usize, rng: &mut impl Rng) -> Self {
        GruLayerParams {
            w_z: glorot(&[n, d], d, n, rng),
            w_r: glorot(&[n, d], d, n, rng),
            w: glorot(&[n, d], d, n, rng),
            u_z: glorot(&[n, n], n, n, rng),
            u_r: glorot(&[n, n], n, n, rng),
            u: glorot(&[n, n], n, n, rng),
        }
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        GruLayerParams {
            w_z: Tensor::zeros(&[n, d]),
            w_r: Tensor::zeros(&[n, d]),
            w: Tensor::zeros(&[n, d]),
            u_z: Tensor::zeros(&[n, n]),
            u_r: Tensor::zeros(&[n, n]),
            u: Tensor::zeros(&[n, n]),
        }
    }

    pub fn units(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_z, &self.w_r, &self.w, &self.u_z, &self.u_r, &self.u]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u,
        ]
    }
}

impl LstmLayerParams {
    pub fn new(d: usize, n: usize, rng: &mut impl Rng) -> Self {
        LstmLayerParams {
            w_i: glorot(&[n, d], d, n, rng),
            w_o: glorot(&[n, d], d, n, rng),
            w_f: glorot(&[n, d], d, n, rng),
            w_c: glorot(&[n, d], d, n, rng),
            u_i: glorot(&[n, n], n, n, rng),
            u_o: glorot(&[n, n], n, n, rng),
            u_f: glorot(&[n, n], n, n, rng),
            u_c: glorot(&[n, n], n, n, rng),
            v_i: Tensor::zeros(&[n]),
            v_o: Tensor::zeros(&[n]),
            v_f: Tensor::zeros(&[n]),
        }
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        LstmLayerParams {
            w_i: Tensor::zeros(&[n, d]),
            w_o: Tensor::zeros(&[n, d]),
            w_f: Tensor::zeros(&[n, d]),
            w_c: Tensor::zeros(&[n, d]),
            u_i: Tensor::zeros(&[n, n]),
            u_o: Tensor::zeros(&[n, n]),
            u_f: Tensor::zeros(&[n, n]),
            u_c: Tensor::zeros(&[n, n]),
            v_i: Tensor::zeros(&[n]),
            v_o: Tensor::zeros(&[n]),
            v_f: Tensor::zeros(&[n]),
        }
    }

    pub fn units(&self) -> usize {
        self.w_c.shape()[0]
    }

    pub fn input_size(&self) -> usize {
        self.w_c.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_i, &self.w_o, &self.w_f, &self.w_c, &self.u_i, &self.u_o, &self.u_f,
            &self.u_c, &self.v_i, &self.v_o, &self.v_f,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.w_o,
            &mut self.w_f,
            &mut self.w_c,
            &mut self.u_i,
            &mut self.u_o,
            &mut self.u_f,
            &mut self.u_c,
            &mut self.v_i,
            &mut self.v_o,
            &mut self.v_f,
        ]
    }
}

pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<Vec<f64>> {
    check_dims("gru_step", x.len(), p.input_size(), h_prev.len(), p.units())?;
    Ok(gru_forward_step(x, h_prev, None, p).h)
}

pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims("lstm_step", x.len(), p.input_size(), h_prev.len(), p.units())?;
    if c_prev.len() != p.units() {
        return Err(Error::Shape(format!(
            "lstm_step: cell state has {} entries, expected {}",
            c_prev.len(),
            p.units()
        )));
    }
    let s = lstm_forward_step(x, h_prev, c_prev, None, p);
    Ok((s.h, s.c))
}

#[derive(Clone, Debug)]
pub struct GruStep {
    h_prev: Vec<f64>,
    hm: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hhat: Vec<f64>,
    h: Vec<f64>,
}

fn gru_forward_step(x: &[f64], h_prev: &[f64], mask: Option<&[f64]>, p: &GruLayerParams) -> GruStep {
    let n = p.units();
    let hm = masked(h_prev, mask);
    let mut az = vec![0.0; n];
    matvec_acc(&mut az, p.w_z.data(), x);
    matvec_acc(&mut az, p.u_z.data(), &hm);
    let mut ar = vec![0.0; n];
    matvec_acc(&mut ar, p.w_r.data(), x);
    matvec_acc(&mut ar, p.u_r.data(), &hm);
    let z: Vec<f64> = az.into_iter().map(sigmoid).collect();
    let r: Vec<f64> = ar.into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(&hm).map(|(a, b)| a * b).collect();
    let mut ah = vec![0.0; n];
    matvec_acc(&mut ah, p.w.data(), x);
    matvec_acc(&mut ah, p.u.data(), &rh);
    let hhat: Vec<f64> = ah.into_iter().map(f64::tanh).collect();
    let h = (0..n)
        .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * hhat[j])
        .collect();
    GruStep {
        h_prev: h_prev.to_vec(),
        hm,
        z,
        r,
        hhat,
        h,
    }
}

/// Backward through one GRU step. Accumulates parameter gradients and `dx`,
/// returns the gradient with respect to `h_prev`.
fn gru_backward_step(
    s: &GruStep,
    x: &[f64],
    dh: &[f64],
    mask: Option<&[f64]>,
    p: &GruLayerParams,
    g: &mut GruLayerParams,
    dx: &mut [f64],
) -> Vec<f64> {
    let n = p.units();
    let mut dh_prev: Vec<f64> = (0..n).map(|j| dh[j] * (1.0 - s.z[j])).collect();
    let da_h: Vec<f64> = (0..n)
        .map(|j| dh[j] * s.z[j] * (1.0 - s.hhat[j] * s.hhat[j]))
        .collect();
    let da_z: Vec<f64> = (0..n)
        .map(|j| dh[j] * (s.hhat[j] - s.h_prev[j]) * s.z[j] * (1.0 - s.z[j]))
        .collect();
    let rh: Vec<f64> = s.r.iter().zip(&s.hm).map(|(a, b)| a * b).collect();
    outer_acc(g.w.data_mut(), &da_h, x);
    outer_acc(g.u.data_mut(), &da_h, &rh);
    matvec_t_acc(dx, p.w.data(), &da_h);
    let mut drh = vec![0.0; n];
    matvec_t_acc(&mut drh, p.u.data(), &da_h);
    let mut dhm: Vec<f64> = (0..n).map(|j| drh[j] * s.r[j]).collect();
    let da_r: Vec<f64> = (0..n)
        .map(|j| drh[j] * s.hm[j] * s.r[j] * (1.0 - s.r[j]))
        .collect();

    outer_acc(g.w_z.data_mut(), &da_z, x);
    outer_acc(g.u_z.data_mut(), &da_z, &s.hm);
    matvec_t_acc(dx, p.w_z.data(), &da_z);
    matvec_t_acc(&mut dhm, p.u_z.data(), &da_z);

    outer_acc(g.w_r.data_mut(), &da_r, x);
    outer_acc(g.u_r.data_mut(), &da_r, &s.hm);
    matvec_t_acc(dx, p.w_r.data(), &da_r);
    matvec_t_acc(&mut dhm, p.u_r.data(), &da_r);

    let dhm = masked(&dhm, mask);
    for (a, b) in dh_prev.iter_mut().zip(dhm) {
        *a += b;
    }
    dh_prev
}

#[derive(Clone, Debug)]
pub struct LstmStep {
    c_prev: Vec<f64>,
    hm: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    chat: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn lstm_forward_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    mask: Option<&[f64]>,
    p: &LstmLayerParams,
) -> LstmStep {
    let n = p.units();
    let hm = masked(h_prev, mask);
    let pre = |w: &Tensor, u: &Tensor| {
        let mut a = vec![0.0; n];
        matvec_acc(&mut a, w.data(), x);
        matvec_acc(&mut a, u.data(), &hm);
        a
    };
    let ai = pre(&p.w_i, &p.u_i);
    let af = pre(&p.w_f, &p.u_f);
    let ac = pre(&p.w_c, &p.u_c);
    let ao = pre(&p.w_o, &p.u_o);
    let i: Vec<f64> = (0..n).map(|j| sigmoid(ai[j] + p.v_i.data()[j] * c_prev[j])).collect();
    let f: Vec<f64> = (0..n).map(|j| sigmoid(af[j] + p.v_f.data()[j] * c_prev[j])).collect();
    let chat: Vec<f64> = ac.into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..n).map(|j| f[j] * c_prev[j] + i[j] * chat[j]).collect();
    let o: Vec<f64> = (0..n).map(|j| sigmoid(ao[j] + p.v_o.data()[j] * c[j])).collect();
    let h = (0..n).map(|j| o[j] * c[j].tanh()).collect();
    LstmStep {
        c_prev: c_prev.to_vec(),
        hm,
        i,
        f,
        o,
        chat,
        c,
        h,
    }
}

/// Returns `(dh_prev, dc_prev)`.
#[allow(clippy::too_many_arguments)]
fn lstm_backward_step(
    s: &LstmStep,
    x: &[f64],
    dh: &[f64],
    dc_next: &[f64],
    mask: Option<&[f64]>,
    p: &LstmLayerParams,
    g: &mut LstmLayerParams,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = p.units();
    let (vi, vf, vo) = (p.v_i.data(), p.v_f.data(), p.v_o.data());
    let mut da_o = vec![0.0; n];
    let mut dc = vec![0.0; n];
    for j in 0..n {
        let tc = s.c[j].tanh();
        da_o[j] = dh[j] * tc * s.o[j] * (1.0 - s.o[j]);
        dc[j] = dc_next[j] + dh[j] * s.o[j] * (1.0 - tc * tc) + da_o[j] * vo[j];
    }
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_c = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for j in 0..n {
        da_i[j] = dc[j] * s.chat[j] * s.i[j] * (1.0 - s.i[j]);
        da_f[j] = dc[j] * s.c_prev[j] * s.f[j] * (1.0 - s.f[j]);
        da_c[j] = dc[j] * s.i[j] * (1.0 - s.chat[j] * s.chat[j]);
        dc_prev[j] = dc[j] * s.f[j] + da_i[j] * vi[j] + da_f[j] * vf[j];
        g.v_o.data_mut()[j] += da_o[j] * s.c[j];
        g.v_i.data_mut()[j] += da_i[j] * s.c_prev[j];
        g.v_f.data_mut()[j] += da_f[j] * s.c_prev[j];
    }
    let mut dhm = vec![0.0; n];
    for (da, w, u, gw, gu) in [
        (&da_i, &p.w_i, &p.u_i, &mut g.w_i, &mut g.u_i),
        (&da_f, &p.w_f, &p.u_f, &mut g.w_f, &mut g.u_f),
        (&da_c, &p.w_c, &p.u_c, &mut g.w_c, &mut g.u_c),
        (&da_o, &p.w_o, &p.u_o, &mut g.w_o, &mut g.u_o),
    ] {
        outer_acc(gw.data_mut(), da, x);
        outer_acc(gu.data_mut(), da, &s.hm);
        matvec_t_acc(dx, w.data(), da);
        matvec_t_acc(&mut dhm, u.data(), da);
    }
    (masked(&dhm, mask), dc_prev)
}

/// One recurrent layer of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum RecurrentLayer {
    Gru(GruLayerParams),
    Lstm(LstmLayerParams),
}

/// Per-sequence forward state kept for backpropagation.
#[derive(Clone, Debug)]
pub enum SequenceCache {
    Gru(Vec<GruStep>),
    Lstm(Vec<LstmStep>),
}

impl RecurrentLayer {
    pub fn new(kind: RecurrentKind, d: usize, n: usize, rng: &mut impl Rng) -> Self {
        match kind {
            RecurrentKind::Gru => RecurrentLayer::Gru(GruLayerParams::new(d, n, rng)),
            RecurrentKind::Lstm => RecurrentLayer::Lstm(LstmLayerParams::new(d, n, rng)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            RecurrentLayer::Gru(p) => RecurrentLayer::Gru(GruLayerParams::zeros(p.input_size(), p.units())),
            RecurrentLayer::Lstm(p) => {
                RecurrentLayer::Lstm(LstmLayerParams::zeros(p.input_size(), p.units()))
            }
        }
    }

    pub fn kind(&self) -> RecurrentKind {
        match self {
            RecurrentLayer::Gru(_) => RecurrentKind::Gru,
            RecurrentLayer::Lstm(_) => RecurrentKind::Lstm,
        }
    }

    pub fn units(&self) -> usize {
        match self {
            RecurrentLayer::Gru(p) => p.units(),
            RecurrentLayer::Lstm(p) => p.units(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            RecurrentLayer::Gru(p) => p.input_size(),
            RecurrentLayer::Lstm(p) => p.input_size(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            RecurrentLayer::Gru(p) => p.tensors(),
            RecurrentLayer::Lstm(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            RecurrentLayer::Gru(p) => p.tensors_mut(),
            RecurrentLayer::Lstm(p) => p.tensors_mut(),
        }
    }

    /// Runs one sequence `xs` (`steps * d` values, time-major) from a zero
    /// state. Returns the hidden states (`steps * n`) and the cache.
    pub fn forward_sequence(
        &self,
        xs: &[f64],
        steps: usize,
        mask: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SequenceCache)> {
        let (d, n) = (self.input_size(), self.units());
        if xs.len() != steps * d || mask.is_some_and(|m| m.len() != n) {
            return Err(Error::Shape(format!(
                "recurrent layer expects {steps}x{d} inputs, got {}",
                xs.len()
            )));
        }
        let mut hs = Vec::with_capacity(steps * n);
        let mut h = vec![0.0; n];
        match self {
            RecurrentLayer::Gru(p) => {
                let mut cache = Vec::with_capacity(steps);
                for x in xs.chunks_exact(d) {
                    let s = gru_forward_step(x, &h, mask, p);
                    h.clone_from(&s.h);
                    hs.extend_from_slice(&h);
                    cache.push(s);
                }
                Ok((hs, SequenceCache::Gru(cache)))
            }
            RecurrentLayer::Lstm(p) => {
                let mut c = vec![0.0; n];
                let mut cache = Vec::with_capacity(steps);
                for x in xs.chunks_exact(d) {
                    let s = lstm_forward_step(x, &h, &c, mask, p);
                    h.clone_from(&s.h);
                    c.clone_from(&s.c);
                    hs.extend_from_slice(&h);
                    cache.push(s);
                }
                Ok((hs, SequenceCache::Lstm(cache)))
            }
        }
    }

    /// Backpropagation through time for one sequence. `dhs` holds the loss
    /// gradient with respect to every emitted hidden state. Parameter
    /// gradients accumulate into `grads` (same variant); returns `dxs`.
    pub fn backward_sequence(
        &self,
        xs: &[f64],
        cache: &SequenceCache,
        dhs: &[f64],
        mask: Option<&[f64]>,
        grads: &mut RecurrentLayer,
    ) -> Result<Vec<f64>> {
        let (d, n) = (self.input_size(), self.units());
        let steps = xs.len() / d;
        if dhs.len() != steps * n {
            return Err(Error::Shape("recurrent backward: gradient length".into()));
        }
        let mut dxs = vec![0.0; xs.len()];
        let mut dh_next = vec![0.0; n];
        match (self, cache, grads) {
            (RecurrentLayer::Gru(p), SequenceCache::Gru(steps_cache), RecurrentLayer::Gru(g)) => {
                for t in (0..steps).rev() {
                    let dh: Vec<f64> = (0..n).map(|j| dhs[t * n + j] + dh_next[j]).collect();
                    dh_next = gru_backward_step(
                        &steps_cache[t],
                        &xs[t * d..(t + 1) * d],
                        &dh,
                        mask,
                        p,
                        g,
                        &mut dxs[t * d..(t + 1) * d],
                    );
                }
            }
            (RecurrentLayer::Lstm(p), SequenceCache::Lstm(steps_cache), RecurrentLayer::Lstm(g)) => {
                let mut dc_next = vec![0.0; n];
                for t in (0..steps).rev() {
                    let dh: Vec<f64> = (0..n).map(|j| dhs[t * n + j] + dh_next[j]).collect();
                    let (a, b) = lstm_backward_step(
                        &steps_cache[t],
                        &xs[t * d..(t + 1) * d],
                        &dh,
                        &dc_next,
                        mask,
                        p,
                        g,
                        &mut dxs[t * d..(t + 1) * d],
                    );
                    dh_next = a;
                    dc_next = b;
                }
            }
            _ => return Err(Error::Shape("recurrent backward: mismatched layer kinds".into())),
        }
        Ok(dxs)
    }
}
