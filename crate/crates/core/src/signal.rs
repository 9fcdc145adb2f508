//! Band filtering, re-referencing, standardization and spectral estimates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frequency bands used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSpec {
    Theta,
    Alpha,
    Beta,
    Gamma,
    All,
}

impl BandSpec {
    pub const EVERY: [BandSpec; 5] = [
        BandSpec::Theta,
        BandSpec::Alpha,
        BandSpec::Beta,
        BandSpec::Gamma,
        BandSpec::All,
    ];

    /// `(low_hz, high_hz)` edges.
    pub fn edges(self) -> (f64, f64) {
        match self {
            BandSpec::Theta => (4.0, 8.0),
            BandSpec::Alpha => (8.0, 15.0),
            BandSpec::Beta => (15.0, 32.0),
            BandSpec::Gamma => (32.0, 40.0),
            BandSpec::All => (4.0, 40.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BandSpec::Theta => "theta",
            BandSpec::Alpha => "alpha",
            BandSpec::Beta => "beta",
            BandSpec::Gamma => "gamma",
            BandSpec::All => "all",
        }
    }
}

impl fmt::Display for BandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BandSpec::EVERY
            .into_iter()
            .find(|b| b.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown band `{s}`")))
    }
}

/// Direct-form II transposed second-order section with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Pole radii of the section.
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            let r = self.a2.sqrt();
            [r, r]
        } else {
            let s = disc.sqrt();
            [((-self.a1 + s) / 2.0).abs(), ((-self.a1 - s) / 2.0).abs()]
        }
    }

    /// Internal state reached after an infinitely long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let g = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        [g - self.b0, self.b2 - self.a2 * g]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// A Butterworth band-pass as a cascade of second-order sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCoeffs {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub band: BandSpec,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl FilterCoeffs {
    /// Complex frequency response of one pass of the cascade at `hz`.
    pub fn response(&self, hz: f64) -> Complex64 {
        let w = 2.0 * PI * hz / self.fs;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn magnitude(&self, hz: f64) -> f64 {
        self.response(hz).norm()
    }

    pub fn magnitude_db(&self, hz: f64) -> f64 {
        20.0 * self.magnitude(hz).log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_magnitudes().iter().all(|&r| r < 1.0))
    }
}

/// Designs an order-`order` Butterworth band-pass (bilinear transform with
/// pre-warped edges), returned as `order` second-order sections.
pub fn design_butterworth_bandpass(order: usize, band: BandSpec, fs: f64) -> Result<FilterCoeffs> {
    let (lo, hi) = band.edges();
    design_bandpass_edges(order, lo, hi, fs).map(|mut f| {
        f.band = band;
        f
    })
}

/// Same as [`design_butterworth_bandpass`] for arbitrary edges.
pub fn design_bandpass_edges(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<FilterCoeffs> {
    if !(2..=8).contains(&order) {
        return Err(Error::Argument(format!("order {order} outside [2, 8]")));
    }
    if !(fs > 0.0 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::Argument(format!(
            "band {low_hz}-{high_hz} Hz invalid for fs {fs} Hz"
        )));
    }
    let k = 2.0 * fs;
    let w_lo = k * (PI * low_hz / fs).tan();
    let w_hi = k * (PI * high_hz / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    // analog band-pass poles from the low-pass prototype, mapped to z
    let mut poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let disc = (p * p - 4.0 * w0_sq).sqrt();
        for s in [(p + disc) / 2.0, (p - disc) / 2.0] {
            poles.push((k + s) / (k - s));
        }
    }

    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    if upper.len() * 2 + real.len() != 2 * order || !real.len().is_multiple_of(2) {
        return Err(Error::Design("pole set is not conjugate-symmetric".into()));
    }
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);

    let mut denominators: Vec<(f64, f64)> = upper
        .iter()
        .map(|p| (-2.0 * p.re, p.norm_sqr()))
        .collect();
    for pair in real.chunks(2) {
        denominators.push((-(pair[0] + pair[1]), pair[0] * pair[1]));
    }

    let w_center = 2.0 * ((w0_sq.sqrt()) / k).atan();
    let mut sections = Vec::with_capacity(order);
    for (a1, a2) in denominators {
        let mut s = Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 };
        let g = s.response(w_center).norm();
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::Design("degenerate section gain".into()));
        }
        s.b0 /= g;
        s.b2 /= g;
        sections.push(s);
    }

    let coeffs = FilterCoeffs {
        sections,
        order,
        band: BandSpec::All,
        low_hz,
        high_hz,
        fs,
    };
    if !coeffs.is_stable() {
        return Err(Error::Design(format!(
            "unstable design for order {order}, {low_hz}-{high_hz} Hz"
        )));
    }
    Ok(coeffs)
}

fn sos_filter_inplace(sections: &[Biquad], x: &mut [f64], initial: Option<f64>) {
    let mut scale = initial.unwrap_or(0.0);
    for s in sections {
        let [mut z1, mut z2] = if initial.is_some() {
            let st = s.step_state();
            [st[0] * scale, st[1] * scale]
        } else {
            [0.0, 0.0]
        };
        scale *= s.dc_gain();
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b0 * input + z1;
            z1 = s.b1 * input - s.a1 * y + z2;
            z2 = s.b2 * input - s.a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase (forward-backward) filtering of a single channel, with odd
/// extension at both ends and steady-state initial conditions.
pub fn filtfilt(coeffs: &FilterCoeffs, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let pad = (3 * (2 * coeffs.sections.len() + 1)).min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let first = ext[0];
    sos_filter_inplace(&coeffs.sections, &mut ext, Some(first));
    ext.reverse();
    let first = ext[0];
    sos_filter_inplace(&coeffs.sections, &mut ext, Some(first));
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Applies [`filtfilt`] to every channel of a `[C, T]` signal.
pub fn filter_signal(x: &Tensor, coeffs: &FilterCoeffs) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("expected [C, T], got {:?}", x.shape())));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    if t <= 6 * coeffs.order {
        return Err(Error::Argument(format!(
            "signal of {t} samples too short for order {} (need > {})",
            coeffs.order,
            6 * coeffs.order
        )));
    }
    let mut out = Vec::with_capacity(c * t);
    for ch in 0..c {
        out.extend(filtfilt(coeffs, x.outer(ch)));
    }
    Tensor::from_vec(&[c, t], out)
}

/// Subtracts the across-channel mean at every sample of a `[C, T]` signal.
pub fn common_average_reference(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] < 2 {
        return Err(Error::Shape(format!(
            "common average reference needs [C >= 2, T], got {:?}",
            x.shape()
        )));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; t];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(x.outer(ch)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut out = x.clone();
    for ch in 0..c {
        for (o, m) in out.outer_mut(ch).iter_mut().zip(&mean) {
            *o -= m;
        }
    }
    Ok(out)
}

/// Per-feature z-scoring with statistics from the training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on a `[rows, features]` matrix using the unbiased (n - 1) deviation.
    pub fn fit(train: &Tensor) -> Result<Self> {
        if train.rank() != 2 {
            return Err(Error::Shape(format!("expected [rows, features], got {:?}", train.shape())));
        }
        let (n, f) = (train.shape()[0], train.shape()[1]);
        if n < 2 {
            return Err(Error::Fit(format!("need at least 2 training rows, got {n}")));
        }
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(train.outer(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(train.outer(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(f);
        for (j, s) in var.iter().enumerate() {
            let sd = (s / (n - 1) as f64).sqrt();
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Fit(format!("feature {j} has zero variance")));
            }
            std.push(sd);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fit on {} features, got {:?}",
                self.mean.len(),
                x.shape()
            )));
        }
        let data = (0..x.shape()[0]).flat_map(|r| self.apply_row(x.outer(r))).collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hamming => (0..n)
                .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    pub fs: f64,
    pub nfft: usize,
    pub seg_len: usize,
    pub overlap: usize,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            fs: 128.0,
            nfft: 128,
            seg_len: 128,
            overlap: 64,
            window: Window::Hamming,
        }
    }
}

impl WelchParams {
    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.fs / self.nfft as f64
    }

    pub fn n_segments(&self, len: usize) -> usize {
        if len < self.seg_len {
            0
        } else {
            (len - self.seg_len) / (self.seg_len - self.overlap) + 1
        }
    }
}

/// Welch estimator with a cached FFT plan and window.
pub struct Welch {
    params: WelchParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    density_scale: f64,
}

impl fmt::Debug for Welch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Welch").field("params", &self.params).finish()
    }
}

impl Welch {
    pub fn new(params: WelchParams) -> Result<Self> {
        if params.seg_len == 0 || params.overlap >= params.seg_len || params.nfft < params.seg_len {
            return Err(Error::Argument(format!("invalid Welch parameters {params:?}")));
        }
        let window = params.window.coefficients(params.seg_len);
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(params.nfft);
        Ok(Welch {
            params,
            window,
            fft,
            density_scale: 1.0 / (params.fs * energy),
        })
    }

    pub fn params(&self) -> &WelchParams {
        &self.params
    }

    /// One-sided spectra (`n_bins` each) of every windowed segment.
    pub fn segment_spectra(&self, x: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let p = &self.params;
        if x.len() < p.seg_len {
            return Err(Error::Argument(format!(
                "signal of {} samples shorter than segment length {}",
                x.len(),
                p.seg_len
            )));
        }
        let step = p.seg_len - p.overlap;
        let mut out = Vec::with_capacity(p.n_segments(x.len()));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.nfft];
        for s in 0..p.n_segments(x.len()) {
            let seg = &x[s * step..s * step + p.seg_len];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < p.seg_len {
                    Complex64::new(seg[i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            out.push(buf[..p.n_bins()].to_vec());
        }
        Ok(out)
    }

    /// One-sided power spectral density from precomputed segment spectra.
    pub fn psd_from_spectra(&self, spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let nb = self.params.n_bins();
        let mut psd = vec![0.0; nb];
        for seg in spectra {
            for (p, c) in psd.iter_mut().zip(seg) {
                *p += c.norm_sqr();
            }
        }
        let norm = self.density_scale / spectra.len() as f64;
        let even = self.params.nfft.is_multiple_of(2);
        for (k, p) in psd.iter_mut().enumerate() {
            *p *= norm;
            let nyquist = even && k == nb - 1;
            if k != 0 && !nyquist {
                *p *= 2.0;
            }
        }
        psd
    }

    pub fn psd(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.psd_from_spectra(&self.segment_spectra(x)?))
    }

    /// Magnitude-squared coherence from two channels' segment spectra.
    pub fn coherence_from_spectra(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::Shape("segment counts differ".into()));
        }
        if a.len() < 2 {
            return Err(Error::Argument(
                "coherence needs at least 2 segments (it is identically 1 otherwise)".into(),
            ));
        }
        let nb = a[0].len();
        let mut sxy = vec![Complex64::new(0.0, 0.0); nb];
        let mut sxx = vec![0.0; nb];
        let mut syy = vec![0.0; nb];
        for (sa, sb) in a.iter().zip(b) {
            for k in 0..nb {
                sxy[k] += sa[k] * sb[k].conj();
                sxx[k] += sa[k].norm_sqr();
                syy[k] += sb[k].norm_sqr();
            }
        }
        Ok((0..nb)
            .map(|k| {
                let denom = sxx[k] * syy[k];
                if denom > 0.0 {
                    sxy[k].norm_sqr() / denom
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn coherence(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("lengths {} and {} differ", x.len(), y.len())));
        }
        Self::coherence_from_spectra(&self.segment_spectra(x)?, &self.segment_spectra(y)?)
    }
}

/// Welch power spectral density (one-sided, density-scaled).
pub fn welch_psd(x: &[f64], params: &WelchParams) -> Result<Vec<f64>> {
    Welch::new(*params)?.psd(x)
}

/// Magnitude-squared coherence `|Sxy|^2 / (Sxx Syy)` per bin.
pub fn spectral_coherence(x: &[f64], y: &[f64], params: &WelchParams) -> Result<Vec<f64>> {
    Welch::new(*params)?.coherence(x, y)
}
