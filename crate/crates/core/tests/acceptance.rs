//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and a
//! summary line. Failures only change the exit status when
//! `NEUROBIT_ACCEPTANCE_STRICT=1`, so that a failing criterion does not stop
//! `cargo test` from running the remaining test targets.
//!
//! Numeric arguments select a subset, e.g. `cargo test --test acceptance -- 2 7`.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::{numeric_grad, probe, rel_error};
use neurobit::baselines::{fit_mahalanobis, fit_svm_with_c, FeatureKind, FeatureVector};
use neurobit::data_io::{
    generate_synthetic_dataset, select_trials_and_subsample, AffectiveState, RawRecording, StateSelection, Subsample,
    DEAP_TRIALS, N_CHANNELS, TRIAL_SAMPLES,
};
use neurobit::harness::{
    load_dataset, make_folds, prepare_subsamples, run_experiment, DataSource, ExperimentConfig, FoldPlan, Split,
};
use neurobit::mesh::{build_standard_layout, electrode_set, encode_subsample};
use neurobit::neural::{
    conv2d_forward, gru_step, lstm_step, param_count, recurrent_param_count, softmax_cross_entropy, BatchNorm,
    Conv2d, Dense, GruLayerParams, LstmLayerParams, Network, NetworkConfig, RecurrentKind, RecurrentLayer,
    SequenceSet, Trainer,
};
use neurobit::signal::{design_butterworth_bandpass, filtfilt, BandSpec, Welch, WelchParams, Window};
use neurobit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

const FS: f64 = 128.0;

struct Outcome {
    /// `None` marks a skipped criterion.
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass: Some(pass),
            detail: detail.into(),
        }
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "recurrent cell analytics", recurrent_analytics),
        (4, "parameter accounting", parameter_accounting),
        (5, "synthetic end-to-end", synthetic_end_to_end),
        (6, "GRU vs LSTM speed", gru_vs_lstm_speed),
        (7, "filter suite", filter_suite),
        (8, "fold-plan suite", fold_plan_suite),
        (9, "baseline sanity", baseline_sanity),
        (10, "DEAP experiment I (optional)", deap_experiment_i),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        let status = match outcome.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!(
            "criterion {id:>2} [{name}]: {status} ({}; {:.1}s)",
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance summary: {failed} criterion(s) failed");
    let strict = std::env::var("NEUROBIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn with_data(t: &Tensor, v: &[f64]) -> Tensor {
    Tensor::from_vec(t.shape(), v.to_vec()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------------ criterion 1

const GRAD_H: f64 = 1e-5;

fn grad_conv(rng: &mut ChaCha8Rng) -> f64 {
    let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=9), rng.gen_range(1..=9));
    let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let conv = Conv2d::new(ci, co, rng);
    let x = rand_tensor(&[n, h, w, ci], 1.0, rng);
    let p = rand_tensor(&[n, h, w, co], 1.0, rng);
    let mut gk = Tensor::zeros(conv.kernel.shape());
    let dx = conv.backward(&x, &p, &mut gk, true).unwrap().unwrap();
    let nx = numeric_grad(x.data(), GRAD_H, |v| probe(&conv.forward(&with_data(&x, v)).unwrap(), &p));
    let nk = numeric_grad(conv.kernel.data(), GRAD_H, |v| {
        let c = Conv2d {
            kernel: with_data(&conv.kernel, v),
        };
        probe(&c.forward(&x).unwrap(), &p)
    });
    rel_error(dx.data(), &nx).max(rel_error(gk.data(), &nk))
}

fn grad_batchnorm(rng: &mut ChaCha8Rng) -> f64 {
    // At least four values per channel, so normalization is not degenerate.
    let (n, h, w, c) = (
        rng.gen_range(2..=3),
        rng.gen_range(2..=9),
        rng.gen_range(2..=9),
        rng.gen_range(1..=4),
    );
    let mut bn = BatchNorm::new(c);
    bn.gamma = rand_tensor(&[c], 2.0, rng);
    bn.beta = rand_tensor(&[c], 1.0, rng);
    let x = rand_tensor(&[n, h, w, c], 2.0, rng);
    let p = rand_tensor(&[n, h, w, c], 1.0, rng);
    let (_, cache) = bn.forward_train(&x).unwrap();
    let (dx, dg, db) = bn.backward(&cache, &p).unwrap();
    let nx = numeric_grad(x.data(), GRAD_H, |v| probe(&bn.forward_train(&with_data(&x, v)).unwrap().0, &p));
    let ng = numeric_grad(bn.gamma.data(), GRAD_H, |v| {
        let mut b = bn.clone();
        b.gamma = with_data(&bn.gamma, v);
        probe(&b.forward_train(&x).unwrap().0, &p)
    });
    let nb = numeric_grad(bn.beta.data(), GRAD_H, |v| {
        let mut b = bn.clone();
        b.beta = with_data(&bn.beta, v);
        probe(&b.forward_train(&x).unwrap().0, &p)
    });
    rel_error(dx.data(), &nx)
        .max(rel_error(dg.data(), &ng))
        .max(rel_error(db.data(), &nb))
}

fn grad_dense(rng: &mut ChaCha8Rng) -> f64 {
    let (rows, di, dout) = (rng.gen_range(1..=4), rng.gen_range(1..=8), rng.gen_range(1..=8));
    let mut dense = Dense::new(di, dout, rng);
    dense.bias = rand_tensor(&[dout], 1.0, rng);
    let x = rand_tensor(&[rows, di], 1.0, rng);
    let p = rand_tensor(&[rows, dout], 1.0, rng);
    let (dx, dw, db) = dense.backward(&x, &p).unwrap();
    let nx = numeric_grad(x.data(), GRAD_H, |v| probe(&dense.forward(&with_data(&x, v)).unwrap(), &p));
    let nw = numeric_grad(dense.weight.data(), GRAD_H, |v| {
        let mut d = dense.clone();
        d.weight = with_data(&dense.weight, v);
        probe(&d.forward(&x).unwrap(), &p)
    });
    let nb = numeric_grad(dense.bias.data(), GRAD_H, |v| {
        let mut d = dense.clone();
        d.bias = with_data(&dense.bias, v);
        probe(&d.forward(&x).unwrap(), &p)
    });
    rel_error(dx.data(), &nx)
        .max(rel_error(dw.data(), &nw))
        .max(rel_error(db.data(), &nb))
}

fn grad_recurrent(kind: RecurrentKind, rng: &mut ChaCha8Rng) -> f64 {
    let (d, n, steps) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(2..=3));
    let mut layer = RecurrentLayer::new(kind, d, n, rng);
    if let RecurrentLayer::Lstm(p) = &mut layer {
        p.v_i = rand_tensor(&[n], 0.5, rng);
        p.v_o = rand_tensor(&[n], 0.5, rng);
        p.v_f = rand_tensor(&[n], 0.5, rng);
    }
    let xs = rand_tensor(&[steps * d], 1.0, rng);
    let p = rand_tensor(&[steps * n], 1.0, rng);
    let mask_v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.7) { 1.0 / 0.7 } else { 0.0 })
        .collect();
    let mask = rng.gen_bool(0.5).then_some(mask_v.as_slice());
    let (_, cache) = layer.forward_sequence(xs.data(), steps, mask).unwrap();
    let mut grads = layer.zeros_like();
    let dxs = layer.backward_sequence(xs.data(), &cache, p.data(), mask, &mut grads).unwrap();
    let loss = |l: &RecurrentLayer, x: &[f64]| -> f64 {
        let (hs, _) = l.forward_sequence(x, steps, mask).unwrap();
        hs.iter().zip(p.data()).map(|(a, b)| a * b).sum()
    };
    let nx = numeric_grad(xs.data(), GRAD_H, |v| loss(&layer, v));
    let flat: Vec<f64> = layer.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let np = numeric_grad(&flat, GRAD_H, |v| {
        let mut l = layer.clone();
        let mut at = 0;
        for t in l.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&v[at..at + len]);
            at += len;
        }
        loss(&l, xs.data())
    });
    rel_error(&dxs, &nx).max(rel_error(&analytic, &np))
}

fn grad_softmax_ce(rng: &mut ChaCha8Rng) -> f64 {
    let (rows, classes) = (rng.gen_range(1..=4), rng.gen_range(2..=8));
    let logits = rand_tensor(&[rows, classes], 3.0, rng);
    let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    let (_, _, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let n = numeric_grad(logits.data(), GRAD_H, |v| {
        softmax_cross_entropy(&with_data(&logits, v), &labels).unwrap().0
    });
    rel_error(g.data(), &n)
}

fn gradient_suite() -> Outcome {
    const CASES: u64 = 100;
    const NAMES: [&str; 6] = ["conv2d", "batchnorm", "dense", "gru", "lstm", "softmax-ce"];
    let start = Instant::now();
    let mut worst = [0.0f64; 6];
    let mut failures = Vec::new();
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + case);
        let which = (case % 6) as usize;
        let err = match which {
            0 => grad_conv(&mut rng),
            1 => grad_batchnorm(&mut rng),
            2 => grad_dense(&mut rng),
            3 => grad_recurrent(RecurrentKind::Gru, &mut rng),
            4 => grad_recurrent(RecurrentKind::Lstm, &mut rng),
            _ => grad_softmax_ce(&mut rng),
        };
        worst[which] = worst[which].max(err);
        if !(err < 1e-5) {
            failures.push(format!("case {case} {} {err:.2e}", NAMES[which]));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let summary: Vec<String> = NAMES.iter().zip(worst).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::check(
        failures.is_empty() && secs < 60.0,
        format!(
            "{CASES} cases, worst rel err: {}; {} failures {:?}; {secs:.1}s of 60s",
            summary.join(", "),
            failures.len(),
            failures
        ),
    )
}

// ------------------------------------------------------------ criterion 2

fn naive_conv(x: &Tensor, k: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (n, h, w, ci) = (s[0], s[1], s[2], s[3]);
    let co = k.shape()[3];
    let (xd, kd) = (x.data(), k.data());
    let mut y = vec![0.0; n * h * w * co];
    for f in 0..n {
        for i in 0..h as isize {
            for j in 0..w as isize {
                for o in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (yy, xx) = (i + ky - 1, j + kx - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                let xv = xd[((f * h + yy as usize) * w + xx as usize) * ci + c];
                                let kv = kd[((ky as usize * 3 + kx as usize) * ci + c) * co + o];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((f * h + i as usize) * w + j as usize) * co + o] = acc;
                }
            }
        }
    }
    y
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

// Row `j` of an `[n, d]` matrix dotted with `v`, one scalar at a time.
fn row_dot(m: &Tensor, j: usize, v: &[f64]) -> f64 {
    let d = m.shape()[1];
    let mut acc = 0.0;
    for (q, vq) in v.iter().enumerate() {
        acc += m.data()[j * d + q] * vq;
    }
    acc
}

fn scalar_gru(x: &[f64], h: &[f64], p: &GruLayerParams) -> Vec<f64> {
    let n = h.len();
    let mut out = vec![0.0; n];
    let r: Vec<f64> = (0..n).map(|j| sig(row_dot(&p.w_r, j, x) + row_dot(&p.u_r, j, h))).collect();
    let rh: Vec<f64> = (0..n).map(|j| r[j] * h[j]).collect();
    for j in 0..n {
        let z = sig(row_dot(&p.w_z, j, x) + row_dot(&p.u_z, j, h));
        let cand = (row_dot(&p.w, j, x) + row_dot(&p.u, j, &rh)).tanh();
        out[j] = (1.0 - z) * h[j] + z * cand;
    }
    out
}

fn scalar_lstm(x: &[f64], h: &[f64], c: &[f64], p: &LstmLayerParams) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let (mut h_out, mut c_out) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let i = sig(row_dot(&p.w_i, j, x) + row_dot(&p.u_i, j, h) + p.v_i.data()[j] * c[j]);
        let f = sig(row_dot(&p.w_f, j, x) + row_dot(&p.u_f, j, h) + p.v_f.data()[j] * c[j]);
        let cand = (row_dot(&p.w_c, j, x) + row_dot(&p.u_c, j, h)).tanh();
        c_out[j] = f * c[j] + i * cand;
        let o = sig(row_dot(&p.w_o, j, x) + row_dot(&p.u_o, j, h) + p.v_o.data()[j] * c_out[j]);
        h_out[j] = o * c_out[j].tanh();
    }
    (h_out, c_out)
}

// Averaged one-sided periodograms with an explicit DFT per segment.
fn direct_welch(x: &[f64]) -> Vec<f64> {
    let (seg, step, nfft) = (128usize, 64usize, 128usize);
    let win: Vec<f64> = (0..seg)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / seg as f64).cos())
        .collect();
    let energy: f64 = win.iter().map(|w| w * w).sum();
    let n_seg = (x.len() - seg) / step + 1;
    let mut psd = vec![0.0; nfft / 2 + 1];
    for s in 0..n_seg {
        for (k, p) in psd.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..seg {
                let phase = 2.0 * PI * ((k * t) % nfft) as f64 / nfft as f64;
                let v = x[s * step + t] * win[t];
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            let one_sided = if k == 0 || k == nfft / 2 { 1.0 } else { 2.0 };
            *p += one_sided * (re * re + im * im) / (FS * energy);
        }
    }
    psd.iter().map(|p| p / n_seg as f64).collect()
}

fn inv2(m: [f64; 4]) -> [f64; 4] {
    let det = m[0] * m[3] - m[1] * m[2];
    [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]
}

// Hand-computed fused Mahalanobis scores for two 2-D elements.
fn hand_mahalanobis(train: &[(usize, [[f64; 2]; 2])], probe_x: [[f64; 2]; 2], classes: &[usize]) -> Vec<f64> {
    let mut scores = vec![0.0; classes.len()];
    for e in 0..2 {
        let mut pooled = [0.0; 4];
        let mut means = Vec::new();
        for &cls in classes {
            let pts: Vec<[f64; 2]> = train.iter().filter(|(c, _)| *c == cls).map(|(_, v)| v[e]).collect();
            let m = pts.len() as f64;
            let mu = [pts.iter().map(|p| p[0]).sum::<f64>() / m, pts.iter().map(|p| p[1]).sum::<f64>() / m];
            let mut cov = [0.0; 4];
            for p in &pts {
                let d = [p[0] - mu[0], p[1] - mu[1]];
                cov[0] += d[0] * d[0] / (m - 1.0);
                cov[1] += d[0] * d[1] / (m - 1.0);
                cov[2] += d[1] * d[0] / (m - 1.0);
                cov[3] += d[1] * d[1] / (m - 1.0);
            }
            for q in 0..4 {
                pooled[q] += cov[q] / classes.len() as f64;
            }
            means.push(mu);
        }
        let ridge = 1e-6 * (pooled[0] + pooled[3]) / 2.0;
        let inv = inv2([pooled[0] + ridge, pooled[1], pooled[2], pooled[3] + ridge]);
        for (s, mu) in scores.iter_mut().zip(&means) {
            let d = [probe_x[e][0] - mu[0], probe_x[e][1] - mu[1]];
            *s += d[0] * (inv[0] * d[0] + inv[1] * d[1]) + d[1] * (inv[2] * d[0] + inv[3] * d[1]);
        }
    }
    scores
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut notes = Vec::new();
    let mut ok = true;

    // Dense random frames plus a mesh-like frame with mostly empty cells.
    let mut conv_err = 0.0f64;
    for &(n, h, w, ci, co, sparse) in &[
        (2, 9, 9, 4, 3, false),
        (1, 5, 7, 2, 5, false),
        (3, 9, 9, 128, 16, true),
        (2, 9, 9, 16, 8, false),
    ] {
        let conv = Conv2d::new(ci, co, &mut rng);
        let mut x = rand_tensor(&[n, h, w, ci], 1.0, &mut rng);
        if sparse {
            for (cell, chunk) in x.data_mut().chunks_exact_mut(ci).enumerate() {
                if cell % 7 != 3 {
                    chunk.fill(0.0);
                }
            }
        }
        let want = naive_conv(&x, &conv.kernel);
        conv_err = conv_err.max(max_abs_diff(conv.forward(&x).unwrap().data(), &want));
        let single = Tensor::from_vec(&[h, w, ci], x.data()[..h * w * ci].to_vec()).unwrap();
        let got = conv2d_forward(&single, &conv.kernel).unwrap();
        conv_err = conv_err.max(max_abs_diff(got.data(), &want[..h * w * co]));
    }
    ok &= conv_err <= 1e-12;
    notes.push(format!("conv {conv_err:.1e}"));

    let mut rec_err = 0.0f64;
    for _ in 0..20 {
        let (d, n) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let gp = GruLayerParams::new(d, n, &mut rng);
        let mut lp = LstmLayerParams::new(d, n, &mut rng);
        lp.v_i = rand_tensor(&[n], 0.5, &mut rng);
        lp.v_o = rand_tensor(&[n], 0.5, &mut rng);
        lp.v_f = rand_tensor(&[n], 0.5, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        rec_err = rec_err.max(max_abs_diff(&gru_step(&x, &h, &gp).unwrap(), &scalar_gru(&x, &h, &gp)));
        let (lh, lc) = lstm_step(&x, &h, &c, &lp).unwrap();
        let (sh, sc) = scalar_lstm(&x, &h, &c, &lp);
        rec_err = rec_err.max(max_abs_diff(&lh, &sh)).max(max_abs_diff(&lc, &sc));
    }
    ok &= rec_err <= 1e-12;
    notes.push(format!("gru/lstm step {rec_err:.1e}"));

    let welch = Welch::new(WelchParams {
        fs: FS,
        nfft: 128,
        seg_len: 128,
        overlap: 64,
        window: Window::Hamming,
    })
    .unwrap();
    let mut psd_err = 0.0f64;
    for _ in 0..4 {
        let x: Vec<f64> = (0..1280).map(|_| StandardNormal.sample(&mut rng)).collect();
        psd_err = psd_err.max(max_abs_diff(&welch.psd(&x).unwrap(), &direct_welch(&x)));
    }
    ok &= psd_err <= 1e-12;
    notes.push(format!("welch {psd_err:.1e}"));

    let classes = [0usize, 1];
    let train: Vec<(usize, [[f64; 2]; 2])> = vec![
        (0, [[1.0, 2.0], [0.5, -1.0]]),
        (0, [[2.0, 2.5], [1.5, -0.5]]),
        (0, [[1.5, 3.5], [0.0, 0.0]]),
        (0, [[0.5, 2.0], [1.0, -2.0]]),
        (1, [[4.0, 0.0], [-1.0, 2.0]]),
        (1, [[5.0, 1.0], [-2.0, 1.5]]),
        (1, [[4.5, -0.5], [-1.5, 3.0]]),
    ];
    let fv = |v: &[[f64; 2]; 2]| FeatureVector {
        kind: FeatureKind::Psd,
        elements: v.iter().map(|e| e.to_vec()).collect(),
    };
    let feats: Vec<FeatureVector> = train.iter().map(|(_, v)| fv(v)).collect();
    let labels: Vec<usize> = train.iter().map(|(c, _)| *c).collect();
    let model = fit_mahalanobis(&feats, &labels).unwrap();
    let mut maha_err = 0.0f64;
    for probe_x in [[[2.0, 1.0], [0.0, 1.0]], [[3.0, 3.0], [-1.0, -1.0]], [[0.0, 0.0], [0.0, 0.0]]] {
        let got = model.scores(&fv(&probe_x)).unwrap();
        let want = hand_mahalanobis(&train, probe_x, &classes);
        maha_err = maha_err.max(max_abs_diff(&got, &want));
    }
    ok &= maha_err <= 1e-10;
    notes.push(format!("mahalanobis {maha_err:.1e}"));

    Outcome::check(ok, format!("max abs diff: {}", notes.join(", ")))
}

// ------------------------------------------------------------ criterion 3

fn recurrent_analytics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut cases = 0;
    for _ in 0..50 {
        let (d, n) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let hg = gru_step(&x, &h, &GruLayerParams::zeros(d, n)).unwrap();
        let (hl, _) = lstm_step(&x, &h, &c, &LstmLayerParams::zeros(d, n)).unwrap();
        for j in 0..n {
            cases += 2;
            mismatches += usize::from(hg[j] != 0.5 * h[j]);
            mismatches += usize::from(hl[j] != 0.5 * (0.5 * c[j]).tanh());
        }
    }
    Outcome::check(mismatches == 0, format!("{cases} exact comparisons, {mismatches} mismatches"))
}

// ------------------------------------------------------------ criterion 4

fn closed_form_count(cfg: &NetworkConfig) -> usize {
    let mut total = 0;
    let mut c_in = 128;
    for &c in &cfg.conv_filters {
        total += 9 * c_in * c + 2 * c;
        c_in = c;
    }
    let td = cfg.td_dense_units;
    total += 81 * c_in * td + td;
    let mut d = td;
    for &n in &cfg.recurrent_units {
        total += match cfg.recurrent_kind {
            RecurrentKind::Gru => 3 * (d * n + n * n),
            RecurrentKind::Lstm => 4 * (d * n + n * n) + 3 * n,
        };
        d = n;
    }
    total + d * cfg.n_classes + cfg.n_classes
}

fn parameter_accounting() -> Outcome {
    let mut ok = true;
    let mut checked = 0;
    for kind in [RecurrentKind::Gru, RecurrentKind::Lstm] {
        for (conv, units) in [
            (vec![128], vec![16, 8]),
            (vec![128, 64], vec![32, 16]),
            (vec![128, 64, 32], vec![64, 32]),
            (vec![16, 8], vec![16, 8]),
        ] {
            let cfg = NetworkConfig::new(kind, &conv, &units, 32);
            let formula = param_count(&cfg);
            let built = Network::new(cfg.clone(), 0).unwrap().n_params();
            ok &= formula == closed_form_count(&cfg) && formula == built;
            checked += 1;
        }
    }
    let mut ratios = Vec::new();
    for (d, n) in [(2usize, 3usize), (32, 16), (16, 8)] {
        let gru = 3 * (d * n + n * n);
        let lstm = 4 * (d * n + n * n) + 3 * n;
        let counted = |kind| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            RecurrentLayer::new(kind, d, n, &mut rng).tensors().iter().map(|t| t.len()).sum::<usize>()
        };
        ok &= recurrent_param_count(RecurrentKind::Gru, d, &[n]) == gru
            && recurrent_param_count(RecurrentKind::Lstm, d, &[n]) == lstm
            && counted(RecurrentKind::Gru) == gru
            && counted(RecurrentKind::Lstm) == lstm;
        ratios.push(format!("({d},{n}) {gru}:{lstm}"));
    }
    Outcome::check(ok, format!("{checked} networks; GRU:LSTM {}", ratios.join(", ")))
}

// ------------------------------------------------------------ criteria 5 and 6

fn desk_config(kind: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/desk_synthetic_{kind}.json"));
    ExperimentConfig::load(&path).unwrap()
}

fn synthetic_end_to_end() -> Outcome {
    let cfg = desk_config("gru");
    let start = Instant::now();
    let data = load_dataset(&cfg.data, cfg.seeds.data).unwrap();
    let report = run_experiment(&cfg, &data).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let max_epochs = report.folds.iter().map(|f| f.epochs).max().unwrap_or(0);
    let pass = report.fold_crr.len() == 10 && report.mean_crr >= 95.0 && max_epochs <= 200 && secs <= 900.0;
    Outcome::check(
        pass,
        format!(
            "mean CRR {:.2} +/- {:.2} (need >= 95), folds {:?}, max epochs {max_epochs}, runtime {secs:.0}s of 900s",
            report.mean_crr,
            report.standard_error,
            report.fold_crr.iter().map(|c| format!("{c:.1}")).collect::<Vec<_>>()
        ),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

fn gru_vs_lstm_speed() -> Outcome {
    const REPS: usize = 10;
    const TARGET: f64 = 0.1;
    let cfg = desk_config("gru");
    let data = load_dataset(&cfg.data, cfg.seeds.data).unwrap();
    let (subs, labels, subjects, _) = prepare_subsamples(&cfg, &data).unwrap();
    let layout = build_standard_layout(&data.channel_names).unwrap();
    let active = electrode_set(cfg.electrodes);
    let meshes: Vec<Tensor> = subs.iter().map(|s| encode_subsample(s, &layout, &active).unwrap().tensor).collect();
    let pool = Arc::new(meshes);
    let plan = make_folds(&subs, cfg.seeds.folds).unwrap();
    let max_epochs = cfg.train.max_epochs;

    let mut wins = 0;
    let mut rows = Vec::new();
    for rep in 0..REPS {
        let (tr, _, _) = plan.folds[rep].partition(&subs);
        let set = SequenceSet::subset(Arc::clone(&pool), tr.clone(), tr.iter().map(|&i| labels[i]).collect()).unwrap();
        let mut trainers: Vec<Trainer> = [RecurrentKind::Gru, RecurrentKind::Lstm]
            .iter()
            .map(|&kind| {
                let mut spec = cfg.model.clone();
                spec.kind = match kind {
                    RecurrentKind::Gru => neurobit::harness::ModelKind::Gru,
                    RecurrentKind::Lstm => neurobit::harness::ModelKind::Lstm,
                };
                let net = Network::new(spec.network_config(subjects.len()).unwrap(), 100 + rep as u64).unwrap();
                Trainer::new(net, cfg.train.train_config(200 + rep as u64)).unwrap()
            })
            .collect();
        // Epochs alternate between the two models so that both see the same
        // machine load; each stops once its training loss reaches the target.
        let mut reached = [None::<usize>; 2];
        let mut times: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for epoch in 1..=max_epochs {
            for (m, trainer) in trainers.iter_mut().enumerate() {
                if reached[m].is_some() {
                    continue;
                }
                let loss = trainer.run_epoch(&set).unwrap();
                times[m].push(*trainer.history().epoch_seconds.last().unwrap());
                if loss <= TARGET {
                    reached[m] = Some(epoch);
                }
            }
            if reached.iter().all(Option::is_some) {
                break;
            }
        }
        let (tg, tl) = (median(&times[0]), median(&times[1]));
        let (eg, el) = (reached[0].unwrap_or(usize::MAX), reached[1].unwrap_or(usize::MAX));
        let win = tg <= tl && eg <= el;
        wins += usize::from(win);
        let show = |e: usize| if e == usize::MAX { "never".to_string() } else { e.to_string() };
        rows.push(format!(
            "rep {rep}: GRU {:.0}ms/{} ep, LSTM {:.0}ms/{} ep{}",
            tg * 1e3,
            show(eg),
            tl * 1e3,
            show(el),
            if win { "" } else { " (LSTM)" }
        ));
    }
    for r in &rows {
        println!("    {r}");
    }
    Outcome::check(wins >= 8, format!("GRU faster per epoch and to loss {TARGET} in {wins}/{REPS} repetitions (need 8)"))
}

// ------------------------------------------------------------ criterion 7

// Bilinear-warped analog Butterworth band-pass magnitude.
fn analytic_magnitude(order: usize, lo: f64, hi: f64, hz: f64) -> f64 {
    let warp = |f: f64| 2.0 * FS * (PI * f / FS).tan();
    let (wl, wh, w) = (warp(lo), warp(hi), warp(hz));
    let x = (w * w - wl * wh) / ((wh - wl) * w);
    1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
}

fn filter_suite() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut oracle_err = 0.0f64;
    for order in 2..=8 {
        for band in BandSpec::EVERY {
            let (lo, hi) = band.edges();
            let f = design_butterworth_bandpass(order, band, FS).unwrap();
            for hz in [lo, hi] {
                let db = f.magnitude_db(hz);
                if (db + 3.0103).abs() > 0.5 {
                    ok = false;
                    notes.push(format!("order {order} {} edge {hz} Hz at {db:.2} dB", band.name()));
                }
            }
            for k in 1..640 {
                let hz = k as f64 * 0.1;
                oracle_err = oracle_err.max((f.magnitude(hz) - analytic_magnitude(order, lo, hi, hz)).abs());
            }
        }
    }
    ok &= oracle_err < 1e-9;
    notes.push(format!("edges -3 dB +/- 0.5 for orders 2-8, |H - analytic| <= {oracle_err:.1e}"));

    // Stopband at twice the upper edge for the pipeline's order-4 design;
    // edges whose double lies beyond Nyquist are probed half a bin below it.
    let mut stop = Vec::new();
    for band in BandSpec::EVERY {
        let (lo, hi) = band.edges();
        let f = design_butterworth_bandpass(4, band, FS).unwrap();
        let hz = (2.0 * hi).min(FS / 2.0 - 0.5);
        let db = f.magnitude_db(hz);
        let analytic_db = 20.0 * analytic_magnitude(4, lo, hi, hz).log10();
        ok &= db < -40.0 && (db - analytic_db).abs() < 1e-6;
        stop.push(format!("{} {hz} Hz {db:.1} dB", band.name()));
    }
    notes.push(format!("stopband: {}", stop.join(", ")));

    // Zero phase: the input/output cross-correlation peaks at lag 0 and the
    // impulse response is symmetric.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lags = Vec::new();
    let mut asym = 0.0f64;
    for band in BandSpec::EVERY {
        let f = design_butterworth_bandpass(4, band, FS).unwrap();
        let x: Vec<f64> = (0..8192).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = filtfilt(&f, &x);
        let xcorr = |lag: isize| -> f64 {
            (512..x.len() - 512)
                .map(|i| x[i] * y[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-64..=64).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        lags.push(best);
        let mut imp = vec![0.0; 4097];
        imp[2048] = 1.0;
        let r = filtfilt(&f, &imp);
        let peak = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 1..1024 {
            asym = asym.max((r[2048 + k] - r[2048 - k]).abs() / peak);
        }
    }
    ok &= lags.iter().all(|&l| l == 0) && asym < 1e-6;
    notes.push(format!("xcorr peak lags {lags:?}, impulse asymmetry {asym:.1e}"));
    Outcome::check(ok, notes.join("; "))
}

// ------------------------------------------------------------ criterion 8

fn check_plan(subs: &[Subsample], plan: &FoldPlan) -> Result<(), String> {
    let mut subjects: Vec<u32> = subs.iter().map(|s| s.subject_id).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if plan.folds.len() != 10 {
        return Err(format!("{} folds", plan.folds.len()));
    }
    let mut test_count = std::collections::HashMap::<(u32, usize), usize>::new();
    for fold in &plan.folds {
        let (tr, va, te) = fold.partition(subs);
        for &subject in &subjects {
            let mut trials: [std::collections::BTreeSet<usize>; 3] = Default::default();
            let mut counts = [0usize; 3];
            for (k, idx) in [&tr, &va, &te].into_iter().enumerate() {
                for &i in idx.iter().filter(|&&i| subs[i].subject_id == subject) {
                    trials[k].insert(subs[i].trial_id);
                    counts[k] += 1;
                }
            }
            if counts != [18, 6, 6] {
                return Err(format!("fold {} subject {subject}: counts {counts:?}", fold.index));
            }
            if !trials[0].is_disjoint(&trials[1]) || !trials[0].is_disjoint(&trials[2]) || !trials[1].is_disjoint(&trials[2]) {
                return Err(format!("fold {} subject {subject}: shared trial", fold.index));
            }
            for &t in &trials[2] {
                *test_count.entry((subject, t)).or_default() += 1;
            }
        }
        for (i, s) in subs.iter().enumerate() {
            let split = fold.split_of(s.subject_id, s.trial_id);
            let expect = if tr.contains(&i) {
                Split::Train
            } else if va.contains(&i) {
                Split::Val
            } else {
                Split::Test
            };
            if split != Some(expect) {
                return Err(format!("fold {}: subsample {i} misassigned", fold.index));
            }
        }
    }
    let mut per_subject = std::collections::HashMap::<u32, usize>::new();
    for (&(subject, _), &n) in &test_count {
        if n != 2 {
            return Err(format!("subject {subject}: a trial tests in {n} folds"));
        }
        *per_subject.entry(subject).or_default() += 1;
    }
    if subjects.iter().any(|s| per_subject.get(s) != Some(&5)) {
        return Err("a subject does not test all 5 trials".into());
    }
    Ok(())
}

// 32 subjects x 40 trials with random ratings, built one subject at a time;
// only subsample metadata is kept.
fn deap_shaped_subsamples(selection: StateSelection, seed: u64) -> Vec<Subsample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for id in 1..=32u32 {
        let ratings: Vec<[f64; 2]> = (0..DEAP_TRIALS)
            .map(|_| [rng.gen_range(1.0..=9.0), rng.gen_range(1.0..=9.0)])
            .collect();
        let samples = vec![0.0f32; DEAP_TRIALS * N_CHANNELS * TRIAL_SAMPLES];
        let rec = RawRecording::new(id, samples, ratings).unwrap();
        if let Ok(subs) = select_trials_and_subsample(std::slice::from_ref(&rec), selection, 5, seed) {
            out.extend(subs.into_iter().map(|mut s| {
                s.data = Tensor::zeros(&[1, 1]);
                s
            }));
        }
    }
    out
}

fn fold_plan_suite() -> Outcome {
    let selections = [
        StateSelection::State(AffectiveState::LL),
        StateSelection::State(AffectiveState::LH),
        StateSelection::State(AffectiveState::HL),
        StateSelection::State(AffectiveState::HH),
        StateSelection::All,
    ];
    let synthetic = generate_synthetic_dataset(8, 5, 21).unwrap();
    let mut plans = 0;
    let mut subjects_checked = 0;
    let mut errors = Vec::new();
    for (source, seed) in [("synthetic", 1u64), ("synthetic", 2), ("deap-shaped", 3), ("deap-shaped", 4)] {
        for sel in selections {
            let subs = if source == "synthetic" {
                let mut s = select_trials_and_subsample(&synthetic, sel, 5, seed).unwrap();
                s.iter_mut().for_each(|x| x.data = Tensor::zeros(&[1, 1]));
                s
            } else {
                deap_shaped_subsamples(sel, seed)
            };
            if subs.is_empty() {
                continue;
            }
            let plan = make_folds(&subs, seed).unwrap();
            if let Err(e) = check_plan(&subs, &plan) {
                errors.push(format!("{source} {sel}: {e}"));
            }
            plans += 1;
            subjects_checked += subs.len() / 30;
        }
    }
    Outcome::check(
        errors.is_empty() && plans == 20,
        format!("{plans} plans over {subjects_checked} subject-selections; errors {errors:?}"),
    )
}

// ------------------------------------------------------------ criterion 9

fn baseline_sanity() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n_classes in [2usize, 3, 5, 8] {
        let centers: Vec<Vec<f64>> = (0..n_classes)
            .map(|c| (0..6).map(|j| if j == c % 6 { 10.0 * (1 + c / 6) as f64 } else { 0.0 }).collect())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..20 {
                rows.push(center.iter().map(|m| m + rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        let model = fit_svm_with_c(&rows, &labels, 1.0).unwrap();
        let correct = rows.iter().zip(&labels).filter(|(r, &l)| model.predict(r) == l).count();
        let want = n_classes * (n_classes - 1) / 2;
        ok &= model.n_classifiers() == want && correct == rows.len();
        notes.push(format!("{n_classes} classes: {} SVMs, {correct}/{}", model.n_classifiers(), rows.len()));
    }

    // Shared covariance, equal priors: Bayes accuracy is Phi(delta / 2).
    let (mu0, mu1) = ([0.0, 0.0], [1.6, 0.8]);
    let chol = [[1.0, 0.0], [0.6, 0.8]]; // covariance [[1, 0.6], [0.6, 1]]
    let draw = |mu: [f64; 2], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let z: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        vec![mu[0] + chol[0][0] * z[0], mu[1] + chol[1][0] * z[0] + chol[1][1] * z[1]]
    };
    let fv = |v: Vec<f64>| FeatureVector {
        kind: FeatureKind::Psd,
        elements: vec![v],
    };
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (c, mu) in [mu0, mu1].into_iter().enumerate() {
        for _ in 0..500 {
            feats.push(fv(draw(mu, &mut rng)));
            labels.push(c);
        }
    }
    let model = fit_mahalanobis(&feats, &labels).unwrap();
    let test_n = 20_000;
    let mut correct = 0;
    for (c, mu) in [mu0, mu1].into_iter().enumerate() {
        for _ in 0..test_n {
            correct += usize::from(model.classify(&fv(draw(mu, &mut rng))).unwrap().0 == c);
        }
    }
    let acc = 100.0 * correct as f64 / (2 * test_n) as f64;
    let diff = [mu1[0] - mu0[0], mu1[1] - mu0[1]];
    let inv = inv2([1.0, 0.6, 0.6, 1.0]);
    let delta = (diff[0] * (inv[0] * diff[0] + inv[1] * diff[1]) + diff[1] * (inv[2] * diff[0] + inv[3] * diff[1])).sqrt();
    let bayes = 100.0 * Normal::new(0.0, 1.0).unwrap().cdf(delta / 2.0);
    ok &= (acc - bayes).abs() <= 2.0;
    notes.push(format!("Mahalanobis {acc:.2}% vs Bayes {bayes:.2}%"));
    Outcome::check(ok, notes.join("; "))
}

// ------------------------------------------------------------ criterion 10

fn deap_experiment_i() -> Outcome {
    let Some(dir) = std::env::var_os("NEUROBIT_DEAP_DIR").map(PathBuf::from) else {
        return Outcome {
            pass: None,
            detail: "set NEUROBIT_DEAP_DIR to a DEAP export to run".into(),
        };
    };
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| {
        let mut cfg = ExperimentConfig::load(&configs.join(name)).unwrap();
        cfg.data = DataSource::Export { path: dir.clone() };
        cfg
    };
    let gru = load("exp1_all_gru.json");
    let data = load_dataset(&gru.data, gru.seeds.data).unwrap();
    let g = run_experiment(&gru, &data).unwrap();
    let s = run_experiment(&load("exp1_all_svm_psd.json"), &data).unwrap();
    Outcome::check(
        g.mean_crr >= 99.0 && s.mean_crr < 60.0,
        format!(
            "CNN-GRU {:.2} +/- {:.2} (need >= 99.0), SVM-PSD {:.2} +/- {:.2} (need < 60)",
            g.mean_crr, g.standard_error, s.mean_crr, s.standard_error
        ),
    )
}
