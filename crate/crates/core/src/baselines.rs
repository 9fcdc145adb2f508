//! Classical comparators: one-vs-one linear SVM and a pooled-covariance
//! Mahalanobis classifier with summed-distance fusion, over log-PSD or
//! Fisher-z coherence features.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{unflatten_into, Checkpoint, ModelKind};
use crate::data_io::Subsample;
use crate::error::{Error, Result};
use crate::signal::{BandSpec, Standardizer, Welch, WelchParams};
use crate::tensor::Tensor;

pub const PSD_FLOOR: f64 = 1e-12;
pub const COHERENCY_CEIL: f64 = 1.0 - 1e-9;
pub const SVM_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const SVM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Psd,
    Coh,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Psd => "psd",
            FeatureKind::Coh => "coh",
        })
    }
}

/// Element-structured features: one vector per electrode (PSD) or per
/// electrode pair (COH).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub elements: Vec<Vec<f64>>,
}

impl FeatureVector {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.elements.concat()
    }
}

fn welch() -> Result<Welch> {
    Welch::new(WelchParams::default())
}

/// Per-electrode Welch log-PSD, 65 bins each.
pub fn extract_psd_features(sub: &Subsample) -> Result<FeatureVector> {
    let w = welch()?;
    let elements = (0..sub.n_channels())
        .map(|c| Ok(w.psd(sub.channel(c))?.into_iter().map(|p| p.max(PSD_FLOOR).ln()).collect()))
        .collect::<Result<_>>()?;
    Ok(FeatureVector {
        kind: FeatureKind::Psd,
        elements,
    })
}

/// Fisher z of |coherency| for one pair's coherence spectrum.
pub fn fisher_z(msc: f64) -> f64 {
    msc.max(0.0).sqrt().min(COHERENCY_CEIL).atanh()
}

/// Per-pair Fisher-z coherence over the bins inside `band`, pairs ordered
/// `(0,1), (0,2), ..., (C-2, C-1)`.
pub fn extract_coh_features(sub: &Subsample, band: BandSpec) -> Result<FeatureVector> {
    let w = welch()?;
    let (lo, hi) = band.edges();
    let bin_hz = w.params().bin_hz();
    let bins: Vec<usize> = (0..w.params().n_bins())
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            f >= lo - 1e-9 && f <= hi + 1e-9
        })
        .collect();
    let spectra = (0..sub.n_channels())
        .map(|c| w.segment_spectra(sub.channel(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut elements = Vec::new();
    for i in 0..spectra.len() {
        for j in i + 1..spectra.len() {
            let coh = Welch::coherence_from_spectra(&spectra[i], &spectra[j])?;
            elements.push(bins.iter().map(|&k| fisher_z(coh[k])).collect());
        }
    }
    Ok(FeatureVector {
        kind: FeatureKind::Coh,
        elements,
    })
}

pub fn extract_features(sub: &Subsample, kind: FeatureKind, band: BandSpec) -> Result<FeatureVector> {
    match kind {
        FeatureKind::Psd => extract_psd_features(sub),
        FeatureKind::Coh => extract_coh_features(sub, band),
    }
}

// ---------------------------------------------------------------- SVM

/// Linear soft-margin classifier for one class pair; a positive decision
/// value votes for `positive`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub positive: usize,
    pub negative: usize,
    #[serde(skip)]
    pub weight: Vec<f64>,
    #[serde(skip)]
    pub bias: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weight.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

/// Dual solution of `min ½ wᵀw + C Σ ξ` for labels `y ∈ {±1}` given the
/// linear Gram matrix (row-major, `n × n`). Returns `(alpha, bias)`.
///
/// Two-variable SMO with maximal-violating-pair selection; stops when the
/// KKT gap falls below `tol`.
pub fn smo_dual(gram: &[f64], y: &[f64], c: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    if gram.len() != n * n {
        return Err(Error::Shape("smo: gram size".into()));
    }
    if !(c > 0.0) {
        return Err(Error::Argument(format!("capacity C must be positive, got {c}")));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = 100_000usize.max(1000 * n);
    let up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < c) || (y[t] < 0.0 && a[t] > 0.0);
    let low = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < c);
    let mut converged = false;
    for _ in 0..max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(t, &alpha) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(t, &alpha) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            let (mut ni, mut nj) = (ai + delta, aj + delta);
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > 0.0 {
                if ni > c {
                    ni = c;
                    nj = c - diff;
                }
            } else if nj > c {
                nj = c;
                ni = c + diff;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            let (mut ni, mut nj) = (ai - delta, aj + delta);
            if sum > c {
                if ni > c {
                    ni = c;
                    nj = sum - c;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > c {
                if nj > c {
                    nj = c;
                    ni = sum - c;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }
    if !converged {
        return Err(Error::Fit(format!("SMO did not reach tolerance {tol} in {max_iter} iterations")));
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free_n += 1;
        } else {
            let at_upper = alpha[t] >= c;
            if (y[t] > 0.0) == at_upper {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    Ok((alpha, -rho))
}

/// Trains a linear SVM on rows `x` with labels `y ∈ {±1}`.
pub fn train_linear_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
    let gram = linear_gram(x);
    let (alpha, bias) = smo_dual(&gram, y, c, SVM_TOL)?;
    Ok((primal_weight(x, y, &alpha), bias))
}

fn linear_gram(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

fn primal_weight(x: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let d = x.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d];
    for ((row, &yi), &a) in x.iter().zip(y).zip(alpha) {
        if a != 0.0 {
            for (wv, xv) in w.iter_mut().zip(row) {
                *wv += a * yi * xv;
            }
        }
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<usize>,
    pub c: f64,
    pub standardizer: Standardizer,
    pub pairs: Vec<BinarySvm>,
    /// Validation CRR (%) per grid value when C was selected.
    pub grid_scores: Vec<(f64, f64)>,
}

/// Prepared pairwise problems sharing one standardization.
struct PairProblems {
    classes: Vec<usize>,
    standardizer: Standardizer,
    /// `(positive, negative, rows, labels, gram)`.
    problems: Vec<(usize, usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)>,
}

fn sorted_classes(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Z-scoring fitted on training rows; constant features keep unit scale.
fn lenient_standardizer(rows: &[Vec<f64>]) -> Result<Standardizer> {
    let d = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.concat();
    let t = Tensor::from_vec(&[rows.len(), d], data)?;
    match Standardizer::fit(&t) {
        Ok(s) => Ok(s),
        Err(Error::Fit(_)) => {
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let std = (0..d)
                .map(|j| {
                    let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
                    if v > 0.0 {
                        v.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            Ok(Standardizer { mean, std })
        }
        Err(e) => Err(e),
    }
}

fn prepare(features: &[Vec<f64>], labels: &[usize]) -> Result<PairProblems> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let classes = sorted_classes(labels);
    if classes.len() < 2 {
        return Err(Error::Fit("SVM needs at least two classes".into()));
    }
    let standardizer = lenient_standardizer(features)?;
    let z: Vec<Vec<f64>> = features.iter().map(|r| standardizer.apply_row(r)).collect();
    let mut problems = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for (r, &l) in z.iter().zip(labels) {
                if l == pos || l == neg {
                    rows.push(r.clone());
                    y.push(if l == pos { 1.0 } else { -1.0 });
                }
            }
            let gram = linear_gram(&rows);
            problems.push((pos, neg, rows, y, gram));
        }
    }
    Ok(PairProblems {
        classes,
        standardizer,
        problems,
    })
}

fn solve_pairs(p: &PairProblems, c: f64) -> Result<SvmModel> {
    let pairs = p
        .problems
        .par_iter()
        .map(|(pos, neg, rows, y, gram)| {
            let (alpha, bias) = smo_dual(gram, y, c, SVM_TOL)?;
            Ok(BinarySvm {
                positive: *pos,
                negative: *neg,
                weight: primal_weight(rows, y, &alpha),
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        classes: p.classes.clone(),
        c,
        standardizer: p.standardizer.clone(),
        pairs,
        grid_scores: Vec::new(),
    })
}

/// One-vs-one linear SVM with a fixed capacity constant.
pub fn fit_svm_with_c(features: &[Vec<f64>], labels: &[usize], c: f64) -> Result<SvmModel> {
    solve_pairs(&prepare(features, labels)?, c)
}

/// Fits at every C in the grid and keeps the one with the best validation
/// CRR (ties favour the smaller C).
pub fn fit_svm(
    features: &[Vec<f64>],
    labels: &[usize],
    val_features: &[Vec<f64>],
    val_labels: &[usize],
) -> Result<SvmModel> {
    let problems = prepare(features, labels)?;
    let mut best: Option<(f64, SvmModel)> = None;
    let mut scores = Vec::new();
    for &c in &SVM_C_GRID {
        let model = solve_pairs(&problems, c)?;
        let preds: Vec<usize> = val_features.iter().map(|f| model.predict(f)).collect();
        let crr = crr_percent(&preds, val_labels)?;
        scores.push((c, crr));
        if best.as_ref().is_none_or(|(b, _)| crr > *b) {
            best = Some((crr, model));
        }
    }
    let (_, mut model) = best.expect("non-empty grid");
    model.grid_scores = scores;
    Ok(model)
}

fn crr_percent(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Argument("CRR needs equal, non-empty prediction and truth lists".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Vote tally for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteTally {
    /// Votes per class, aligned with `SvmModel::classes`.
    pub votes: Vec<usize>,
    /// Sum of each class's pairwise decision values, oriented toward it.
    pub margins: Vec<f64>,
}

impl SvmModel {
    pub fn n_classifiers(&self) -> usize {
        self.pairs.len()
    }

    pub fn tally(&self, features: &[f64]) -> VoteTally {
        let z = self.standardizer.apply_row(features);
        let k = self.classes.len();
        let pos_of = |c: usize| self.classes.binary_search(&c).expect("known class");
        let mut votes = vec![0; k];
        let mut margins = vec![0.0; k];
        for p in &self.pairs {
            let d = p.decision(&z);
            let (a, b) = (pos_of(p.positive), pos_of(p.negative));
            if d > 0.0 {
                votes[a] += 1;
            } else {
                votes[b] += 1;
            }
            margins[a] += d;
            margins[b] -= d;
        }
        VoteTally { votes, margins }
    }

    /// Majority vote; ties go to the larger summed margin, then the lowest ID.
    pub fn predict(&self, features: &[f64]) -> usize {
        let t = self.tally(features);
        self.classes[resolve_votes(&t.votes, &t.margins)]
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({
            "classes": self.classes,
            "c": self.c,
            "dim": self.standardizer.mean.len(),
            "pairs": self.pairs,
            "grid_scores": self.grid_scores,
        });
        let mut params: Vec<f32> = self
            .standardizer
            .mean
            .iter()
            .chain(&self.standardizer.std)
            .map(|&v| v as f32)
            .collect();
        for p in &self.pairs {
            params.extend(p.weight.iter().map(|&v| v as f32));
            params.push(p.bias as f32);
        }
        Ok(Checkpoint {
            kind: ModelKind::Svm,
            header,
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Svm)?;
        #[derive(Deserialize)]
        struct Header {
            classes: Vec<usize>,
            c: f64,
            dim: usize,
            pairs: Vec<BinarySvm>,
            grid_scores: Vec<(f64, f64)>,
        }
        let h: Header = serde_json::from_value(ckpt.header.clone())?;
        let mut mean = vec![0.0; h.dim];
        let mut std = vec![0.0; h.dim];
        let mut pairs = h.pairs;
        for p in &mut pairs {
            p.weight = vec![0.0; h.dim];
        }
        let mut biases = vec![0.0; pairs.len()];
        {
            let mut targets: Vec<&mut [f64]> = vec![&mut mean, &mut std];
            for (p, b) in pairs.iter_mut().zip(biases.iter_mut()) {
                targets.push(&mut p.weight);
                targets.push(std::slice::from_mut(b));
            }
            unflatten_into(&ckpt.params, targets)?;
        }
        for (p, b) in pairs.iter_mut().zip(biases) {
            p.bias = b;
        }
        Ok(SvmModel {
            classes: h.classes,
            c: h.c,
            standardizer: Standardizer { mean, std },
            pairs,
            grid_scores: h.grid_scores,
        })
    }
}

/// Index of the winning class given votes and oriented margins.
pub fn resolve_votes(votes: &[usize], margins: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..votes.len() {
        if votes[i] > votes[best] || (votes[i] == votes[best] && margins[i] > margins[best]) {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------- Mahalanobis

/// Per-element statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementModel {
    pub dim: usize,
    /// Class means, aligned with `MahalanobisModel::classes`.
    pub means: Vec<Vec<f64>>,
    /// Average of the per-class unbiased covariances (row-major).
    pub pooled_cov: Vec<f64>,
    /// Inverse of the ridge-regularized pooled covariance.
    pub inv_cov: Vec<f64>,
}

impl ElementModel {
    /// `(o - µ_n) Σ⁻¹ (o - µ_n)ᵀ` for class index `n`.
    pub fn distance(&self, o: &[f64], n: usize) -> f64 {
        quad_form(&self.inv_cov, o, &self.means[n])
    }
}

fn quad_form(inv: &[f64], o: &[f64], mu: &[f64]) -> f64 {
    let d: Vec<f64> = o.iter().zip(mu).map(|(a, b)| a - b).collect();
    let dim = d.len();
    let mut total = 0.0;
    for i in 0..dim {
        let row = &inv[i * dim..(i + 1) * dim];
        total += d[i] * row.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisModel {
    pub classes: Vec<usize>,
    pub kind: FeatureKind,
    pub elements: Vec<ElementModel>,
}

fn fit_element(samples: &[Vec<&[f64]>]) -> Result<ElementModel> {
    let dim = samples[0][0].len();
    let mut means = Vec::with_capacity(samples.len());
    let mut pooled = DMatrix::<f64>::zeros(dim, dim);
    for class in samples {
        let n = class.len();
        let mut mu = DVector::<f64>::zeros(dim);
        for s in class {
            if s.len() != dim {
                return Err(Error::Shape("element dimensions differ across samples".into()));
            }
            mu += DVector::from_column_slice(s);
        }
        mu /= n as f64;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for s in class {
            let d = DVector::from_column_slice(s) - &mu;
            cov.ger(1.0, &d, &d, 1.0);
        }
        pooled += cov / (n - 1) as f64;
        means.push(mu.as_slice().to_vec());
    }
    pooled /= samples.len() as f64;
    let lambda = 1e-6 * pooled.trace() / dim as f64;
    let mut reg = pooled.clone();
    for i in 0..dim {
        reg[(i, i)] += lambda.max(f64::MIN_POSITIVE);
    }
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Fit("pooled covariance is singular after regularization".into()))?;
    let inv = chol.inverse();
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    Ok(ElementModel {
        dim,
        means,
        pooled_cov: row_major(&pooled),
        inv_cov: row_major(&inv),
    })
}

/// Fits class means and an inverse pooled covariance per feature element.
pub fn fit_mahalanobis(features: &[FeatureVector], labels: &[usize]) -> Result<MahalanobisModel> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Shape("features and labels must be equal-length and non-empty".into()));
    }
    let kind = features[0].kind;
    let n_el = features[0].n_elements();
    if features.iter().any(|f| f.kind != kind || f.n_elements() != n_el) {
        return Err(Error::Shape("feature vectors differ in kind or element count".into()));
    }
    let classes = sorted_classes(labels);
    let by_class: Vec<Vec<&FeatureVector>> = classes
        .iter()
        .map(|c| features.iter().zip(labels).filter(|(_, l)| *l == c).map(|(f, _)| f).collect())
        .collect();
    if let Some(i) = by_class.iter().position(|v| v.len() < 2) {
        return Err(Error::Fit(format!(
            "class {} has fewer than 2 training samples",
            classes[i]
        )));
    }
    let elements = (0..n_el)
        .into_par_iter()
        .map(|e| {
            let samples: Vec<Vec<&[f64]>> = by_class
                .iter()
                .map(|v| v.iter().map(|f| f.elements[e].as_slice()).collect())
                .collect();
            fit_element(&samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MahalanobisModel {
        classes,
        kind,
        elements,
    })
}

impl MahalanobisModel {
    /// Fused score per class: the sum over elements of each distance.
    pub fn scores(&self, feature: &FeatureVector) -> Result<Vec<f64>> {
        if feature.n_elements() != self.elements.len() {
            return Err(Error::Shape(format!(
                "model has {} elements, feature has {}",
                self.elements.len(),
                feature.n_elements()
            )));
        }
        let mut scores = vec![0.0; self.classes.len()];
        for (el, o) in self.elements.iter().zip(&feature.elements) {
            if o.len() != el.dim {
                return Err(Error::Shape("element dimension mismatch".into()));
            }
            for (n, s) in scores.iter_mut().enumerate() {
                *s += el.distance(o, n);
            }
        }
        Ok(scores)
    }

    /// Class with the smallest fused distance (lowest ID on ties).
    pub fn classify(&self, feature: &FeatureVector) -> Result<(usize, Vec<f64>)> {
        let scores = self.scores(feature)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s < scores[best] {
                best = i;
            }
        }
        Ok((self.classes[best], scores))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({
            "classes": self.classes,
            "kind": self.kind,
            "dims": self.elements.iter().map(|e| e.dim).collect::<Vec<_>>(),
        });
        let mut params = Vec::new();
        for e in &self.elements {
            for m in &e.means {
                params.extend(m.iter().map(|&v| v as f32));
            }
            params.extend(e.pooled_cov.iter().map(|&v| v as f32));
            params.extend(e.inv_cov.iter().map(|&v| v as f32));
        }
        Ok(Checkpoint {
            kind: ModelKind::Mahalanobis,
            header,
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Mahalanobis)?;
        #[derive(Deserialize)]
        struct Header {
            classes: Vec<usize>,
            kind: FeatureKind,
            dims: Vec<usize>,
        }
        let h: Header = serde_json::from_value(ckpt.header.clone())?;
        let k = h.classes.len();
        let mut elements: Vec<ElementModel> = h
            .dims
            .iter()
            .map(|&d| ElementModel {
                dim: d,
                means: vec![vec![0.0; d]; k],
                pooled_cov: vec![0.0; d * d],
                inv_cov: vec![0.0; d * d],
            })
            .collect();
        let mut targets: Vec<&mut [f64]> = Vec::new();
        for e in &mut elements {
            for m in &mut e.means {
                targets.push(m);
            }
            targets.push(&mut e.pooled_cov);
            targets.push(&mut e.inv_cov);
        }
        unflatten_into(&ckpt.params, targets)?;
        Ok(MahalanobisModel {
            classes: h.classes,
            kind: h.kind,
            elements,
        })
    }
}

/// Flattens feature vectors into SVM rows.
pub fn feature_rows(features: &[FeatureVector]) -> Vec<Vec<f64>> {
    features.iter().map(FeatureVector::flatten).collect()
}
