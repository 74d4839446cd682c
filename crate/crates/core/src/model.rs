//! Single-layer linear classifiers.
//!
//! A [`ParamVector`] stores `d * C` weights row-major by class followed by
//! `C` biases, so `score_c = sum_j w[c, j] * x[j] + b[c]`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::rng;

pub const PARAM_MAGIC: &[u8; 4] = b"PVC1";

/// Relative eigenvalue cutoff for the pseudo-inverse of the normal matrix.
const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    feature_dim: usize,
    n_classes: usize,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn len_for(feature_dim: usize, n_classes: usize) -> usize {
        feature_dim * n_classes + n_classes
    }

    pub fn new(feature_dim: usize, n_classes: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::len_for(feature_dim, n_classes);
        if values.len() != m {
            return Err(Error::DimensionMismatch {
                location: format!("parameter vector for d={feature_dim}, C={n_classes}"),
                expected: m,
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {k} is not finite")));
        }
        Ok(Self {
            feature_dim,
            n_classes,
            values,
        })
    }

    pub fn zeros(feature_dim: usize, n_classes: usize) -> Self {
        Self {
            feature_dim,
            n_classes,
            values: vec![0.0; Self::len_for(feature_dim, n_classes)],
        }
    }

    /// I.i.d. `N(0, std^2)` entries drawn from `seed`.
    pub fn gaussian(feature_dim: usize, n_classes: usize, std: f64, seed: u64) -> Result<Self> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut gen = rng::stream(seed);
        let values = (0..Self::len_for(feature_dim, n_classes))
            .map(|_| dist.sample(&mut gen))
            .collect();
        Self::new(feature_dim, n_classes, values)
    }

    pub fn from_parts(weights: &[Vec<f64>], biases: &[f64]) -> Result<Self> {
        let c = biases.len();
        if weights.len() != c || c == 0 {
            return Err(Error::invalid("need one weight row per bias"));
        }
        let d = weights[0].len();
        let mut values = Vec::with_capacity(Self::len_for(d, c));
        for row in weights {
            if row.len() != d {
                return Err(Error::invalid("ragged weight rows"));
            }
            values.extend_from_slice(row);
        }
        values.extend_from_slice(biases);
        Self::new(d, c, values)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.values[class * self.feature_dim + feature]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[self.feature_dim * self.n_classes + class]
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.feature_dim == other.feature_dim && self.n_classes == other.n_classes
    }

    /// Copy with the same layout and new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.feature_dim, self.n_classes, values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.values.len());
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != PARAM_MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: "expected PVC1 magic and 12-byte header".into(),
            });
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + 8 * Self::len_for(d, c);
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                location: format!("PVC1 file length (d={d}, C={c})"),
                expected,
                found: bytes.len(),
            });
        }
        let values = bytes[12..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(d, c, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Half squared error against one-hot targets.
    LeastSquaresOnehot,
    #[default]
    SoftmaxCrossEntropy,
}

fn check_dims(p: &ParamVector, ds: &FeatureDataset) -> Result<()> {
    if ds.feature_dim() != p.feature_dim {
        return Err(Error::DimensionMismatch {
            location: "dataset feature_dim vs parameters".into(),
            expected: p.feature_dim,
            found: ds.feature_dim(),
        });
    }
    if ds.n_classes() != p.n_classes {
        return Err(Error::DimensionMismatch {
            location: "dataset n_classes vs parameters".into(),
            expected: p.n_classes,
            found: ds.n_classes(),
        });
    }
    Ok(())
}

fn scores_into(p: &ParamVector, x: &[f32], out: &mut [f64]) {
    let d = p.feature_dim;
    let bias_start = d * p.n_classes;
    for (c, s) in out.iter_mut().enumerate() {
        let w = &p.values[c * d..(c + 1) * d];
        let mut acc = 0.0;
        for (wj, &xj) in w.iter().zip(x) {
            acc += wj * f64::from(xj);
        }
        *s = acc + p.values[bias_start + c];
    }
}

pub fn predict(p: &ParamVector, x: &[f32]) -> Result<Vec<f64>> {
    if x.len() != p.feature_dim {
        return Err(Error::DimensionMismatch {
            location: "feature row".into(),
            expected: p.feature_dim,
            found: x.len(),
        });
    }
    let mut out = vec![0.0; p.n_classes];
    scores_into(p, x, &mut out);
    Ok(out)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(p: &ParamVector, ds: &FeatureDataset) -> Result<f64> {
    check_dims(p, ds)?;
    let mut scores = vec![0.0; p.n_classes];
    let mut correct = 0usize;
    for i in 0..ds.n_samples() {
        scores_into(p, ds.row(i), &mut scores);
        if argmax(&scores) == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.n_samples() as f64)
}

/// Turns `scores` into the residual `dloss/dscore` in place and returns the
/// sample loss.
fn residual_in_place(scores: &mut [f64], label: usize, kind: LossKind) -> f64 {
    match kind {
        LossKind::LeastSquaresOnehot => {
            let mut loss = 0.0;
            for (c, s) in scores.iter_mut().enumerate() {
                let target = if c == label { 1.0 } else { 0.0 };
                *s -= target;
                loss += 0.5 * *s * *s;
            }
            loss
        }
        LossKind::SoftmaxCrossEntropy => {
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter() {
                total += (s - max).exp();
            }
            let log_z = max + total.ln();
            let loss = log_z - scores[label];
            for (c, s) in scores.iter_mut().enumerate() {
                let prob = (*s - log_z).exp();
                *s = if c == label { prob - 1.0 } else { prob };
            }
            loss
        }
    }
}

/// Adds the summed per-sample gradients of rows `rows` to `grad` (sample
/// index ascending) and returns the summed loss. Does not divide by the
/// row count.
pub(crate) fn accumulate_gradient(
    p: &ParamVector,
    batch: &FeatureDataset,
    rows: Range<usize>,
    kind: LossKind,
    grad: &mut [f64],
    scratch: &mut [f64],
) -> Result<f64> {
    let d = p.feature_dim;
    let bias_start = d * p.n_classes;
    let mut loss_sum = 0.0;
    for i in rows {
        let x = batch.row(i);
        scores_into(p, x, scratch);
        let loss = residual_in_place(scratch, batch.label(i), kind);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        loss_sum += loss;
        for (c, &r) in scratch.iter().enumerate() {
            let g = &mut grad[c * d..(c + 1) * d];
            for (gj, &xj) in g.iter_mut().zip(x) {
                *gj += r * f64::from(xj);
            }
            grad[bias_start + c] += r;
        }
    }
    Ok(loss_sum)
}

/// Mean loss over `batch` and its exact gradient.
pub fn loss_and_gradient(
    p: &ParamVector,
    batch: &FeatureDataset,
    kind: LossKind,
) -> Result<(f64, ParamVector)> {
    check_dims(p, batch)?;
    let mut grad = vec![0.0; p.len()];
    let mut scratch = vec![0.0; p.n_classes];
    let n = batch.n_samples();
    let loss = accumulate_gradient(p, batch, 0..n, kind, &mut grad, &mut scratch)?;
    let inv = n as f64;
    grad.iter_mut().for_each(|g| *g /= inv);
    Ok((
        loss / inv,
        ParamVector {
            feature_dim: p.feature_dim,
            n_classes: p.n_classes,
            values: grad,
        },
    ))
}

pub fn loss(p: &ParamVector, batch: &FeatureDataset, kind: LossKind) -> Result<f64> {
    check_dims(p, batch)?;
    let mut scratch = vec![0.0; p.n_classes];
    let mut total = 0.0;
    for i in 0..batch.n_samples() {
        scores_into(p, batch.row(i), &mut scratch);
        let l = residual_in_place(&mut scratch, batch.label(i), kind);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total += l;
    }
    Ok(total / batch.n_samples() as f64)
}

/// Minimum-norm least-squares fit of one-hot targets.
///
/// Solves the normal equations `A theta = X^T Y` for the bias-augmented
/// design `X = [features | 1]` through the eigendecomposition of the
/// symmetric `A = X^T X`, inverting only eigenvalues above
/// `1e-12 * max eigenvalue`. That pseudo-inverse yields the minimum-norm
/// solution when the design is rank deficient.
pub fn least_squares_closed_form(batch: &FeatureDataset) -> Result<ParamVector> {
    let d = batch.feature_dim();
    let c = batch.n_classes();
    let da = d + 1;
    let mut a = DMatrix::<f64>::zeros(da, da);
    let mut b = DMatrix::<f64>::zeros(da, c);
    let mut xa = vec![1.0; da];
    for i in 0..batch.n_samples() {
        for (dst, &v) in xa.iter_mut().zip(batch.row(i)) {
            *dst = f64::from(v);
        }
        for r in 0..da {
            for s in r..da {
                a[(r, s)] += xa[r] * xa[s];
            }
            b[(r, batch.label(i))] += xa[r];
        }
    }
    for r in 0..da {
        for s in 0..r {
            a[(r, s)] = a[(s, r)];
        }
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = max * PINV_CUTOFF;
    let vt_b = eig.eigenvectors.transpose() * &b;
    let mut scaled = vt_b;
    for (k, &mu) in eig.eigenvalues.iter().enumerate() {
        let inv = if mu > cutoff { 1.0 / mu } else { 0.0 };
        scaled.row_mut(k).scale_mut(inv);
    }
    let theta = &eig.eigenvectors * scaled;
    let mut values = vec![0.0; ParamVector::len_for(d, c)];
    for class in 0..c {
        for j in 0..d {
            values[class * d + j] = theta[(j, class)];
        }
        values[d * c + class] = theta[(d, class)];
    }
    ParamVector::new(d, c, values)
}
