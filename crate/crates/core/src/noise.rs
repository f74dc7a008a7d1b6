//! Label corruption: transition-matrix construction, symmetric,
//! asymmetric, and instance-dependent injection, external noisy-label
//! files, and empirical noise measurement.
//!
//! Noise is applied once at dataset-construction time; the corrupted
//! labels stay fixed for the whole run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat64, Rng, Vec64};

/// Row-stochastic K×K matrix; entry (j, k) is the probability of
/// observing label k when the clean label is j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    mat: Mat64,
}

impl TransitionMatrix {
    pub fn from_mat(mat: Mat64) -> Result<Self> {
        if mat.rows() != mat.cols() || mat.rows() < 2 {
            return Err(Error::dimension("transition matrix must be square, K >= 2"));
        }
        for i in 0..mat.rows() {
            let row = mat.row(i);
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::domain("transition entries must lie in [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!("row {i} sums to {s}, expected 1")));
            }
        }
        Ok(TransitionMatrix { mat })
    }

    pub fn identity(k: usize) -> Self {
        let mut mat = Mat64::zeros(k, k);
        for i in 0..k {
            mat.set(i, i, 1.0);
        }
        TransitionMatrix { mat }
    }

    pub fn k(&self) -> usize {
        self.mat.rows()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.mat.row(j)
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.mat.get(j, k)
    }

    /// E[1 − η_i] under the given class proportions: the probability a
    /// label survives corruption, averaged over classes. Feeds the
    /// asymmetric risk-gap constant.
    pub fn mean_retention(&self, class_weights: &[f64]) -> f64 {
        assert_eq!(class_weights.len(), self.k());
        let total: f64 = class_weights.iter().sum();
        (0..self.k())
            .map(|j| class_weights[j] / total * self.get(j, j))
            .sum()
    }
}

/// Symmetric noise: diagonal 1−η, off-diagonal η/(K−1).
pub fn symmetric_matrix(k: usize, eta: f64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::config("symmetric noise requires K >= 2"));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::config(format!("eta must lie in [0, 1), got {eta}")));
    }
    let mut mat = Mat64::zeros(k, k);
    let off = eta / (k as f64 - 1.0);
    for j in 0..k {
        for c in 0..k {
            mat.set(j, c, if j == c { 1.0 - eta } else { off });
        }
    }
    TransitionMatrix::from_mat(mat)
}

/// Pair-mapped asymmetric noise: each mapped source class flips to its
/// target with probability η, other classes keep their labels.
pub fn asymmetric_pairs_matrix(
    k: usize,
    pairs: &[(usize, usize)],
    eta: f64,
) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::config("asymmetric noise requires K >= 2"));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::config(format!("eta must lie in [0, 1), got {eta}")));
    }
    let mut seen = vec![false; k];
    for &(src, dst) in pairs {
        if src >= k || dst >= k {
            return Err(Error::config(format!(
                "pair ({src} -> {dst}) out of range for K = {k}"
            )));
        }
        if src == dst {
            return Err(Error::config(format!("pair map self-loop on class {src}")));
        }
        if seen[src] {
            return Err(Error::config(format!("duplicate source class {src} in pair map")));
        }
        seen[src] = true;
    }
    let mut mat = Mat64::zeros(k, k);
    for j in 0..k {
        mat.set(j, j, 1.0);
    }
    for &(src, dst) in pairs {
        mat.set(src, src, 1.0 - eta);
        mat.set(src, dst, eta);
    }
    TransitionMatrix::from_mat(mat)
}

/// Circular asymmetric noise: class j flips to (j+1) mod K with
/// probability η.
pub fn asymmetric_circular_matrix(k: usize, eta: f64) -> Result<TransitionMatrix> {
    let pairs: Vec<(usize, usize)> = (0..k).map(|j| (j, (j + 1) % k)).collect();
    asymmetric_pairs_matrix(k, &pairs, eta)
}

/// The CIFAR-10 style pair map: truck→automobile, bird→airplane,
/// deer→horse, cat↔dog (with the usual class indices 0..10).
pub fn cifar10_asym_pairs() -> Vec<(usize, usize)> {
    vec![(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)]
}

/// Resample each label independently from its transition-matrix row.
/// Deterministic given the rng substream.
pub fn inject(labels: &[usize], t: &TransitionMatrix, rng: &mut Rng) -> Vec<usize> {
    let k = t.k();
    labels
        .iter()
        .map(|&y| {
            debug_assert!(y < k);
            let row = t.row(y);
            let u = rng.uniform();
            let mut cum = 0.0;
            for (c, &p) in row.iter().enumerate() {
                cum += p;
                if u < cum {
                    return c;
                }
            }
            k - 1
        })
        .collect()
}

/// Feature-dependent label corruption. A random projection of the
/// features scores each wrong class; per-instance flip rates come from a
/// logistic squash of the strongest wrong-class score, are capped at 2η
/// to stay non-degenerate, and are rescaled so their mean is exactly η.
/// The flip destination is drawn from the softmax of the masked scores.
/// With all-zero features this reduces to symmetric noise in
/// distribution.
pub fn inject_instance_dependent(
    features: &Mat64,
    labels: &[usize],
    k: usize,
    eta: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec64)> {
    let n = features.rows();
    let d = features.cols();
    if d == 0 {
        return Err(Error::config("instance-dependent noise requires d > 0"));
    }
    if labels.len() != n {
        return Err(Error::dimension("labels and features disagree on N"));
    }
    if !(0.0 < eta && eta < 1.0) {
        return Err(Error::config(format!("eta must lie in (0, 1), got {eta}")));
    }

    let mut proj_rng = rng.substream("projection");
    let mut w = Mat64::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            w.set(i, j, proj_rng.normal());
        }
    }

    // masked scores and raw rate statistic per instance
    let mut scores = Mat64::zeros(n, k);
    let mut raw = vec![0.0f64; n];
    for i in 0..n {
        let x = features.row(i);
        let row = scores.row_mut(i);
        for j in 0..k {
            let mut s = 0.0;
            for (a, xv) in x.iter().enumerate() {
                s += xv * w.get(a, j);
            }
            row[j] = s;
        }
        row[labels[i]] = f64::NEG_INFINITY;
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        raw[i] = 1.0 / (1.0 + (-best).exp());
    }

    // choose c by bisection so that mean(min(c*raw_i, 2η)) = η
    let cap = 2.0 * eta;
    let mean_at = |c: f64| -> f64 {
        raw.iter().map(|&r| (c * r).min(cap)).sum::<f64>() / n as f64
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mean_at(hi) < eta && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let rates: Vec64 = raw.iter().map(|&r| (c * r).min(cap)).collect();

    let mut flip_rng = rng.substream("flips");
    let mut noisy = Vec::with_capacity(n);
    for i in 0..n {
        if flip_rng.uniform() < rates[i] {
            // softmax over masked scores, sampled by inverse CDF
            let row = scores.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec64 = row.iter().map(|&s| (s - m).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = flip_rng.uniform() * total;
            let mut dest = if labels[i] == 0 { 1 } else { 0 };
            for (jc, &wv) in weights.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                if u < wv {
                    dest = jc;
                    break;
                }
                u -= wv;
            }
            noisy.push(dest);
        } else {
            noisy.push(labels[i]);
        }
    }
    Ok((noisy, rates))
}

/// Load a noisy-label CSV with header `index,noisy_label`. Indices must
/// form a complete, duplicate-free range 0..N; labels must lie in [0, K).
pub fn load_external_noisy(path: &Path, k: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "index,noisy_label" => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header 'index,noisy_label', got '{}'", header.trim()),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    let mut entries: Vec<Option<usize>> = Vec::new();
    for (lineno, line) in lines {
        let line_num = lineno + 1; // 1-based for messages
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let idx: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: line_num,
                msg: format!("bad index in '{line}'"),
            })?;
        let label: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: line_num,
                msg: format!("bad label in '{line}'"),
            })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: line_num,
                msg: "expected exactly two columns".into(),
            });
        }
        if label >= k {
            return Err(Error::Parse {
                line: line_num,
                msg: format!("label {label} out of range for K = {k}"),
            });
        }
        if entries.len() <= idx {
            entries.resize(idx + 1, None);
        }
        if entries[idx].is_some() {
            return Err(Error::Parse {
                line: line_num,
                msg: format!("duplicate index {idx}"),
            });
        }
        entries[idx] = Some(label);
    }
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing index {i}"),
            })
        })
        .collect()
}

/// Write labels in the external noisy-label CSV format.
pub fn save_noisy_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("index,noisy_label\n");
    for (i, &l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Empirical disagreement rate and row-normalized confusion of clean vs
/// noisy labels. Rows of the estimate with no clean examples stay zero.
pub fn measure_noise(clean: &[usize], noisy: &[usize], k: usize) -> (f64, Mat64) {
    assert_eq!(clean.len(), noisy.len(), "label lists must align");
    let mut counts = Mat64::zeros(k, k);
    let mut disagree = 0usize;
    for (&a, &b) in clean.iter().zip(noisy) {
        counts.set(a, b, counts.get(a, b) + 1.0);
        if a != b {
            disagree += 1;
        }
    }
    for j in 0..k {
        let total: f64 = counts.row(j).iter().sum();
        if total > 0.0 {
            for c in 0..k {
                counts.set(j, c, counts.get(j, c) / total);
            }
        }
    }
    let eta_hat = if clean.is_empty() {
        0.0
    } else {
        disagree as f64 / clean.len() as f64
    };
    (eta_hat, counts)
}

/// Features plus clean and observed labels. `clean_labels` is absent for
/// externally loaded datasets whose ground truth is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub features: Mat64,
    pub clean_labels: Option<Vec<usize>>,
    pub noisy_labels: Vec<usize>,
    pub k: usize,
}

impl NoisyDataset {
    pub fn clean(features: Mat64, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dimension("features and labels disagree on N"));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::dimension("label out of range"));
        }
        Ok(NoisyDataset {
            features,
            clean_labels: Some(labels.clone()),
            noisy_labels: labels,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// The labels training observes.
    pub fn labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// Retain only the given row indices (used by the sweep splitter).
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Mat64::zeros(idx.len(), self.d());
        let mut noisy = Vec::with_capacity(idx.len());
        let mut clean = self.clean_labels.as_ref().map(|_| Vec::with_capacity(idx.len()));
        for (r, &i) in idx.iter().enumerate() {
            features.row_mut(r).copy_from_slice(self.features.row(i));
            noisy.push(self.noisy_labels[i]);
            if let (Some(cl), Some(src)) = (clean.as_mut(), self.clean_labels.as_ref()) {
                cl.push(src[i]);
            }
        }
        NoisyDataset {
            features,
            clean_labels: clean,
            noisy_labels: noisy,
            k: self.k,
        }
    }
}
