//! Synthetic dataset generation and the dataset CSV format. Desk-scale
//! stand-ins for image benchmarks: Gaussian blobs, two moons, and
//! concentric rings, all class-balanced, standardized, and seeded.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisyDataset;
use crate::numerics::{Mat64, Rng};

/// Synthetic generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Gaussians,
    TwoMoons,
    Rings,
}

fn raw_features(
    kind: SyntheticKind,
    k: usize,
    n: usize,
    d: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<(Mat64, Vec<usize>)> {
    if k < 2 {
        return Err(Error::config("synthetic data requires K >= 2"));
    }
    if n < k {
        return Err(Error::config("synthetic data requires N >= K"));
    }
    if d < 2 {
        return Err(Error::config("synthetic data requires d >= 2"));
    }
    if !(separation > 0.0) {
        return Err(Error::config("separation must be positive"));
    }
    if kind == SyntheticKind::TwoMoons && k != 2 {
        return Err(Error::config("two_moons supports exactly 2 classes"));
    }

    let mut features = Mat64::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k; // round-robin keeps classes balanced within 1
        labels.push(class);
        let row = features.row_mut(i);
        match kind {
            SyntheticKind::Gaussians => {
                let angle = 2.0 * std::f64::consts::PI * class as f64 / k as f64;
                row[0] = separation * angle.cos() + rng.normal();
                row[1] = separation * angle.sin() + rng.normal();
                for v in row.iter_mut().skip(2) {
                    *v = rng.normal();
                }
            }
            SyntheticKind::TwoMoons => {
                let t = std::f64::consts::PI * rng.uniform();
                let noise = 0.5 / separation.max(0.5);
                let (cx, cy) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                row[0] = cx + noise * rng.normal();
                row[1] = cy + noise * rng.normal();
                for v in row.iter_mut().skip(2) {
                    *v = rng.normal();
                }
            }
            SyntheticKind::Rings => {
                let radius = 1.0 + class as f64 * separation * 0.5;
                let theta = 2.0 * std::f64::consts::PI * rng.uniform();
                let r = radius + 0.15 * rng.normal();
                row[0] = r * theta.cos();
                row[1] = r * theta.sin();
                for v in row.iter_mut().skip(2) {
                    *v = rng.normal();
                }
            }
        }
    }
    Ok((features, labels))
}

/// Per-dimension mean and standard deviation.
fn column_stats(features: &Mat64) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (features.rows(), features.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (j, &v) in features.row(i).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0 // constant column: leave it unscaled
            }
        })
        .collect();
    (mean, std)
}

fn standardize(features: &mut Mat64, mean: &[f64], std: &[f64]) {
    for i in 0..features.rows() {
        for (j, v) in features.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / std[j];
        }
    }
}

/// Generate a clean synthetic dataset, standardized to zero mean and
/// unit variance per dimension. Deterministic given the rng substream.
pub fn gen_synthetic(
    kind: SyntheticKind,
    k: usize,
    n: usize,
    d: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<NoisyDataset> {
    let (mut features, labels) = raw_features(kind, k, n, d, separation, rng)?;
    let (mean, std) = column_stats(&features);
    standardize(&mut features, &mean, &std);
    NoisyDataset::clean(features, labels, k)
}

/// Generate a train/test pair from independent substreams. Both splits
/// are standardized with the training-set statistics so they live in the
/// same coordinate frame.
pub fn gen_train_test(
    kind: SyntheticKind,
    k: usize,
    n: usize,
    test_n: usize,
    d: usize,
    separation: f64,
    rng: &Rng,
) -> Result<(NoisyDataset, NoisyDataset)> {
    let (mut train_f, train_l) =
        raw_features(kind, k, n, d, separation, &mut rng.substream("train"))?;
    let (mut test_f, test_l) =
        raw_features(kind, k, test_n, d, separation, &mut rng.substream("test"))?;
    let (mean, std) = column_stats(&train_f);
    standardize(&mut train_f, &mean, &std);
    standardize(&mut test_f, &mean, &std);
    Ok((
        NoisyDataset::clean(train_f, train_l, k)?,
        NoisyDataset::clean(test_f, test_l, k)?,
    ))
}

/// Write a dataset as CSV with header `f0,…,f{d-1},label` (labels are
/// the observed ones).
pub fn save_dataset_csv(path: &Path, data: &NoisyDataset) -> Result<()> {
    let d = data.d();
    let mut out = String::new();
    for j in 0..d {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "f{j}");
    }
    out.push_str(",label\n");
    for i in 0..data.n() {
        for (j, v) in data.features.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        let _ = writeln!(out, ",{}", data.noisy_labels[i]);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a dataset CSV (header `f0,…,f{d-1},label`, 0-based labels).
/// The loaded labels land in both the clean and observed slots; noise
/// injection afterwards separates them.
pub fn load_dataset_csv(path: &Path, k: usize) -> Result<NoisyDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols.last() != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header f0,...,f{d-1},label with d >= 2".into(),
        });
    }
    let d = cols.len() - 1;
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column f{j}, got '{c}'"),
            });
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in lines {
        let line_num = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != d + 1 {
            return Err(Error::Parse {
                line: line_num,
                msg: format!("expected {} columns, got {}", d + 1, parts.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for p in &parts[..d] {
            let v: f64 = p.trim().parse().map_err(|_| Error::Parse {
                line: line_num,
                msg: format!("bad feature value '{p}'"),
            })?;
            row.push(v);
        }
        let label: usize = parts[d].trim().parse().map_err(|_| Error::Parse {
            line: line_num,
            msg: format!("bad label '{}'", parts[d]),
        })?;
        if label >= k {
            return Err(Error::Parse {
                line: line_num,
                msg: format!("label {label} out of range for K = {k}"),
            });
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let features = Mat64::from_rows(rows)?;
    NoisyDataset::clean(features, labels, k)
}
