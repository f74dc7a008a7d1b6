//! Experiment orchestration: run a configured training experiment or a
//! loss-comparison grid, persist results with their exact config and
//! content hash, and replay stored results bit for bit.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CompareConfig, ExperimentConfig, LossConfig};
use crate::error::{Error, Result};
use crate::noise::{measure_noise, NoisyDataset};
use crate::numerics::{Mat64, Rng};
use crate::train::{default_inv_tau_grid, sweep_tau, train, SweepCell, TrainReport};

/// Empirical noise statistics of the injected training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredNoise {
    pub eta_hat: f64,
    pub confusion: Mat64,
}

/// A persisted single-run result. Everything except `wall_clock_secs`
/// is deterministic given the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub report: TrainReport,
    pub measured_noise: MeasuredNoise,
    pub version: String,
    pub wall_clock_secs: f64,
}

/// SHA-256 of a config's canonical JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Prepare the (noisy train, clean test) pair plus measured noise for a
/// given seed. All randomness flows from labeled substreams of the seed.
pub fn prepare_data(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(NoisyDataset, NoisyDataset, MeasuredNoise)> {
    let root = Rng::from_seed(seed);
    let (mut train_set, test_set) = config.dataset.load_pair(&root.substream("data"))?;
    config
        .noise
        .apply(&mut train_set, &mut root.substream("noise"))?;
    let measured = match &train_set.clean_labels {
        Some(clean) => {
            let (eta_hat, confusion) = measure_noise(clean, &train_set.noisy_labels, train_set.k);
            MeasuredNoise { eta_hat, confusion }
        }
        None => MeasuredNoise {
            eta_hat: f64::NAN,
            confusion: Mat64::zeros(train_set.k, train_set.k),
        },
    };
    Ok((train_set, test_set, measured))
}

/// Run a single configured experiment end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let started = Instant::now();
    let seed = config.train.seed;
    let (train_set, test_set, measured) = prepare_data(config, seed)?;
    let spec = config.loss.build()?;
    let mut model = config.model.build(
        train_set.d(),
        train_set.k,
        &mut Rng::from_seed(seed).substream("init"),
    )?;
    let report = train(&mut model, &train_set, &spec, &config.train, &test_set)?;
    Ok(ExperimentResult {
        config: config.clone(),
        config_sha256: config_hash(config)?,
        report,
        measured_noise: measured,
        version: tool_version(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// One (loss, arm, seed) cell of a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCell {
    pub seed: u64,
    pub final_metric: f64,
    /// Selected 1/τ when the logit-clip arm tuned it.
    pub chosen_inv_tau: Option<f64>,
    pub measured_eta: f64,
    pub report: TrainReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_table: Option<Vec<SweepCell>>,
}

/// Aggregated row: one loss in one arm across all seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub loss: String,
    pub logit_clip: bool,
    pub mean: f64,
    pub std: f64,
    pub cells: Vec<CompareCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareResult {
    pub config: CompareConfig,
    pub config_sha256: String,
    pub rows: Vec<CompareRow>,
    pub version: String,
    pub wall_clock_secs: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn run_cell(
    config: &CompareConfig,
    loss_cfg: &LossConfig,
    with_lc: bool,
    seed: u64,
) -> Result<CompareCell> {
    let ecfg = ExperimentConfig {
        dataset: config.dataset.clone(),
        noise: config.noise.clone(),
        model: config.model.clone(),
        loss: loss_cfg.clone(),
        train: crate::train::TrainConfig {
            seed,
            ..config.train.clone()
        },
    };
    let (train_set, test_set, measured) = prepare_data(&ecfg, seed)?;
    let spec = loss_cfg.build()?;
    let model_cfg = config.model.clone();
    let (d, k) = (train_set.d(), train_set.k);
    let factory = move |rng: &mut Rng| model_cfg.build(d, k, rng);

    if with_lc {
        let grid = config
            .grid
            .clone()
            .unwrap_or_else(default_inv_tau_grid);
        let sweep = sweep_tau(
            &factory,
            &train_set,
            &spec,
            &grid,
            &ecfg.train,
            config.val_fraction,
            &test_set,
        )?;
        let final_metric = sweep
            .report
            .final_metric
            .ok_or_else(|| Error::config("compare requires at least one epoch"))?;
        Ok(CompareCell {
            seed,
            final_metric,
            chosen_inv_tau: Some(sweep.winner),
            measured_eta: measured.eta_hat,
            report: sweep.report,
            sweep_table: Some(sweep.table),
        })
    } else {
        let mut model = factory(&mut Rng::from_seed(seed).substream("init"))?;
        let report = train(&mut model, &train_set, &spec, &ecfg.train, &test_set)?;
        let final_metric = report
            .final_metric
            .ok_or_else(|| Error::config("compare requires at least one epoch"))?;
        Ok(CompareCell {
            seed,
            final_metric,
            chosen_inv_tau: None,
            measured_eta: measured.eta_hat,
            report,
            sweep_table: None,
        })
    }
}

/// Run every loss with and without logit clipping across all seeds.
/// The clipped arm replaces the loss's configured transform with
/// clip-by-norm at the τ selected by the validation sweep. Cells run in
/// parallel; each derives all randomness from its own seed, so the
/// schedule cannot affect the results.
pub fn run_compare(config: &CompareConfig) -> Result<CompareResult> {
    let started = Instant::now();
    if config.seeds.is_empty() {
        return Err(Error::config("compare requires at least one seed"));
    }
    if config.losses.is_empty() {
        return Err(Error::config("compare requires at least one loss"));
    }
    if config.train.epochs == 0 {
        return Err(Error::config("compare requires at least one epoch"));
    }

    let mut tasks: Vec<(usize, bool, u64)> = Vec::new();
    for (li, _) in config.losses.iter().enumerate() {
        for arm in [false, true] {
            for &seed in &config.seeds {
                tasks.push((li, arm, seed));
            }
        }
    }
    let cells: Vec<((usize, bool), CompareCell)> = tasks
        .par_iter()
        .map(|&(li, arm, seed)| -> Result<((usize, bool), CompareCell)> {
            let cell = run_cell(config, &config.losses[li], arm, seed)?;
            Ok(((li, arm), cell))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (li, loss_cfg) in config.losses.iter().enumerate() {
        for arm in [false, true] {
            let mut arm_cells: Vec<CompareCell> = cells
                .iter()
                .filter(|((l, a), _)| *l == li && *a == arm)
                .map(|(_, c)| c.clone())
                .collect();
            arm_cells.sort_by_key(|c| {
                config
                    .seeds
                    .iter()
                    .position(|&s| s == c.seed)
                    .unwrap_or(usize::MAX)
            });
            let metrics: Vec<f64> = arm_cells.iter().map(|c| c.final_metric).collect();
            let (mean, std) = mean_std(&metrics);
            let label = loss_cfg.build()?.base.label();
            rows.push(CompareRow {
                loss: label,
                logit_clip: arm,
                mean,
                std,
                cells: arm_cells,
            });
        }
    }
    Ok(CompareResult {
        config: config.clone(),
        config_sha256: config_hash(config)?,
        rows,
        version: tool_version(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Rerun a stored comparison and check that every training report
/// reproduces bitwise. Returns the fresh result and whether it matched.
pub fn replay_compare(stored: &CompareResult) -> Result<(CompareResult, bool)> {
    let fresh = run_compare(&stored.config)?;
    let mut matched = fresh.rows.len() == stored.rows.len();
    if matched {
        for (a, b) in stored.rows.iter().zip(&fresh.rows) {
            if a.loss != b.loss
                || a.logit_clip != b.logit_clip
                || a.cells.len() != b.cells.len()
                || !a
                    .cells
                    .iter()
                    .zip(&b.cells)
                    .all(|(x, y)| x.seed == y.seed && x.report.bitwise_eq(&y.report))
            {
                matched = false;
                break;
            }
        }
    }
    Ok((fresh, matched))
}

/// Rerun a stored single experiment and check the report reproduces
/// bitwise.
pub fn replay_experiment(stored: &ExperimentResult) -> Result<(ExperimentResult, bool)> {
    let fresh = run_experiment(&stored.config)?;
    let matched = fresh.report.bitwise_eq(&stored.report);
    Ok((fresh, matched))
}

/// Write JSON via a temp file and rename, so readers never observe a
/// partial file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Comparison table as CSV: one line per (loss, arm) with mean, std, and
/// per-seed metrics.
pub fn compare_csv(result: &CompareResult) -> String {
    let mut out = String::from("loss,logit_clip,mean,std,seeds,metrics,chosen_inv_tau\n");
    for row in &result.rows {
        let seeds: Vec<String> = row.cells.iter().map(|c| c.seed.to_string()).collect();
        let metrics: Vec<String> = row
            .cells
            .iter()
            .map(|c| format!("{:.6}", c.final_metric))
            .collect();
        let taus: Vec<String> = row
            .cells
            .iter()
            .map(|c| {
                c.chosen_inv_tau
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into())
            })
            .collect();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{}\n",
            row.loss,
            row.logit_clip,
            row.mean,
            row.std,
            seeds.join(";"),
            metrics.join(";"),
            taus.join(";"),
        ));
    }
    out
}
