//! Experiment harness CLI: theoretical bound tables, gradient checking,
//! noise injection, training runs, τ sweeps, loss comparisons, and
//! bitwise replay of stored results.
//!
//! Exit codes: 0 success, 2 config or input error, 3 numerical abort
//! (non-finite loss), 4 check failure (gradcheck or replay mismatch).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use logitlab::bounds::bounds_csv;
use logitlab::config::{DatasetConfig, ExperimentConfig, NoiseConfig};
use logitlab::error::Error;
use logitlab::experiment::{
    compare_csv, config_hash, read_json, replay_compare, replay_experiment, run_compare,
    run_experiment, tool_version, write_json_atomic, CompareResult, ExperimentResult,
};
use logitlab::gradcheck::{default_clips, default_zoo, run_suite};
use logitlab::losses::LossSpec;
use logitlab::noise::save_noisy_csv;
use logitlab::numerics::Rng;
use logitlab::train::{default_inv_tau_grid, sweep_tau, SweepCell, TrainConfig, TrainReport};

const OUT_DIR_ENV: &str = "LOGITLAB_OUT_DIR";

#[derive(Parser)]
#[command(name = "logitlab", version, about = "Noise-robust classification lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit (k, tau, lower, upper, a_const) CSV rows over a τ grid.
    Bounds(BoundsArgs),
    /// Finite-difference check of every analytic loss gradient.
    Gradcheck(GradcheckArgs),
    /// Inject label noise per config and report measured rates.
    Noise(NoiseArgs),
    /// Run one training experiment from a JSON config.
    Train(TrainArgs),
    /// Sweep 1/τ on a validation split and retrain with the winner.
    Sweep(SweepArgs),
    /// Run each loss with and without logit clipping across seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Comma-separated class counts, e.g. 2,10,100
    #[arg(long, default_value = "2,10,100")]
    k: String,
    #[arg(long, default_value_t = 0.1)]
    tau_min: f64,
    #[arg(long, default_value_t = 5.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_step: f64,
    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Comma-separated base-loss names, or 'all'
    #[arg(long, default_value = "all")]
    losses: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Deliberately corrupt the analytic gradients (negative control)
    #[arg(long, hide = true, default_value_t = false)]
    corrupt_grad: bool,
}

#[derive(Args)]
struct NoiseArgs {
    /// JSON config with at least dataset and noise sections
    #[arg(long)]
    config: PathBuf,
    /// Seed override (default: train.seed from the config, else 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Write the noisy labels as CSV (index,noisy_label)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "replay", conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Re-run a stored result and require a bitwise-equal report
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Result JSON path (default: $LOGITLAB_OUT_DIR/train-<hash>.json or stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated 1/τ grid (default 0.1,0.5,…,5.0)
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required_unless_present = "replay", conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Re-run a stored comparison and require bitwise-equal reports
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the summary table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Loose config shape for the noise subcommand: accepts a full
/// experiment config but only needs dataset and noise.
#[derive(Deserialize)]
struct NoiseJob {
    dataset: DatasetConfig,
    noise: NoiseConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    #[allow(dead_code)]
    model: Option<serde_json::Value>,
    #[serde(default)]
    #[allow(dead_code)]
    loss: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct SweepOutput {
    config: ExperimentConfig,
    config_sha256: String,
    grid: Vec<f64>,
    val_fraction: f64,
    winner_inv_tau: f64,
    table: Vec<SweepCell>,
    report: TrainReport,
    version: String,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::config(format!("bad {what} entry '{part}'")))
        })
        .collect()
}

/// Resolve the output target: explicit path, else a generated name under
/// $LOGITLAB_OUT_DIR, else None (stdout).
fn resolve_out(explicit: Option<PathBuf>, stem: &str, hash: &str) -> Option<PathBuf> {
    if explicit.is_some() {
        return explicit;
    }
    std::env::var_os(OUT_DIR_ENV)
        .map(|dir| Path::new(&dir).join(format!("{stem}-{}.json", &hash[..8.min(hash.len())])))
}

fn emit_json<T: Serialize>(value: &T, out: Option<PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => {
            write_json_atomic(&path, value)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn cmd_bounds(args: BoundsArgs) -> Result<ExitCode, Error> {
    let ks: Vec<usize> = parse_list(&args.k, "K")?;
    let csv = bounds_csv(&ks, args.tau_min, args.tau_max, args.tau_step)?;
    match args.out {
        Some(path) => {
            std::fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let losses = if args.losses.trim() == "all" {
        default_zoo()
    } else {
        parse_list::<String>(&args.losses, "loss")?
            .iter()
            .map(|name| {
                logitlab::config::LossConfig::plain(name)
                    .build()
                    .map(|spec: LossSpec| spec.base)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    if args.trials == 0 {
        eprintln!("warning: trials = 0, every check passes vacuously");
    }
    let reports = run_suite(
        &losses,
        &default_clips(),
        args.trials,
        args.tolerance,
        args.seed,
        args.corrupt_grad,
    )?;
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{} {} x {} trials={} max_rel_err={:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.loss,
            r.clip,
            r.trials,
            r.max_rel_error
        );
        all_pass &= r.pass;
    }
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

fn cmd_noise(args: NoiseArgs) -> Result<ExitCode, Error> {
    let job: NoiseJob = read_json(&args.config)?;
    let seed = args
        .seed
        .or_else(|| job.train.as_ref().map(|t| t.seed))
        .unwrap_or(0);
    let root = Rng::from_seed(seed);
    let (mut train_set, _test) = job.dataset.load_pair(&root.substream("data"))?;
    job.noise
        .apply(&mut train_set, &mut root.substream("noise"))?;
    if let Some(clean) = &train_set.clean_labels {
        let (eta_hat, confusion) =
            logitlab::noise::measure_noise(clean, &train_set.noisy_labels, train_set.k);
        println!("n = {}, k = {}, seed = {seed}", train_set.n(), train_set.k);
        println!("measured_eta = {eta_hat:.6}");
        println!("confusion (clean row -> observed column):");
        for j in 0..train_set.k {
            let row: Vec<String> = confusion
                .row(j)
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect();
            println!("  {}", row.join(" "));
        }
    }
    if let Some(out) = args.out {
        save_noisy_csv(&out, &train_set.noisy_labels)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    if let Some(stored_path) = args.replay {
        let stored: ExperimentResult = read_json(&stored_path)?;
        let (fresh, matched) = replay_experiment(&stored)?;
        println!(
            "replay {}: {}",
            stored_path.display(),
            if matched { "PASS (bitwise)" } else { "FAIL" }
        );
        if let Some(out) = args.out {
            write_json_atomic(&out, &fresh)?;
        }
        return Ok(if matched {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(4)
        });
    }
    let config: ExperimentConfig = read_json(args.config.as_ref().unwrap())?;
    let result = run_experiment(&config)?;
    let out = resolve_out(args.out, "train", &result.config_sha256);
    emit_json(&result, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let config: ExperimentConfig = read_json(&args.config)?;
    let grid = match &args.grid {
        Some(s) => parse_list::<f64>(s, "grid")?,
        None => default_inv_tau_grid(),
    };
    let seed = config.train.seed;
    let (train_set, test_set, _measured) = logitlab::experiment::prepare_data(&config, seed)?;
    let spec = config.loss.build()?;
    let model_cfg = config.model.clone();
    let (d, k) = (train_set.d(), train_set.k);
    let factory = move |rng: &mut Rng| model_cfg.build(d, k, rng);
    let sweep = sweep_tau(
        &factory,
        &train_set,
        &spec,
        &grid,
        &config.train,
        args.val_fraction,
        &test_set,
    )?;
    println!("winner 1/tau = {} (tau = {})", sweep.winner, 1.0 / sweep.winner);
    for cell in &sweep.table {
        println!("  1/tau = {:<4} val_acc = {:.4}", cell.param, cell.val_accuracy);
    }
    let hash = config_hash(&config)?;
    let output = SweepOutput {
        config,
        config_sha256: hash.clone(),
        grid,
        val_fraction: args.val_fraction,
        winner_inv_tau: sweep.winner,
        table: sweep.table,
        report: sweep.report,
        version: tool_version(),
    };
    if let Some(path) = resolve_out(args.out, "sweep", &hash) {
        write_json_atomic(&path, &output)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Error> {
    if let Some(stored_path) = args.replay {
        let stored: CompareResult = read_json(&stored_path)?;
        let (fresh, matched) = replay_compare(&stored)?;
        println!(
            "replay {}: {}",
            stored_path.display(),
            if matched { "PASS (bitwise)" } else { "FAIL" }
        );
        if let Some(out) = args.out {
            write_json_atomic(&out, &fresh)?;
        }
        return Ok(if matched {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(4)
        });
    }
    let config: logitlab::config::CompareConfig = read_json(args.config.as_ref().unwrap())?;
    let result = run_compare(&config)?;
    for row in &result.rows {
        println!(
            "{:<28} lc={:<5} mean={:.4} std={:.4}",
            row.loss, row.logit_clip, row.mean, row.std
        );
    }
    if let Some(csv_path) = &args.csv {
        std::fs::write(csv_path, compare_csv(&result))?;
        eprintln!("wrote {}", csv_path.display());
    }
    let out = resolve_out(args.out, "compare", &result.config_sha256);
    emit_json(&result, out)?;
    Ok(ExitCode::SUCCESS)
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::NonFiniteLoss { .. } => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Bounds(args) => cmd_bounds(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::Noise(args) => cmd_noise(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
