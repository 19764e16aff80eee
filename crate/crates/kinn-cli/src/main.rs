//! `kinn` command line: dataset generation, analytic verification, training,
//! evaluation, autoregressive rollout, and the depth/direction ablations.
//!
//! Exit codes: 0 success, 1 verification failure, 2 config error, 3 I/O
//! error, 4 dataset-hash mismatch, 5 training divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{DatasetSection, ExperimentConfig};
use kinn_core::ablation::{ablation_csv, run_depth_ablation, run_direction_ablation, AblationRow};
use kinn_core::dataset::{
    check_poisson_dataset, config_hash, ensure_dir, load_poisson_dataset, load_sequence_split,
    poisson_dataset_up_to_date, read_split_meta, sequence_dataset_up_to_date,
    write_poisson_dataset, write_sequence_split,
};
use kinn_core::error::{Error, Result};
use kinn_core::model::OperatorParams;
use kinn_core::params::{ParamTree, Params};
use kinn_core::poisson::generate_dataset;
use kinn_core::scalar::Scalar;
use kinn_core::sequence::{
    forecast_window, make_sequence_dataset, rollout_eval_set, train_forecaster, ForecasterParams,
};
use kinn_core::tensor::Tensor;
use kinn_core::train::{evaluate_split, metrics_log_csv, train_operator, TrainResult};
use kinn_core::verify::{run_checks, VerifyLevel};

#[derive(Parser)]
#[command(name = "kinn", version, about = "Kirchhoff state-space dynamics: data, verification, training, rollout, ablations")]
struct Cli {
    /// Experiment config (strict JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output/working directory for artifacts.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Runtime float precision (verification is always f64).
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Depth,
    Direction,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset (no-op when hashes already match).
    GenData,
    /// Run the analytic oracle suite; exit 0 iff every check passes.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Quick)]
        level: Level,
        /// Only run checks whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Train the operator model on the configured Poisson dataset.
    Train,
    /// Re-evaluate a checkpoint on one split.
    Evaluate {
        #[arg(long, default_value = "val")]
        split: String,
        /// Checkpoint path (default: <out>/checkpoint_best.kinn1).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the sequence forecaster and score an autoregressive rollout.
    Rollout {
        /// Override the config's rollout horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Depth or direction ablation: one training run per value.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated variant values, e.g. 1,2,3,4.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::NonDissipative { .. } => 2,
        Error::Io(_) | Error::Json(_) | Error::Format(_) | Error::DegenerateData(_) => 3,
        Error::DatasetHashMismatch { .. } => 4,
        Error::Divergence { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    precision: &'a str,
    git: String,
    wall_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn write_run_info(out: &Path, info: &RunInfo) -> Result<()> {
    std::fs::write(out.join("run.json"), serde_json::to_vec_pretty(info)?)?;
    Ok(())
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let path = cli_config
        .as_ref()
        .ok_or_else(|| Error::Config("this command requires --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    match &cli.command {
        Command::Verify { level, filter } => cmd_verify(&cli, *level, filter.as_deref()),
        Command::GenData => cmd_gen_data(&cli),
        Command::Train => match cli.precision {
            Precision::F64 => cmd_train::<f64>(&cli),
            Precision::F32 => cmd_train::<f32>(&cli),
        },
        Command::Evaluate { split, checkpoint } => match cli.precision {
            Precision::F64 => cmd_evaluate::<f64>(&cli, split, checkpoint.as_deref()),
            Precision::F32 => cmd_evaluate::<f32>(&cli, split, checkpoint.as_deref()),
        },
        Command::Rollout { horizon } => match cli.precision {
            Precision::F64 => cmd_rollout::<f64>(&cli, *horizon),
            Precision::F32 => cmd_rollout::<f32>(&cli, *horizon),
        },
        Command::Ablate { axis, values } => match cli.precision {
            Precision::F64 => cmd_ablate::<f64>(&cli, *axis, values),
            Precision::F32 => cmd_ablate::<f32>(&cli, *axis, values),
        },
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    }
}

fn data_root(cli: &Cli) -> PathBuf {
    cli.out.join("dataset")
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(cli: &Cli, level: Level, filter: Option<&str>) -> Result<ExitCode> {
    let start = Instant::now();
    let lvl = match level {
        Level::Quick => VerifyLevel::Quick,
        Level::Full => VerifyLevel::Full,
    };
    let results = run_checks(lvl, filter);
    if results.is_empty() {
        return Err(Error::Config(format!("no checks match filter {:?}", filter)));
    }
    println!("{:<6} {:<24} {:>8}  detail", "status", "check", "secs");
    for r in &results {
        println!(
            "{:<6} {:<24} {:>8.2}  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    let all_passed = results.iter().all(|r| r.passed);
    let summary = serde_json::json!({
        "level": if lvl == VerifyLevel::Full { "full" } else { "quick" },
        "passed": all_passed,
        "wall_s": start.elapsed().as_secs_f64(),
        "checks": results,
    });
    ensure_dir(&cli.out)?;
    let json_path = cli.out.join("verify.json");
    std::fs::write(&json_path, serde_json::to_vec_pretty(&summary)?)?;
    println!(
        "{} of {} checks passed in {:.1}s -> {}",
        results.iter().filter(|r| r.passed).count(),
        results.len(),
        start.elapsed().as_secs_f64(),
        json_path.display()
    );
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.config, cli.seed)?;
    let root = data_root(cli);
    match &cfg.dataset {
        DatasetSection::Poisson(pcfg) => {
            if poisson_dataset_up_to_date(&root, pcfg) {
                println!("dataset up-to-date, hashes match ({})", root.display());
                return Ok(ExitCode::SUCCESS);
            }
            let ds = generate_dataset(pcfg)?;
            write_poisson_dataset(&root, pcfg, &ds)?;
            let meta = read_split_meta(&root, "train")?;
            println!(
                "poisson dataset at {}: splits {}/{}/{}/{} on {}x{} grid (K={} / OOD K={})",
                root.display(),
                ds.train.count(),
                ds.val.count(),
                ds.test_id.count(),
                ds.test_ood.count(),
                pcfg.grid,
                pcfg.grid,
                pcfg.k,
                pcfg.k_ood,
            );
            println!(
                "norm stats: f in [{:.6}, {:.6}], u in [{:.6}, {:.6}]",
                ds.stats.min_f, ds.stats.max_f, ds.stats.min_u, ds.stats.max_u
            );
            println!("config hash {}", meta.config_hash);
        }
        DatasetSection::Sequence(scfg) => {
            if sequence_dataset_up_to_date(&root, scfg) {
                println!("dataset up-to-date, hashes match ({})", root.display());
                return Ok(ExitCode::SUCCESS);
            }
            let ds = make_sequence_dataset(scfg)?;
            write_sequence_split(&root, "train", &ds.train, scfg, scfg.seed)?;
            write_sequence_split(&root, "test", &ds.test, scfg, scfg.seed)?;
            println!(
                "sequence dataset at {}: {} train / {} test trajectories of {} steps x {} channels",
                root.display(),
                scfg.n_train,
                scfg.n_test,
                scfg.steps,
                scfg.channels()
            );
            println!("config hash {}", config_hash(scfg));
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train / evaluate
// ---------------------------------------------------------------------------

fn cmd_train<T: Scalar>(cli: &Cli) -> Result<ExitCode> {
    let start = Instant::now();
    let cfg = load_config(&cli.config, cli.seed)?;
    let pcfg = cfg.poisson()?;
    let op_cfg = cfg.model_section()?;
    let train_cfg = cfg.training_section()?;
    let root = data_root(cli);
    check_poisson_dataset(&root, pcfg)?;
    let (_, dataset) = load_poisson_dataset(&root)?;

    println!(
        "training operator ({} params scale, {} epochs, batch {}, lr {})",
        op_cfg.blocks.len(),
        train_cfg.epochs,
        train_cfg.batch_size,
        train_cfg.lr
    );
    let mut print_epoch = |train_rec: &kinn_core::train::EpochRecord,
                           val_rec: &kinn_core::train::EpochRecord| {
        if train_rec.epoch % 10 == 0 || train_rec.epoch + 1 == train_cfg.epochs {
            println!(
                "epoch {:>4}  lr {:.2e}  train loss {:.4e}  val nrmse {:.4e}",
                train_rec.epoch, train_rec.lr, train_rec.loss, val_rec.metrics.nrmse
            );
        }
    };
    let result: TrainResult<T> =
        train_operator(op_cfg, train_cfg, &dataset, Some(&mut print_epoch))?;

    ensure_dir(&cli.out)?;
    std::fs::write(cli.out.join("metrics.csv"), metrics_log_csv(&result.log))?;
    result.best_params.to_tree().save(&cli.out.join("checkpoint_best.kinn1"))?;
    result.params.to_tree().save(&cli.out.join("checkpoint_final.kinn1"))?;
    if result.rejected_steps > 0 {
        eprintln!("warning: {} optimizer steps rejected (non-finite gradients)", result.rejected_steps);
    }

    write_run_info(
        &cli.out,
        &RunInfo {
            command: "train",
            config_hash: config_hash(&cfg),
            seed: cfg.seed(),
            precision: precision_name(cli.precision),
            git: git_describe(),
            wall_s: start.elapsed().as_secs_f64(),
            extra: Some(serde_json::json!({
                "best_epoch": result.best_epoch,
                "best_val_nrmse": result.best_val.nrmse,
                "param_count": result.best_params.num_params(),
                "rejected_steps": result.rejected_steps,
            })),
        },
    )?;
    println!(
        "done in {:.1}s: best val nrmse {:.4e} at epoch {} -> {}",
        start.elapsed().as_secs_f64(),
        result.best_val.nrmse,
        result.best_epoch,
        cli.out.join("checkpoint_best.kinn1").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate<T: Scalar>(cli: &Cli, split: &str, checkpoint: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(&cli.config, cli.seed)?;
    let pcfg = cfg.poisson()?;
    let op_cfg = cfg.model_section()?;
    let root = data_root(cli);
    check_poisson_dataset(&root, pcfg)?;
    let (_, dataset) = load_poisson_dataset(&root)?;
    let split_data = match split {
        "train" => &dataset.train,
        "val" => &dataset.val,
        "test_id" => &dataset.test_id,
        "test_ood" => &dataset.test_ood,
        other => return Err(Error::Config(format!("unknown split {other}"))),
    };

    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out.join("checkpoint_best.kinn1"));
    let tree = ParamTree::<T>::load(&ckpt_path)?;
    let mut params = OperatorParams::<T>::init(
        &mut kinn_core::poisson::stream_rng(0, 0),
        op_cfg,
    )?;
    params.load_tree(&tree)?;

    let n = pcfg.grid;
    let (metrics, loss) = evaluate_split(&params, op_cfg, split_data, &dataset.stats, n)?;
    println!(
        "{split}: rmse {:.6e}  nrmse {:.6e}  max_err {:.6e}  loss {:.6e}",
        metrics.rmse, metrics.nrmse, metrics.max_err, loss
    );
    ensure_dir(&cli.out)?;
    let payload = serde_json::json!({
        "split": split,
        "checkpoint": ckpt_path.display().to_string(),
        "config_hash": config_hash(&cfg),
        "rmse": metrics.rmse,
        "nrmse": metrics.nrmse,
        "max_err": metrics.max_err,
        "loss": loss,
        "skipped_samples": metrics.skipped,
    });
    std::fs::write(
        cli.out.join(format!("eval_{split}.json")),
        serde_json::to_vec_pretty(&payload)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

fn cmd_rollout<T: Scalar>(cli: &Cli, horizon_flag: Option<usize>) -> Result<ExitCode> {
    let start = Instant::now();
    let cfg = load_config(&cli.config, cli.seed)?;
    let scfg = cfg.sequence()?;
    let fcfg = cfg.forecaster_section()?;
    let ftrain = cfg.forecast_training_section()?;
    let horizon = horizon_flag.or(cfg.rollout.map(|r| r.horizon)).unwrap_or(40);

    let root = data_root(cli);
    if !sequence_dataset_up_to_date(&root, scfg) {
        return Err(Error::DatasetHashMismatch {
            expected: config_hash(scfg),
            found: format!("no matching dataset at {}", root.display()),
        });
    }
    let (_, train_seqs) = load_sequence_split(&root, "train")?;
    let (_, test_seqs) = load_sequence_split(&root, "test")?;

    println!(
        "training forecaster ({} epochs, horizon {} teacher-forced) on {} trajectories",
        ftrain.epochs, fcfg.train_horizon, scfg.n_train
    );
    let params: ForecasterParams<T> = train_forecaster(fcfg, &ftrain, &train_seqs)?;
    ensure_dir(&cli.out)?;
    params.to_tree().save(&cli.out.join("checkpoint_forecaster.kinn1"))?;

    let test_t: Tensor<T> = test_seqs.cast();
    let model = |ctx: &Tensor<T>| Ok(forecast_window(&params, fcfg, ctx)?.0);
    let rollout = rollout_eval_set(&model, &test_t, fcfg.context_len, horizon)?;

    let mut csv = String::from("step,rel_l2\n");
    for (j, e) in rollout.per_step.iter().enumerate() {
        csv.push_str(&format!("{},{:.12e}\n", j + 1, e));
    }
    std::fs::write(cli.out.join("rollout.csv"), &csv)?;
    println!(
        "rollout over {} steps: mean relative L2 {:.4e}{}",
        rollout.per_step.len(),
        rollout.mean,
        if rollout.truncated { " (TRUNCATED: non-finite prediction)" } else { "" }
    );

    write_run_info(
        &cli.out,
        &RunInfo {
            command: "rollout",
            config_hash: config_hash(&cfg),
            seed: cfg.seed(),
            precision: precision_name(cli.precision),
            git: git_describe(),
            wall_s: start.elapsed().as_secs_f64(),
            extra: Some(serde_json::json!({
                "horizon": horizon,
                "mean_rel_l2": rollout.mean,
                "truncated": rollout.truncated,
            })),
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

fn cmd_ablate<T: Scalar>(cli: &Cli, axis: Axis, values: &[usize]) -> Result<ExitCode> {
    let start = Instant::now();
    if values.is_empty() {
        return Err(Error::Config("--values must list at least one variant".into()));
    }
    let cfg = load_config(&cli.config, cli.seed)?;
    let pcfg = cfg.poisson()?;
    let op_cfg = cfg.model_section()?;
    let train_cfg = cfg.training_section()?;
    let root = data_root(cli);
    check_poisson_dataset(&root, pcfg)?;
    let (_, dataset) = load_poisson_dataset(&root)?;

    let mut progress = |row: &AblationRow| {
        println!(
            "{:<8} params {:>8}  rel_l1 {:.4}%  nrmse {:.4e}  max_err {:.4e}  ({:.1}s)",
            row.variant, row.params, row.rel_l1_pct, row.nrmse, row.max_err, row.wall_s
        );
    };
    let (rows, axis_name, reference) = match axis {
        Axis::Depth => (
            run_depth_ablation::<T>(op_cfg, train_cfg, &dataset, values, Some(&mut progress))?,
            "depth",
            // full-scale study context (not asserted at this scale)
            serde_json::json!({
                "1-pass": 3.854e-3, "2-pass": 3.692e-3, "3-pass": 4.791e-3, "4-pass": 3.424e-3,
            }),
        ),
        Axis::Direction => (
            run_direction_ablation::<T>(op_cfg, train_cfg, &dataset, values, Some(&mut progress))?,
            "direction",
            serde_json::json!({
                "1-dir": 1.043e-2, "2-dir": 1.026e-2, "4-dir": 9.875e-3,
            }),
        ),
    };

    ensure_dir(&cli.out)?;
    let csv_path = cli.out.join(format!("ablation_{axis_name}.csv"));
    std::fs::write(&csv_path, ablation_csv(&rows))?;
    println!("wrote {}", csv_path.display());

    write_run_info(
        &cli.out,
        &RunInfo {
            command: "ablate",
            config_hash: config_hash(&cfg),
            seed: cfg.seed(),
            precision: precision_name(cli.precision),
            git: git_describe(),
            wall_s: start.elapsed().as_secs_f64(),
            extra: Some(serde_json::json!({
                "axis": axis_name,
                "values": values,
                "full_scale_reference_nrmse": reference,
            })),
        },
    )?;
    Ok(ExitCode::SUCCESS)
}
