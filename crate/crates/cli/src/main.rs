//! Command-line harness around the saliency crate: synthetic dataset
//! generation, toy training, directory evaluation, gradient checking, and
//! wavelet round-trip verification.
//!
//! Exit codes: 0 on success, 1 for validation failures (bad arguments,
//! malformed configs, failed checks, partial evaluations), 2 for I/O errors.
//! All commands are deterministic under a fixed seed; the only timestamped
//! output is the training run's `run_info.txt` provenance file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use saldet::config::RunConfig;
use saldet::data::{generate_dataset, load_gray};
use saldet::eval::{evaluate_dirs, summary_csv};
use saldet::gradcheck::{run_all, GradcheckOptions};
use saldet::tensor::{Graph, Shape, Tensor};
use saldet::train;
use saldet::wavelet::{dwt2, idwt2};
use saldet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "saldet",
    about = "Salient-object detection toolkit: data, training, evaluation, verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic figure/ground dataset (images, masks, index).
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of image/mask pairs.
        #[arg(long)]
        count: usize,
        /// Square edge length in pixels; must be divisible by 32.
        #[arg(long)]
        size: usize,
        /// RNG seed.
        #[arg(long)]
        seed: u64,
    },
    /// Train on a generated dataset, driven by a key = value config file.
    TrainToy {
        /// Config file path.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's out_dir when given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score same-named prediction/ground-truth PNG pairs into a CSV report.
    Eval {
        /// Directory of prediction maps.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth masks.
        #[arg(long)]
        gt: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Which F-measure the summary line quotes (the CSV carries both).
        #[arg(long, value_enum, default_value_t = ThresholdMode::Max)]
        threshold_mode: ThresholdMode,
    },
    /// Run the finite-difference gradient suite and report per-check errors.
    Gradcheck {
        /// RNG seed for probe points and projections.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decompose an image one wavelet level, reconstruct, and report error.
    DwtRoundtrip {
        /// Grayscale PNG with even width and height.
        #[arg(long)]
        image: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThresholdMode {
    /// Quote the best F over all 256 thresholds.
    Max,
    /// Quote F at the per-image adaptive threshold (twice the mean).
    Adaptive,
}

fn main() -> ExitCode {
    // Argument mistakes are validation failures (exit 1), not clap's
    // conventional exit 2, which this tool reserves for I/O errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { out, count, size, seed } => cmd_gen_data(&out, count, size, seed),
        Command::TrainToy { config, out } => cmd_train_toy(&config, out.as_deref()),
        Command::Eval { pred, gt, out, threshold_mode } => {
            cmd_eval(&pred, &gt, &out, threshold_mode)
        }
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::DwtRoundtrip { image } => cmd_dwt_roundtrip(&image),
    }
}

fn cmd_gen_data(out: &Path, count: usize, size: usize, seed: u64) -> Result<ExitCode> {
    generate_dataset(out, count, size, seed)?;
    println!("wrote {count} image/mask pairs ({size}x{size}) and index.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_toy(config: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = out {
        cfg.out_dir = dir.to_string_lossy().into_owned();
    }
    let summary = train::run(&cfg, |step, report| {
        if step == 1 || step % 25 == 0 {
            println!(
                "step {step:>5}  total {:.6}  (bce {:.6}, iou {:.6}, fm {:.6}, mse {:.6})",
                report.total, report.bce, report.iou, report.fm, report.mse
            );
        }
    })?;
    println!("trained steps {}..{}", summary.start_step, cfg.steps);
    println!("final train MAE = {:.6}", summary.final_train_mae);
    println!("final proportion MSE = {:.6}", summary.final_pg_mse);
    if let Some(last) = summary.checkpoints.last() {
        println!("checkpoint: {}", last.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(pred: &Path, gt: &Path, out: &Path, mode: ThresholdMode) -> Result<ExitCode> {
    let summary = evaluate_dirs(pred, gt)?;
    for name in &summary.missing_pred {
        eprintln!("skipped {name}: no prediction in {}", pred.display());
    }
    for name in &summary.missing_gt {
        eprintln!("skipped {name}: no ground truth in {}", gt.display());
    }
    for name in &summary.resized {
        eprintln!("resized {name} to its ground-truth size");
    }
    std::fs::write(out, summary_csv(&summary)).map_err(|e| Error::io(out, e))?;
    let fbeta = match mode {
        ThresholdMode::Max => ("max", summary.mean.fbeta_max),
        ThresholdMode::Adaptive => ("adaptive", summary.mean.fbeta_adaptive),
    };
    println!(
        "{} pairs: MAE {:.6}  F({}) {:.6}  E {:.6}  S {:.6}  -> {}",
        summary.rows.len(),
        summary.mean.mae,
        fbeta.0,
        fbeta.1,
        summary.mean.emeasure,
        summary.mean.smeasure,
        out.display()
    );
    if summary.complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("evaluation incomplete: some files had no counterpart");
        Ok(ExitCode::from(1))
    }
}

fn cmd_gradcheck(seed: u64) -> Result<ExitCode> {
    let results = run_all(&GradcheckOptions { seed, corrupt_analytic: false })?;
    let mut failures = 0usize;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict}  {:<28} worst rel err {:>12.3e}  (tol {:.0e})",
            r.name, r.worst_rel_err, r.tolerance
        );
        if !r.passed {
            println!("      at {}", r.worst_detail);
            failures += 1;
        }
    }
    println!("{} checks, {failures} failures", results.len());
    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_dwt_roundtrip(image: &Path) -> Result<ExitCode> {
    let (vals, h, w) = load_gray(image)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Argument(format!(
            "{}: wavelet round-trip needs even dimensions, got {h}x{w}",
            image.display()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(Shape::new(1, 1, h, w), vals)?);
    let quad = dwt2(&mut g, x)?;
    let recon = idwt2(&mut g, quad)?;

    let xs = g.value(x).data();
    let rs = g.value(recon).data();
    let mut max_err = 0.0f64;
    for (a, b) in xs.iter().zip(rs) {
        max_err = max_err.max((a - b).abs());
    }
    let energy_in: f64 = xs.iter().map(|v| v * v).sum();
    let mut energy_coef = 0.0f64;
    for band in [quad.ll, quad.lh, quad.hl, quad.hh] {
        energy_coef += g.value(band).data().iter().map(|v| v * v).sum::<f64>();
    }
    let residual = if energy_in > 0.0 {
        (energy_in - energy_coef).abs() / energy_in
    } else {
        (energy_in - energy_coef).abs()
    };
    println!("image {} ({h}x{w})", image.display());
    println!("max abs reconstruction error = {max_err:.3e}");
    println!("relative energy residual     = {residual:.3e}");
    Ok(ExitCode::SUCCESS)
}
