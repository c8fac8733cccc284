//! Toy training harness: seeded batch sampling with augmentation, RMSprop
//! updates, a byte-stable loss log, periodic checkpoints, and exact resume.
//!
//! Determinism works by deriving one RNG per step: `ChaCha8Rng` seeded with
//! the run seed on stream `step + 1` (stream 0 initializes parameters). A
//! resumed run therefore replays the exact sample draws and augmentations the
//! uninterrupted run would have made from that step on, and — because
//! checkpoints carry the full optimizer state — the exact parameter
//! trajectory too.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{augment, load_dataset, Sample};
use crate::losses::LossReport;
use crate::metrics::mae;
use crate::model::{load_checkpoint, save_checkpoint, train_step, Model};
use crate::tensor::{Graph, ParamStore, Shape, Tensor};
use crate::{Error, Result};

/// Outcome of one training run (fresh or resumed).
#[derive(Clone, Debug)]
pub struct TrainSummary {
    /// Step this run started from (0 for fresh runs, checkpoint step when
    /// resumed).
    pub start_step: u64,
    /// `(step, report)` for every step this run executed; steps are 1-based.
    pub rows: Vec<(u64, LossReport)>,
    /// Mean absolute error of the final model over the training set,
    /// predictions routed by the model's own proportion estimate.
    pub final_train_mae: f64,
    /// Mean squared error of the proportion estimate over the training set.
    pub final_pg_mse: f64,
    /// Checkpoints written, in order; the last one is `ckpt_final.bin`.
    pub checkpoints: Vec<PathBuf>,
}

/// Stack `batch` samples into `(N,3,S,S)` image and `(N,1,S,S)` mask tensors.
fn stack_batch(batch: &[Sample]) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let n = batch.len();
    let s = batch[0].size;
    let mut images = Vec::with_capacity(n * 3 * s * s);
    let mut masks = Vec::with_capacity(n * s * s);
    let mut props = Vec::with_capacity(n);
    for sample in batch {
        images.extend_from_slice(&sample.image);
        masks.extend_from_slice(&sample.mask);
        props.push(sample.proportion);
    }
    let images = Tensor::new(Shape::new(n, 3, s, s), images)?;
    let masks = Tensor::new(Shape::new(n, 1, s, s), masks)?;
    Ok((images, masks, props))
}

/// Score the frozen model over the whole training set: per-image saliency MAE
/// and squared proportion error, averaged in dataset order. Forward passes run
/// in parallel on disjoint graphs; aggregation is sequential, so the result is
/// deterministic.
pub fn score_training_set(
    model: &Model,
    store: &ParamStore,
    dataset: &[Sample],
) -> Result<(f64, f64)> {
    let scores: Vec<(f64, f64)> = dataset
        .par_iter()
        .map(|sample| -> Result<(f64, f64)> {
            let s = sample.size;
            let mut g = Graph::new();
            let b = model.bind(store, &mut g)?;
            let image = g.constant(Tensor::new(Shape::new(1, 3, s, s), sample.image.clone())?);
            let (out, _bins) = model.infer(&mut g, &b, image)?;
            let pred = g.value(out.s).data().to_vec();
            let prop = g.value(out.proportion).data()[0];
            let err = prop - sample.proportion;
            Ok((mae(&pred, &sample.mask)?, err * err))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let (mut mae_sum, mut mse_sum) = (0.0, 0.0);
    for (m, e) in scores {
        mae_sum += m;
        mse_sum += e;
    }
    Ok((mae_sum / n, mse_sum / n))
}

/// Render the loss log as CSV, one row per executed step.
pub fn loss_csv(rows: &[(u64, LossReport)]) -> String {
    let mut out = String::from("step,bce,iou,fm,mse,total\n");
    for (step, r) in rows {
        writeln!(out, "{},{},{},{},{},{}", step, r.bce, r.iou, r.fm, r.mse, r.total)
            .expect("string write");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run training per `cfg`: load the dataset from `cfg.data_dir`, train for
/// `cfg.steps` total steps (resuming from `cfg.resume` if set), and leave
/// `loss_log.csv`, checkpoints, `config_resolved.txt`, and `run_info.txt`
/// under `cfg.out_dir`. `on_step` observes every completed step.
///
/// The loss log contains only the steps this run executed; a resumed run's
/// log is the exact tail of the uninterrupted run's log.
pub fn run(cfg: &RunConfig, mut on_step: impl FnMut(u64, &LossReport)) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let data_dir = Path::new(&cfg.data_dir);
    let dataset = load_dataset(data_dir, cfg.input_size)?;
    let out_dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("config_resolved.txt"), &cfg.resolved_text())?;

    let model = Model::new(cfg)?;
    let fingerprint = cfg.architecture_fingerprint();
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.register(&mut store, &mut init_rng)?;

    let mut start_step = 0u64;
    if !cfg.resume.is_empty() {
        let ckpt = Path::new(&cfg.resume);
        start_step = load_checkpoint(ckpt, &mut store, fingerprint)?;
        if start_step > cfg.steps as u64 {
            return Err(Error::Argument(format!(
                "checkpoint {} is at step {start_step}, beyond the configured {} steps",
                ckpt.display(),
                cfg.steps
            )));
        }
    }

    let mut rows: Vec<(u64, LossReport)> = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    for step in start_step..cfg.steps as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step + 1);
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let pick = &dataset[rng.gen_range(0..dataset.len())];
            batch.push(if cfg.augment { augment(pick, &mut rng) } else { pick.clone() });
        }
        let (images, masks, props) = stack_batch(&batch)?;
        let report = train_step(
            &model,
            &mut store,
            &images,
            &masks,
            &props,
            cfg.train_gate,
            &cfg.loss,
            &cfg.optim,
        )?;
        let done = step + 1;
        on_step(done, &report);
        rows.push((done, report));
        if cfg.ckpt_every > 0 && done % cfg.ckpt_every as u64 == 0 {
            let path = out_dir.join(format!("ckpt_{done:05}.bin"));
            save_checkpoint(&path, &store, fingerprint, done)?;
            checkpoints.push(path);
        }
    }

    let final_path = out_dir.join("ckpt_final.bin");
    save_checkpoint(&final_path, &store, fingerprint, cfg.steps as u64)?;
    checkpoints.push(final_path);
    write_text(&out_dir.join("loss_log.csv"), &loss_csv(&rows))?;

    let (final_train_mae, final_pg_mse) = score_training_set(&model, &store, &dataset)?;

    // Provenance lives here, away from the byte-stable data files.
    let wall = started.elapsed().as_secs_f64();
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let info = format!(
        "version = {}\nfinished_unix = {stamp}\nwall_seconds = {wall:.1}\n\
         dataset = {} ({} samples)\nparameters = {}\nsteps = {start_step}..{}\n\
         final_train_mae = {final_train_mae}\nfinal_pg_mse = {final_pg_mse}\n",
        env!("CARGO_PKG_VERSION"),
        data_dir.display(),
        dataset.len(),
        store.scalar_count(),
        cfg.steps,
    );
    write_text(&out_dir.join("run_info.txt"), &info)?;

    Ok(TrainSummary { start_step, rows, final_train_mae, final_pg_mse, checkpoints })
}
