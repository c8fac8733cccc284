//! Directory-level evaluation: score every same-named prediction/ground-truth
//! PNG pair and aggregate into a CSV report.
//!
//! Pairing is by file name: `pred_dir/foo.png` is scored against
//! `gt_dir/foo.png`. Names present in only one directory are recorded as
//! skipped rather than failing the whole run. Pairs are scored in parallel,
//! but rows are emitted in lexicographic name order and the mean row is
//! accumulated in that order, so the CSV is byte-stable across runs and
//! thread counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::load_gray;
use crate::metrics::evaluate_pair;
use crate::{Error, Result};

/// One scored image pair (or the final mean row, under the name `mean`).
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub name: String,
    pub mae: f64,
    pub fbeta_max: f64,
    pub fbeta_adaptive: f64,
    pub emeasure: f64,
    pub smeasure: f64,
}

/// Outcome of scoring two directories.
#[derive(Clone, Debug)]
pub struct EvalSummary {
    /// Per-image rows in lexicographic name order.
    pub rows: Vec<EvalRow>,
    /// Arithmetic mean of each column over `rows`.
    pub mean: EvalRow,
    /// Names present under the ground-truth directory with no prediction.
    pub missing_pred: Vec<String>,
    /// Names present under the prediction directory with no ground truth.
    pub missing_gt: Vec<String>,
    /// Names whose prediction was resized (nearest) to the ground-truth size.
    pub resized: Vec<String>,
}

impl EvalSummary {
    /// True when every file found a counterpart.
    pub fn complete(&self) -> bool {
        self.missing_pred.is_empty() && self.missing_gt.is_empty()
    }
}

/// List the `.png` file names directly under `dir`.
fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

/// Nearest-neighbour resize of a single-channel map to a new size.
fn resize_nearest(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    for y in 0..dh {
        let sy = y * sh / dh;
        for x in 0..dw {
            let sx = x * sw / dw;
            out[y * dw + x] = src[sy * sw + sx];
        }
    }
    out
}

/// Score every pair that exists in both directories.
///
/// Ground truths binarize at byte value > 127; predictions keep their full
/// [0,1] range. A prediction whose size differs from its ground truth is
/// resized to match (nearest neighbour) and its name recorded in `resized`.
/// Errors if no pair matches at all.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalSummary> {
    let pred_names = png_names(pred_dir)?;
    let gt_names = png_names(gt_dir)?;
    let shared: Vec<String> = pred_names.intersection(&gt_names).cloned().collect();
    let missing_pred: Vec<String> = gt_names.difference(&pred_names).cloned().collect();
    let missing_gt: Vec<String> = pred_names.difference(&gt_names).cloned().collect();
    if shared.is_empty() {
        return Err(Error::Argument(format!(
            "no matching .png pairs between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }

    let scored: Vec<(EvalRow, bool)> = shared
        .par_iter()
        .map(|name| -> Result<(EvalRow, bool)> {
            let (pred, ph, pw) = load_gray(&pred_dir.join(name))?;
            let (gt_raw, gh, gw) = load_gray(&gt_dir.join(name))?;
            let gt: Vec<f64> = gt_raw
                .iter()
                .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
                .collect();
            let was_resized = (ph, pw) != (gh, gw);
            let pred = if was_resized {
                resize_nearest(&pred, ph, pw, gh, gw)
            } else {
                pred
            };
            let report = evaluate_pair(&pred, &gt, gh, gw)?;
            let row = EvalRow {
                name: name.clone(),
                mae: report.mae,
                fbeta_max: report.fbeta_max,
                fbeta_adaptive: report.fbeta_adaptive,
                emeasure: report.emeasure,
                smeasure: report.smeasure,
            };
            Ok((row, was_resized))
        })
        .collect::<Result<Vec<_>>>()?;

    let resized: Vec<String> = scored
        .iter()
        .filter(|(_, r)| *r)
        .map(|(row, _)| row.name.clone())
        .collect();
    let rows: Vec<EvalRow> = scored.into_iter().map(|(row, _)| row).collect();

    let n = rows.len() as f64;
    let mut mean = EvalRow {
        name: "mean".to_string(),
        mae: 0.0,
        fbeta_max: 0.0,
        fbeta_adaptive: 0.0,
        emeasure: 0.0,
        smeasure: 0.0,
    };
    for row in &rows {
        mean.mae += row.mae;
        mean.fbeta_max += row.fbeta_max;
        mean.fbeta_adaptive += row.fbeta_adaptive;
        mean.emeasure += row.emeasure;
        mean.smeasure += row.smeasure;
    }
    mean.mae /= n;
    mean.fbeta_max /= n;
    mean.fbeta_adaptive /= n;
    mean.emeasure /= n;
    mean.smeasure /= n;

    Ok(EvalSummary {
        rows,
        mean,
        missing_pred,
        missing_gt,
        resized,
    })
}

/// Render a summary as CSV: header, one row per image, then the mean row.
pub fn summary_csv(summary: &EvalSummary) -> String {
    let mut out = String::new();
    out.push_str("name,mae,fbeta_max,fbeta_adaptive,emeasure,smeasure\n");
    for row in summary.rows.iter().chain(std::iter::once(&summary.mean)) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.name, row.mae, row.fbeta_max, row.fbeta_adaptive, row.emeasure, row.smeasure
        )
        .expect("string write");
    }
    out
}
