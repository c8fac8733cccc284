//! Training losses, built on the tape so every term is differentiable.
//!
//! Four equally weighted terms supervise the network: pixelwise binary
//! cross-entropy, a soft region-overlap (IoU) loss, a soft F-measure loss,
//! and mean squared error on the predicted area proportion. Each term is
//! batch-averaged before summing so they share magnitude scale.

use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Predictions are clamped to [ε, 1−ε] before the logs in cross-entropy.
pub const BCE_CLAMP_EPS: f64 = 1e-7;

/// Loss hyperparameters: the F-measure β² weight and the small guard added
/// to overlap denominators.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub beta2: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta2: 0.3, eps: 1e-8 }
    }
}

/// Scalar values of one loss evaluation. `total` is read from the same
/// graph node the optimizer differentiates, so it equals the sum of the
/// components bitwise (in the fixed order ((bce + iou) + fm) + mse).
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub bce: f64,
    pub iou: f64,
    pub fm: f64,
    pub mse: f64,
    pub total: f64,
}

fn sub(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let nb = g.mul_scalar(b, -1.0)?;
    g.add(a, nb)
}

/// 1 − x, elementwise.
fn complement(g: &mut Graph, x: Var) -> Result<Var> {
    let nx = g.mul_scalar(x, -1.0)?;
    g.add_scalar(nx, 1.0)
}

fn check_same_shape(g: &Graph, name: &str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{name}: prediction {} and target {} must match",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Mean over batch and pixels of −[g·ln s + (1−g)·ln(1−s)], with `s`
/// clamped to [ε, 1−ε]. Uniform s = 0.5 gives ln 2 for any target.
pub fn bce_loss(g: &mut Graph, s: Var, gt: Var) -> Result<Var> {
    check_same_shape(g, "bce_loss", s, gt)?;
    let sc = g.clamp(s, BCE_CLAMP_EPS, 1.0 - BCE_CLAMP_EPS)?;
    let log_s = g.log(sc)?;
    let pos = g.mul(gt, log_s)?;
    let one_minus_s = complement(g, sc)?;
    let log_oms = g.log(one_minus_s)?;
    let one_minus_g = complement(g, gt)?;
    let neg = g.mul(one_minus_g, log_oms)?;
    let both = g.add(pos, neg)?;
    let mean = g.mean_all(both)?;
    g.mul_scalar(mean, -1.0)
}

/// Soft region overlap: per sample 1 − Σsg / (Σ(s+g−sg) + eps), averaged
/// over the batch. Exactly symmetric in its two operands.
pub fn iou_loss(g: &mut Graph, s: Var, gt: Var, eps: f64) -> Result<Var> {
    check_same_shape(g, "iou_loss", s, gt)?;
    let prod = g.mul(s, gt)?;
    let inter = g.sum_spatial(prod)?;
    let sum = g.add(s, gt)?;
    let union_elem = sub(g, sum, prod)?;
    let union = g.sum_spatial(union_elem)?;
    let union_guarded = g.add_scalar(union, eps)?;
    let ratio = g.div(inter, union_guarded)?;
    let per_sample = complement(g, ratio)?;
    g.mean_all(per_sample)
}

/// Soft F-measure loss with continuous counts TP=Σsg, FP=Σs(1−g),
/// FN=Σ(1−s)g: per sample 1 − (1+β²)TP / (β²(TP+FN) + TP+FP + eps),
/// averaged over the batch.
pub fn fm_loss(g: &mut Graph, s: Var, gt: Var, beta2: f64, eps: f64) -> Result<Var> {
    check_same_shape(g, "fm_loss", s, gt)?;
    if beta2 <= 0.0 {
        return Err(Error::Argument(format!("fm_loss beta2 must be positive, got {beta2}")));
    }
    let sg = g.mul(s, gt)?;
    let tp = g.sum_spatial(sg)?;
    let one_minus_g = complement(g, gt)?;
    let s_omg = g.mul(s, one_minus_g)?;
    let fp = g.sum_spatial(s_omg)?;
    let one_minus_s = complement(g, s)?;
    let oms_g = g.mul(one_minus_s, gt)?;
    let fn_ = g.sum_spatial(oms_g)?;

    let tp_fn = g.add(tp, fn_)?;
    let recall_term = g.mul_scalar(tp_fn, beta2)?;
    let tp_fp = g.add(tp, fp)?;
    let denom = g.add(recall_term, tp_fp)?;
    let denom = g.add_scalar(denom, eps)?;
    let numer = g.mul_scalar(tp, 1.0 + beta2)?;
    let f = g.div(numer, denom)?;
    let per_sample = complement(g, f)?;
    g.mean_all(per_sample)
}

/// Mean squared error over the batch, for (N,1,1,1) proportion estimates.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_same_shape(g, "mse_loss", pred, target)?;
    let diff = sub(g, pred, target)?;
    let sq = g.mul(diff, diff)?;
    g.mean_all(sq)
}

/// All four terms on one graph. Returns the differentiable total together
/// with the component scalars.
pub fn total_loss(
    g: &mut Graph,
    s: Var,
    gt: Var,
    pg_pred: Var,
    pg_target: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let bce = bce_loss(g, s, gt)?;
    let iou = iou_loss(g, s, gt, cfg.eps)?;
    let fm = fm_loss(g, s, gt, cfg.beta2, cfg.eps)?;
    let mse = mse_loss(g, pg_pred, pg_target)?;
    let bi = g.add(bce, iou)?;
    let bif = g.add(bi, fm)?;
    let total = g.add(bif, mse)?;
    let report = LossReport {
        bce: g.value(bce).data()[0],
        iou: g.value(iou).data()[0],
        fm: g.value(fm).data()[0],
        mse: g.value(mse).data()[0],
        total: g.value(total).data()[0],
    };
    Ok((total, report))
}
