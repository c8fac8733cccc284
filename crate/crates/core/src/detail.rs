//! Multi-kernel detail extraction from the shallowest backbone stage, with
//! per-sample routing by predicted object size.
//!
//! A bank of five convolution sizes (1..9) is always allocated; the size
//! bin of each sample selects a nested subset — small regions use the three
//! smallest kernels, mid-size four, large all five. Routing is applied as a
//! constant 0/1 mask per sample so the unselected kernels contribute
//! *exactly* zero: outputs for a sample are unchanged — and the unselected
//! weights receive zero gradient — no matter how those weights are
//! perturbed.
//!
//! Two masked sums feed the output: a C-channel extractor sum over the
//! input feature, and a single-channel sum over its channel-max projection
//! that, after a 1×1 head and sigmoid, gates the extractor sum residually
//! (`F ⊗ W ⊕ F`).

use rand_chacha::ChaCha8Rng;

use crate::localizer::SizeBin;
use crate::tensor::{Graph, ParamStore, Shape, Tensor, Var};
use crate::Result;

/// All kernel sizes in the bank, smallest first. Bin subsets are prefixes.
pub const KERNEL_SIZES: [usize; 5] = [1, 3, 5, 7, 9];

/// Kernel sizes active for a bin. The sets are nested:
/// Small ⊂ Mid ⊂ Large.
pub fn kernel_set(bin: SizeBin) -> &'static [usize] {
    match bin {
        SizeBin::Small => &KERNEL_SIZES[..3],
        SizeBin::Mid => &KERNEL_SIZES[..4],
        SizeBin::Large => &KERNEL_SIZES[..5],
    }
}

/// Bound weights of the detail stage: per-size extractor (C→C) and
/// optimizer (1→1) convolutions plus the 1×1 gate head.
pub struct DetailParams {
    pub ext_w: [Var; 5],
    pub ext_b: [Var; 5],
    pub opt_w: [Var; 5],
    pub opt_b: [Var; 5],
    pub head_w: Var,
    pub head_b: Var,
}

impl DetailParams {
    pub fn register(store: &mut ParamStore, channels: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        for k in KERNEL_SIZES {
            let fan_ext = channels * k * k;
            store.insert(&format!("detail.ext{k}.w"), Tensor::init_fan_in(Shape::new(channels, channels, k, k), fan_ext, rng))?;
            store.insert(&format!("detail.ext{k}.b"), Tensor::zeros(Shape::new(1, channels, 1, 1)))?;
            store.insert(&format!("detail.opt{k}.w"), Tensor::init_fan_in(Shape::new(1, 1, k, k), k * k, rng))?;
            store.insert(&format!("detail.opt{k}.b"), Tensor::zeros(Shape::new(1, 1, 1, 1)))?;
        }
        store.insert("detail.head.w", Tensor::init_fan_in(Shape::new(1, 1, 1, 1), 1, rng))?;
        store.insert("detail.head.b", Tensor::zeros(Shape::new(1, 1, 1, 1)))?;
        Ok(())
    }

    pub fn bind(store: &ParamStore, g: &mut Graph) -> Result<DetailParams> {
        let mut ext_w = [Var::default(); 5];
        let mut ext_b = [Var::default(); 5];
        let mut opt_w = [Var::default(); 5];
        let mut opt_b = [Var::default(); 5];
        for (i, k) in KERNEL_SIZES.iter().enumerate() {
            ext_w[i] = store.bind(g, &format!("detail.ext{k}.w"))?;
            ext_b[i] = store.bind(g, &format!("detail.ext{k}.b"))?;
            opt_w[i] = store.bind(g, &format!("detail.opt{k}.w"))?;
            opt_b[i] = store.bind(g, &format!("detail.opt{k}.b"))?;
        }
        Ok(DetailParams {
            ext_w,
            ext_b,
            opt_w,
            opt_b,
            head_w: store.bind(g, "detail.head.w")?,
            head_b: store.bind(g, "detail.head.b")?,
        })
    }
}

/// Constant per-sample 0/1 masks, one (N,1,1,1) tensor per kernel size:
/// `masks[j][n] = 1` iff kernel `KERNEL_SIZES[j]` is active for `bins[n]`.
pub fn routing_masks(g: &mut Graph, bins: &[SizeBin]) -> Result<[Var; 5]> {
    let n = bins.len();
    let mut out = [Var::default(); 5];
    for (j, slot) in out.iter_mut().enumerate() {
        let data: Vec<f64> = bins
            .iter()
            .map(|&b| if kernel_set(b).contains(&KERNEL_SIZES[j]) { 1.0 } else { 0.0 })
            .collect();
        *slot = g.constant(Tensor::new(Shape::new(n, 1, 1, 1), data)?);
    }
    Ok(out)
}

/// Masked extractor sum `Σ_j mask_j ⊗ ext_j(f1)`: with nested kernel sets,
/// widening a sample's bin adds terms without touching the existing ones.
pub fn detail_extractor_sum(g: &mut Graph, f1: Var, p: &DetailParams, masks: &[Var; 5]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for j in 0..KERNEL_SIZES.len() {
        let conv = g.conv2d(f1, p.ext_w[j], p.ext_b[j])?;
        let masked = g.mul(conv, masks[j])?;
        acc = Some(match acc {
            Some(a) => g.add(a, masked)?,
            None => masked,
        });
    }
    Ok(acc.expect("kernel bank is non-empty"))
}

/// Full detail stage: extractor sum, single-channel optimizer sum over the
/// channel-max projection, sigmoid gate, residual application. Preserves
/// the input shape (N,C,H,W).
pub fn detail_forward(g: &mut Graph, f1: Var, p: &DetailParams, masks: &[Var; 5]) -> Result<Var> {
    let f1d = detail_extractor_sum(g, f1, p, masks)?;
    let proj = g.channel_max_pool(f1)?;
    let mut acc: Option<Var> = None;
    for j in 0..KERNEL_SIZES.len() {
        let conv = g.conv2d(proj, p.opt_w[j], p.opt_b[j])?;
        let masked = g.mul(conv, masks[j])?;
        acc = Some(match acc {
            Some(a) => g.add(a, masked)?,
            None => masked,
        });
    }
    let summed = acc.expect("kernel bank is non-empty");
    let logits = g.conv2d(summed, p.head_w, p.head_b)?;
    let gate = g.sigmoid(logits)?;
    let gated = g.mul(f1d, gate)?;
    g.add(gated, f1d)
}
