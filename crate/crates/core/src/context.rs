//! Cross-level context enhancement in the wavelet domain.
//!
//! Two adjacent backbone features are aligned to a common width and
//! resolution, decomposed into four Haar sub-bands each, and every band of
//! one level attends to the matching band of the other (both directions).
//! Running attention on half-resolution bands keeps the attention matrix at
//! a quarter of the full-resolution size. The reassembled interaction
//! features are concatenated with their aligned inputs, refined by a
//! channel-then-spatial attention block, and fused by a 3×3 convolution.

use rand_chacha::ChaCha8Rng;

use crate::attention::{channel_attention_gate, spatial_attention_gate, ChannelAttentionParams};
use crate::tensor::{Graph, ParamStore, Shape, Tensor, Var};
use crate::wavelet::{dwt2, idwt2, WaveletQuad};
use crate::{Error, Result};

/// Bound weights of the context stage: two 1×1 alignment convolutions, one
/// attention block per level, and the 4C→C fusion convolution.
pub struct ContextParams {
    pub align2_w: Var,
    pub align2_b: Var,
    pub align3_w: Var,
    pub align3_b: Var,
    pub at2: ChannelAttentionParams,
    pub at3: ChannelAttentionParams,
    pub fuse_w: Var,
    pub fuse_b: Var,
}

impl ContextParams {
    /// Register weights aligning inputs of width `c2`/`c3` to `common`
    /// channels. The attention blocks act on the 2·common-wide concat.
    pub fn register(store: &mut ParamStore, c2: usize, c3: usize, common: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert("ctx.align2.w", Tensor::init_fan_in(Shape::new(common, c2, 1, 1), c2, rng))?;
        store.insert("ctx.align2.b", Tensor::zeros(Shape::new(1, common, 1, 1)))?;
        store.insert("ctx.align3.w", Tensor::init_fan_in(Shape::new(common, c3, 1, 1), c3, rng))?;
        store.insert("ctx.align3.b", Tensor::zeros(Shape::new(1, common, 1, 1)))?;
        ChannelAttentionParams::register(store, "ctx.at2", 2 * common, ratio, rng)?;
        ChannelAttentionParams::register(store, "ctx.at3", 2 * common, ratio, rng)?;
        let fan_in = 4 * common * 9;
        store.insert("ctx.fuse.w", Tensor::init_fan_in(Shape::new(common, 4 * common, 3, 3), fan_in, rng))?;
        store.insert("ctx.fuse.b", Tensor::zeros(Shape::new(1, common, 1, 1)))?;
        Ok(())
    }

    pub fn bind(store: &ParamStore, g: &mut Graph) -> Result<ContextParams> {
        Ok(ContextParams {
            align2_w: store.bind(g, "ctx.align2.w")?,
            align2_b: store.bind(g, "ctx.align2.b")?,
            align3_w: store.bind(g, "ctx.align3.w")?,
            align3_b: store.bind(g, "ctx.align3.b")?,
            at2: ChannelAttentionParams::bind(store, g, "ctx.at2")?,
            at3: ChannelAttentionParams::bind(store, g, "ctx.at3")?,
            fuse_w: store.bind(g, "ctx.fuse.w")?,
            fuse_b: store.bind(g, "ctx.fuse.b")?,
        })
    }
}

/// Row-stochastic pixel-affinity matrix between two equal-shape features:
/// Â = flatten(a)ᵀ ∈ (hw)×C, B̃ = flatten(b) ∈ C×(hw),
/// M = softmax(Â·B̃) over the last dim. Output (N,1,hw,hw).
pub fn attention_matrix(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let s = g.shape(a);
    if g.shape(b) != s {
        return Err(Error::Shape(format!("attention operands must match: {s} vs {}", g.shape(b))));
    }
    let hw = s.h * s.w;
    let a_flat = g.reshape(a, Shape::new(s.n, 1, s.c, hw))?;
    let a_hat = g.transpose(a_flat)?; // (N,1,hw,C)
    let b_flat = g.reshape(b, Shape::new(s.n, 1, s.c, hw))?;
    let scores = g.matmul(a_hat, b_flat)?; // (N,1,hw,hw)
    g.softmax(scores)
}

/// Mix `a`'s pixels by the affinity rows and add the residual:
/// out = unflatten((M·Â)ᵀ) ⊕ a. An identity M returns exactly 2a.
pub fn apply_attention(g: &mut Graph, m: Var, a: Var) -> Result<Var> {
    let s = g.shape(a);
    let hw = s.h * s.w;
    let a_flat = g.reshape(a, Shape::new(s.n, 1, s.c, hw))?;
    let a_hat = g.transpose(a_flat)?; // (N,1,hw,C)
    let mixed = g.matmul(m, a_hat)?; // (N,1,hw,C)
    let mixed_t = g.transpose(mixed)?; // (N,1,C,hw)
    let back = g.reshape(mixed_t, s)?;
    g.add(back, a)
}

/// One direction of the per-band interaction: `a` attends over itself with
/// affinities scored against `b`.
pub fn wavelet_interaction(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let m = attention_matrix(g, a, b)?;
    apply_attention(g, m, a)
}

/// Channel-then-spatial refinement without residual: the spatial gate is
/// computed from the channel-gated feature.
fn at_block(g: &mut Graph, x: Var, ca: ChannelAttentionParams) -> Result<Var> {
    let cgate = channel_attention_gate(g, x, ca)?;
    let xc = g.mul(x, cgate)?;
    let sgate = spatial_attention_gate(g, xc)?;
    g.mul(xc, sgate)
}

/// Full context stage. `f2`: (N,C2,H,W); `f3`: (N,C3,H/2,W/2) with H, W
/// even. Output (N,common,H,W).
pub fn context_forward(g: &mut Graph, f2: Var, f3: Var, p: &ContextParams) -> Result<Var> {
    let s2 = g.shape(f2);
    let s3 = g.shape(f3);
    if s2.h != 2 * s3.h || s2.w != 2 * s3.w {
        return Err(Error::Argument(format!(
            "context expects f2 at twice f3 resolution, got {s2} vs {s3}"
        )));
    }
    let a2 = g.conv2d(f2, p.align2_w, p.align2_b)?;
    let f3u = g.upsample_nearest(f3, 2)?;
    let a3 = g.conv2d(f3u, p.align3_w, p.align3_b)?;

    let q2 = dwt2(g, a2)?;
    let q3 = dwt2(g, a3)?;
    let mut i2 = [Var::default(); 4];
    let mut i3 = [Var::default(); 4];
    for (k, (b2, b3)) in [(q2.ll, q3.ll), (q2.lh, q3.lh), (q2.hl, q3.hl), (q2.hh, q3.hh)]
        .into_iter()
        .enumerate()
    {
        i2[k] = wavelet_interaction(g, b2, b3)?;
        i3[k] = wavelet_interaction(g, b3, b2)?;
    }
    let f2i = idwt2(g, WaveletQuad { ll: i2[0], lh: i2[1], hl: i2[2], hh: i2[3] })?;
    let f3i = idwt2(g, WaveletQuad { ll: i3[0], lh: i3[1], hl: i3[2], hh: i3[3] })?;

    let cat2 = g.concat_channels(f2i, a2)?;
    let cat3 = g.concat_channels(f3i, a3)?;
    let en2 = at_block(g, cat2, p.at2)?;
    let en3 = at_block(g, cat3, p.at3)?;

    let all = g.concat_channels(en2, en3)?;
    g.conv2d(all, p.fuse_w, p.fuse_b)
}
