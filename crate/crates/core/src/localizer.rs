//! Coarse object localization from the two deepest backbone stages, plus
//! the region-proportion head that routes detail extraction.
//!
//! The deepest feature map is upsampled ×2 on entry so both streams share
//! one resolution. Each stream then passes through two gated residual
//! stages — channel attention, then spatial attention — and the streams are
//! fused by a 3×3 convolution back to the common width. Every stage has the
//! form `x ⊗ gate ⊕ x`, so with non-negative inputs the output is bounded
//! between `x` and `2x`: gating can emphasize, never erase.
//!
//! With `cross_gating` enabled each stream is gated by a signal computed
//! from the *other* stream instead of from itself; the gate weights stay
//! with the consuming stream.

use rand_chacha::ChaCha8Rng;

use crate::attention::{channel_attention_gate, spatial_attention_gate, ChannelAttentionParams};
use crate::tensor::{Graph, ParamStore, Shape, Tensor, Var};
use crate::{Error, Result};

/// Size regime of a salient region, by its share of the image area.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SizeBin {
    Small,
    Mid,
    Large,
}

/// Classify an area proportion against the two bin edges. Both edges are
/// inclusive to the middle bin: `lo ≤ p ≤ hi` is `Mid`.
pub fn bin_proportion(p: f64, lo: f64, hi: f64) -> SizeBin {
    if p < lo {
        SizeBin::Small
    } else if p > hi {
        SizeBin::Large
    } else {
        SizeBin::Mid
    }
}

/// Bound weights of the localization stage: one channel-attention gate per
/// stream and the 2C→C fusion convolution.
#[derive(Clone, Copy)]
pub struct LocalizerParams {
    pub ca4: ChannelAttentionParams,
    pub ca5: ChannelAttentionParams,
    pub fuse_w: Var,
    pub fuse_b: Var,
}

impl LocalizerParams {
    pub fn register(store: &mut ParamStore, channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        ChannelAttentionParams::register(store, "loc.ca4", channels, ratio, rng)?;
        ChannelAttentionParams::register(store, "loc.ca5", channels, ratio, rng)?;
        let fan_in = 2 * channels * 9;
        store.insert("loc.fuse.w", Tensor::init_fan_in(Shape::new(channels, 2 * channels, 3, 3), fan_in, rng))?;
        store.insert("loc.fuse.b", Tensor::zeros(Shape::new(1, channels, 1, 1)))?;
        Ok(())
    }

    pub fn bind(store: &ParamStore, g: &mut Graph) -> Result<LocalizerParams> {
        Ok(LocalizerParams {
            ca4: ChannelAttentionParams::bind(store, g, "loc.ca4")?,
            ca5: ChannelAttentionParams::bind(store, g, "loc.ca5")?,
            fuse_w: store.bind(g, "loc.fuse.w")?,
            fuse_b: store.bind(g, "loc.fuse.b")?,
        })
    }
}

/// Gated residual channel stage: `x ⊗ channel_gate(source) ⊕ x`.
pub fn channel_stage(g: &mut Graph, x: Var, source: Var, p: ChannelAttentionParams) -> Result<Var> {
    let gate = channel_attention_gate(g, source, p)?;
    let gated = g.mul(x, gate)?;
    g.add(gated, x)
}

/// Gated residual spatial stage: `x ⊗ spatial_gate(source) ⊕ x`.
pub fn spatial_stage(g: &mut Graph, x: Var, source: Var) -> Result<Var> {
    let gate = spatial_attention_gate(g, source)?;
    let gated = g.mul(x, gate)?;
    g.add(gated, x)
}

/// Fuse the two deepest stages into one localization map.
///
/// `f4`: (N,C,2h,2w); `f5`: (N,C,h,w). Output (N,C,2h,2w).
pub fn localize(g: &mut Graph, f4: Var, f5: Var, p: &LocalizerParams, cross_gating: bool) -> Result<Var> {
    let s4 = g.shape(f4);
    let s5 = g.shape(f5);
    if s4.c != s5.c {
        return Err(Error::Shape(format!("localize streams must share channels: {s4} vs {s5}")));
    }
    if s4.h != 2 * s5.h || s4.w != 2 * s5.w {
        return Err(Error::Shape(format!("localize expects f4 at twice f5 resolution: {s4} vs {s5}")));
    }
    let f5u = g.upsample_nearest(f5, 2)?;

    let (c4_src, c5_src) = if cross_gating { (f5u, f4) } else { (f4, f5u) };
    let v4 = channel_stage(g, f4, c4_src, p.ca4)?;
    let v5 = channel_stage(g, f5u, c5_src, p.ca5)?;

    let (s4_src, s5_src) = if cross_gating { (v5, v4) } else { (v4, v5) };
    let w4 = spatial_stage(g, v4, s4_src)?;
    let w5 = spatial_stage(g, v5, s5_src)?;

    let cat = g.concat_channels(w4, w5)?;
    g.conv2d(cat, p.fuse_w, p.fuse_b)
}

/// Bound weights of the proportion head: a two-layer perceptron on pooled
/// localization features.
#[derive(Clone, Copy)]
pub struct ProportionHeadParams {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl ProportionHeadParams {
    pub fn register(store: &mut ParamStore, channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        store.insert("prop.fc1.w", Tensor::init_fan_in(Shape::new(1, 1, hidden, channels), channels, rng))?;
        store.insert("prop.fc1.b", Tensor::zeros(Shape::new(1, hidden, 1, 1)))?;
        store.insert("prop.fc2.w", Tensor::init_fan_in(Shape::new(1, 1, 1, hidden), hidden, rng))?;
        store.insert("prop.fc2.b", Tensor::zeros(Shape::new(1, 1, 1, 1)))?;
        Ok(())
    }

    pub fn bind(store: &ParamStore, g: &mut Graph) -> Result<ProportionHeadParams> {
        Ok(ProportionHeadParams {
            fc1_w: store.bind(g, "prop.fc1.w")?,
            fc1_b: store.bind(g, "prop.fc1.b")?,
            fc2_w: store.bind(g, "prop.fc2.w")?,
            fc2_b: store.bind(g, "prop.fc2.b")?,
        })
    }
}

/// Estimate the salient-area proportion from the deepest backbone feature:
/// pool → dense → tanh → dense → sigmoid. Output (N,1,1,1) in (0,1).
pub fn proportion_head(g: &mut Graph, f5: Var, p: ProportionHeadParams) -> Result<Var> {
    let pooled = g.global_avg_pool(f5)?;
    let h = g.fully_connected(pooled, p.fc1_w, p.fc1_b)?;
    let h = g.tanh(h)?;
    let out = g.fully_connected(h, p.fc2_w, p.fc2_b)?;
    g.sigmoid(out)
}
