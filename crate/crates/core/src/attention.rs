//! Channel and spatial attention gates shared by the localization and
//! context stages.
//!
//! Both gates squash to (0,1) with a sigmoid and are applied by broadcast
//! multiplication. The channel gate is learned (a two-layer 1×1 bottleneck
//! over pooled features); the spatial gate is parameter-free (sigmoid of
//! the per-pixel channel maximum).

use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, ParamStore, Shape, Tensor, Var};
use crate::Result;

/// Bound weights of one channel-attention gate: squeeze C → C/r → C with
/// 1×1 convolutions and no activation between them.
#[derive(Clone, Copy)]
pub struct ChannelAttentionParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ChannelAttentionParams {
    /// Register freshly initialized weights under `prefix` for a gate over
    /// `channels` features with bottleneck width `channels / ratio`.
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let reduced = channels / ratio;
        store.insert(&format!("{prefix}.w1"), Tensor::init_fan_in(Shape::new(reduced, channels, 1, 1), channels, rng))?;
        store.insert(&format!("{prefix}.b1"), Tensor::zeros(Shape::new(1, reduced, 1, 1)))?;
        store.insert(&format!("{prefix}.w2"), Tensor::init_fan_in(Shape::new(channels, reduced, 1, 1), reduced, rng))?;
        store.insert(&format!("{prefix}.b2"), Tensor::zeros(Shape::new(1, channels, 1, 1)))?;
        Ok(())
    }

    /// Bind the weights registered under `prefix` into `g`.
    pub fn bind(store: &ParamStore, g: &mut Graph, prefix: &str) -> Result<ChannelAttentionParams> {
        Ok(ChannelAttentionParams {
            w1: store.bind(g, &format!("{prefix}.w1"))?,
            b1: store.bind(g, &format!("{prefix}.b1"))?,
            w2: store.bind(g, &format!("{prefix}.w2"))?,
            b2: store.bind(g, &format!("{prefix}.b2"))?,
        })
    }
}

/// Per-channel gate in (0,1): global average pool, squeeze/expand through
/// the 1×1 bottleneck, sigmoid. Output (N,C,1,1), broadcastable over H×W.
pub fn channel_attention_gate(g: &mut Graph, x: Var, p: ChannelAttentionParams) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    let squeezed = g.conv2d(pooled, p.w1, p.b1)?;
    let expanded = g.conv2d(squeezed, p.w2, p.b2)?;
    g.sigmoid(expanded)
}

/// Per-pixel gate in (0,1): sigmoid of the channel-wise maximum. Output
/// (N,1,H,W), broadcastable over channels. No learned state.
pub fn spatial_attention_gate(g: &mut Graph, x: Var) -> Result<Var> {
    let maxed = g.channel_max_pool(x)?;
    g.sigmoid(maxed)
}
