//! Central finite-difference verification of reverse-mode gradients.
//!
//! Every differentiable operation, every network stage, every loss, and the
//! assembled model get a check: build a seeded scalar objective, backprop,
//! then probe a sample of input coordinates with central differences and
//! compare. Inputs that sit near non-smooth points (clamp edges, channel
//! argmax ties) are nudged onto one side first, since a finite difference
//! straddling a kink measures a chord, not the derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{channel_attention_gate, spatial_attention_gate, ChannelAttentionParams};
use crate::context::{context_forward, wavelet_interaction, ContextParams};
use crate::detail::{detail_forward, routing_masks, DetailParams, KERNEL_SIZES};
use crate::localizer::{localize, proportion_head, LocalizerParams, ProportionHeadParams, SizeBin};
use crate::losses::{bce_loss, fm_loss, iou_loss, mse_loss, total_loss, LossConfig};
use crate::model::Model;
use crate::tensor::{Band, Graph, ParamStore, Shape, Tensor, Var};
use crate::{Error, Result};

/// Per-coordinate probes per input tensor. Small tensors are probed fully.
const PROBES: usize = 4;
/// Relative-error tolerance for single operations and stages.
const TOL_OP: f64 = 1e-4;
/// Tolerance for the assembled model pass; depth compounds rounding.
const TOL_MODEL: f64 = 1e-3;
/// Absolute deviation below which two derivatives count as equal. Central
/// differences carry rounding noise of roughly machine-epsilon times the
/// objective over the step; near-zero gradients sit entirely inside that
/// noise, so they are compared against this floor instead of each other.
const ATOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Negative control: perturb one analytic gradient entry per check so
    /// the harness demonstrably reports failures.
    pub corrupt_analytic: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { seed: 0, corrupt_analytic: false }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub worst_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the worst error sat: input name, coordinate, both derivatives.
    pub worst_detail: String,
}

/// Builds the scalar objective from the given input tensors and returns it
/// together with the leaf handles, one per input, in the same order.
type Build = Box<dyn Fn(&mut Graph, &[Tensor]) -> Result<(Var, Vec<Var>)>>;

struct CheckSpec {
    name: String,
    tolerance: f64,
    step: f64,
    inputs: Vec<Tensor>,
    /// Diagnostic names for the inputs; positional fallback when empty.
    input_names: Vec<String>,
    build: Build,
}

/// Random-projection scalarization: J = Σ (out ⊙ R) for a fixed R, so every
/// output coordinate influences the objective with a generic weight.
fn project(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let m = g.mul(out, rv)?;
    g.sum_all(m)
}

/// Shift values lying within `gap` of any kink location outward.
fn away_from(t: &mut Tensor, kinks: &[f64], gap: f64) {
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = if *v >= k { k + gap } else { k - gap };
            }
        }
    }
}

/// Widen each position's channel-max margin so the argmax cannot switch
/// inside the finite-difference step.
fn separate_channel_max(t: &mut Tensor, margin: f64) {
    let s = t.shape();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let mut best_c = 0;
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for c in 0..s.c {
                    let v = t.at(n, c, y, x);
                    if v > best {
                        second = best;
                        best = v;
                        best_c = c;
                    } else if v > second {
                        second = v;
                    }
                }
                if best - second < margin {
                    t.set(n, best_c, y, x, best + margin);
                }
            }
        }
    }
}

struct Specs {
    rng: ChaCha8Rng,
    list: Vec<CheckSpec>,
}

impl Specs {
    fn draw(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor {
        Tensor::uniform(shape, lo, hi, &mut self.rng)
    }

    fn add(&mut self, name: &str, tolerance: f64, step: f64, inputs: Vec<Tensor>, build: Build) {
        self.list.push(CheckSpec { name: name.to_string(), tolerance, step, inputs, input_names: Vec::new(), build });
    }

    /// One-input operation: y = f(x), projected to a scalar.
    fn unary(
        &mut self,
        name: &str,
        x: Tensor,
        out_shape: Shape,
        f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static,
    ) {
        let r = self.draw(out_shape, -1.0, 1.0);
        self.add(
            name,
            TOL_OP,
            1e-5,
            vec![x],
            Box::new(move |g, t| {
                let x = g.variable(t[0].clone());
                let y = f(g, x)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![x]))
            }),
        );
    }

    /// Two-input operation: y = f(a, b), projected to a scalar.
    fn binary(
        &mut self,
        name: &str,
        a: Tensor,
        b: Tensor,
        out_shape: Shape,
        f: impl Fn(&mut Graph, Var, Var) -> Result<Var> + 'static,
    ) {
        let r = self.draw(out_shape, -1.0, 1.0);
        self.add(
            name,
            TOL_OP,
            1e-5,
            vec![a, b],
            Box::new(move |g, t| {
                let a = g.variable(t[0].clone());
                let b = g.variable(t[1].clone());
                let y = f(g, a, b)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![a, b]))
            }),
        );
    }
}

fn op_specs(s: &mut Specs) {
    // Convolution: input, kernel, and bias all checked.
    {
        let x = s.draw(Shape::new(2, 3, 5, 5), -1.0, 1.0);
        let w = s.draw(Shape::new(4, 3, 3, 3), -0.5, 0.5);
        let b = s.draw(Shape::new(1, 4, 1, 1), -0.2, 0.2);
        let r = s.draw(Shape::new(2, 4, 5, 5), -1.0, 1.0);
        s.add(
            "op.conv2d",
            TOL_OP,
            1e-5,
            vec![x, w, b],
            Box::new(move |g, t| {
                let x = g.variable(t[0].clone());
                let w = g.variable(t[1].clone());
                let b = g.variable(t[2].clone());
                let y = g.conv2d(x, w, b)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![x, w, b]))
            }),
        );
    }

    let x = s.draw(Shape::new(2, 3, 4, 4), -1.0, 1.0);
    s.unary("op.avg_pool2", x, Shape::new(2, 3, 2, 2), |g, x| g.avg_pool2(x));
    let x = s.draw(Shape::new(2, 3, 4, 4), -1.0, 1.0);
    s.unary("op.global_avg_pool", x, Shape::new(2, 3, 1, 1), |g, x| g.global_avg_pool(x));

    let mut x = s.draw(Shape::new(2, 4, 3, 3), -1.0, 1.0);
    separate_channel_max(&mut x, 1e-3);
    s.unary("op.channel_max_pool", x, Shape::new(2, 1, 3, 3), |g, x| g.channel_max_pool(x));

    {
        let x = s.draw(Shape::new(3, 5, 1, 1), -1.0, 1.0);
        let w = s.draw(Shape::new(1, 1, 4, 5), -0.5, 0.5);
        let b = s.draw(Shape::new(1, 4, 1, 1), -0.2, 0.2);
        let r = s.draw(Shape::new(3, 4, 1, 1), -1.0, 1.0);
        s.add(
            "op.fully_connected",
            TOL_OP,
            1e-5,
            vec![x, w, b],
            Box::new(move |g, t| {
                let x = g.variable(t[0].clone());
                let w = g.variable(t[1].clone());
                let b = g.variable(t[2].clone());
                let y = g.fully_connected(x, w, b)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![x, w, b]))
            }),
        );
    }

    let a = s.draw(Shape::new(2, 2, 3, 4), -1.0, 1.0);
    let b = s.draw(Shape::new(2, 2, 4, 5), -1.0, 1.0);
    s.binary("op.matmul", a, b, Shape::new(2, 2, 3, 5), |g, a, b| g.matmul(a, b));

    let x = s.draw(Shape::new(2, 1, 3, 4), -2.0, 2.0);
    s.unary("op.softmax", x, Shape::new(2, 1, 3, 4), |g, x| g.softmax(x));
    let x = s.draw(Shape::new(2, 2, 3, 3), -2.0, 2.0);
    s.unary("op.sigmoid", x, Shape::new(2, 2, 3, 3), |g, x| g.sigmoid(x));
    let x = s.draw(Shape::new(2, 2, 3, 3), -2.0, 2.0);
    s.unary("op.tanh", x, Shape::new(2, 2, 3, 3), |g, x| g.tanh(x));
    let x = s.draw(Shape::new(2, 2, 3, 3), 0.2, 2.0);
    s.unary("op.log", x, Shape::new(2, 2, 3, 3), |g, x| g.log(x));

    let mut x = s.draw(Shape::new(2, 2, 3, 3), -1.0, 1.0);
    away_from(&mut x, &[-0.5, 0.5], 1e-3);
    s.unary("op.clamp", x, Shape::new(2, 2, 3, 3), |g, x| g.clamp(x, -0.5, 0.5));

    let a = s.draw(Shape::new(2, 3, 4, 4), -1.0, 1.0);
    let b = s.draw(Shape::new(1, 3, 1, 1), -1.0, 1.0);
    s.binary("op.add_broadcast", a, b, Shape::new(2, 3, 4, 4), |g, a, b| g.add(a, b));
    let a = s.draw(Shape::new(2, 3, 4, 4), -1.0, 1.0);
    let b = s.draw(Shape::new(2, 1, 4, 4), -1.0, 1.0);
    s.binary("op.mul_broadcast", a, b, Shape::new(2, 3, 4, 4), |g, a, b| g.mul(a, b));
    let a = s.draw(Shape::new(2, 2, 3, 3), -1.0, 1.0);
    let b = s.draw(Shape::new(1, 2, 1, 1), 0.5, 1.5);
    s.binary("op.div_broadcast", a, b, Shape::new(2, 2, 3, 3), |g, a, b| g.div(a, b));

    let x = s.draw(Shape::new(2, 2, 3, 3), -1.0, 1.0);
    s.unary("op.add_scalar", x, Shape::new(2, 2, 3, 3), |g, x| g.add_scalar(x, 0.7));
    let x = s.draw(Shape::new(2, 2, 3, 3), -1.0, 1.0);
    s.unary("op.mul_scalar", x, Shape::new(2, 2, 3, 3), |g, x| g.mul_scalar(x, -1.3));

    let a = s.draw(Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let b = s.draw(Shape::new(1, 3, 3, 3), -1.0, 1.0);
    s.binary("op.concat_channels", a, b, Shape::new(1, 5, 3, 3), |g, a, b| g.concat_channels(a, b));

    let x = s.draw(Shape::new(2, 3, 4, 4), -1.0, 1.0);
    s.unary("op.reshape", x, Shape::new(2, 48, 1, 1), |g, x| g.reshape(x, Shape::new(2, 48, 1, 1)));
    let x = s.draw(Shape::new(2, 2, 3, 4), -1.0, 1.0);
    s.unary("op.transpose", x, Shape::new(2, 2, 4, 3), |g, x| g.transpose(x));
    let x = s.draw(Shape::new(1, 2, 3, 3), -1.0, 1.0);
    s.unary("op.upsample_nearest", x, Shape::new(1, 2, 6, 6), |g, x| g.upsample_nearest(x, 2));

    let x = s.draw(Shape::new(2, 3, 3, 3), -1.0, 1.0);
    s.unary("op.sum_all", x, Shape::scalar(), |g, x| g.sum_all(x));
    let x = s.draw(Shape::new(2, 3, 3, 3), -1.0, 1.0);
    s.unary("op.mean_all", x, Shape::scalar(), |g, x| g.mean_all(x));
    let x = s.draw(Shape::new(2, 3, 3, 3), -1.0, 1.0);
    s.unary("op.sum_spatial", x, Shape::new(2, 3, 1, 1), |g, x| g.sum_spatial(x));

    for band in [Band::Ll, Band::Lh, Band::Hl, Band::Hh] {
        let x = s.draw(Shape::new(1, 2, 4, 4), -1.0, 1.0);
        let name = format!("op.dwt2.{band:?}").to_lowercase();
        let r = s.draw(Shape::new(1, 2, 2, 2), -1.0, 1.0);
        s.add(
            &name,
            TOL_OP,
            1e-5,
            vec![x],
            Box::new(move |g, t| {
                let x = g.variable(t[0].clone());
                let y = g.dwt2_band(x, band)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![x]))
            }),
        );
    }

    {
        let bands: Vec<Tensor> = (0..4).map(|_| s.draw(Shape::new(1, 2, 2, 2), -1.0, 1.0)).collect();
        let r = s.draw(Shape::new(1, 2, 4, 4), -1.0, 1.0);
        s.add(
            "op.idwt2",
            TOL_OP,
            1e-5,
            bands,
            Box::new(move |g, t| {
                let vars: Vec<Var> = t.iter().map(|b| g.variable(b.clone())).collect();
                let y = g.idwt2(vars[0], vars[1], vars[2], vars[3])?;
                let j = project(g, y, &r)?;
                Ok((j, vars))
            }),
        );
    }
}

/// Channel-attention params as four leaf tensors (bottleneck ratio 2).
fn ca_tensors(s: &mut Specs, channels: usize) -> [Tensor; 4] {
    let reduced = channels / 2;
    [
        s.draw(Shape::new(reduced, channels, 1, 1), -0.5, 0.5),
        s.draw(Shape::new(1, reduced, 1, 1), -0.2, 0.2),
        s.draw(Shape::new(channels, reduced, 1, 1), -0.5, 0.5),
        s.draw(Shape::new(1, channels, 1, 1), -0.2, 0.2),
    ]
}

fn ca_from(g: &mut Graph, t: &[Tensor]) -> (ChannelAttentionParams, Vec<Var>) {
    let vars: Vec<Var> = t.iter().map(|x| g.variable(x.clone())).collect();
    (ChannelAttentionParams { w1: vars[0], b1: vars[1], w2: vars[2], b2: vars[3] }, vars)
}

fn stage_specs(s: &mut Specs) {
    // Channel gate: x plus the four bottleneck weights.
    {
        let x = s.draw(Shape::new(1, 4, 3, 3), -1.0, 1.0);
        let ca = ca_tensors(s, 4);
        let r = s.draw(Shape::new(1, 4, 1, 1), -1.0, 1.0);
        let mut inputs = vec![x];
        inputs.extend(ca);
        s.add(
            "attention.channel_gate",
            TOL_OP,
            1e-5,
            inputs,
            Box::new(move |g, t| {
                let x = g.variable(t[0].clone());
                let (p, mut leaves) = ca_from(g, &t[1..5]);
                let y = channel_attention_gate(g, x, p)?;
                let j = project(g, y, &r)?;
                leaves.insert(0, x);
                Ok((j, leaves))
            }),
        );
    }

    {
        let mut x = s.draw(Shape::new(1, 3, 4, 4), -1.0, 1.0);
        separate_channel_max(&mut x, 1e-3);
        s.unary("attention.spatial_gate", x, Shape::new(1, 1, 4, 4), spatial_attention_gate);
    }

    // Cross-level localization, both gating layouts.
    for (name, cross) in [("localizer.self_gating", false), ("localizer.cross_gating", true)] {
        let f4 = s.draw(Shape::new(1, 4, 4, 4), -1.0, 1.0);
        let f5 = s.draw(Shape::new(1, 4, 2, 2), -1.0, 1.0);
        let ca4 = ca_tensors(s, 4);
        let ca5 = ca_tensors(s, 4);
        let fuse_w = s.draw(Shape::new(4, 8, 3, 3), -0.3, 0.3);
        let fuse_b = s.draw(Shape::new(1, 4, 1, 1), -0.2, 0.2);
        let r = s.draw(Shape::new(1, 4, 4, 4), -1.0, 1.0);
        let mut inputs = vec![f4, f5];
        inputs.extend(ca4);
        inputs.extend(ca5);
        inputs.push(fuse_w);
        inputs.push(fuse_b);
        s.add(
            name,
            TOL_OP,
            1e-5,
            inputs,
            Box::new(move |g, t| {
                let f4 = g.variable(t[0].clone());
                let f5 = g.variable(t[1].clone());
                let (ca4, l4) = ca_from(g, &t[2..6]);
                let (ca5, l5) = ca_from(g, &t[6..10]);
                let fuse_w = g.variable(t[10].clone());
                let fuse_b = g.variable(t[11].clone());
                let p = LocalizerParams { ca4, ca5, fuse_w, fuse_b };
                let y = localize(g, f4, f5, &p, cross)?;
                let j = project(g, y, &r)?;
                let mut leaves = vec![f4, f5];
                leaves.extend(l4);
                leaves.extend(l5);
                leaves.push(fuse_w);
                leaves.push(fuse_b);
                Ok((j, leaves))
            }),
        );
    }

    // Proportion head: pooled feature through the two dense layers.
    {
        let f5 = s.draw(Shape::new(2, 4, 2, 2), -1.0, 1.0);
        let fc1_w = s.draw(Shape::new(1, 1, 3, 4), -0.5, 0.5);
        let fc1_b = s.draw(Shape::new(1, 3, 1, 1), -0.2, 0.2);
        let fc2_w = s.draw(Shape::new(1, 1, 1, 3), -0.5, 0.5);
        let fc2_b = s.draw(Shape::new(1, 1, 1, 1), -0.2, 0.2);
        let r = s.draw(Shape::new(2, 1, 1, 1), -1.0, 1.0);
        s.add(
            "localizer.proportion_head",
            TOL_OP,
            1e-5,
            vec![f5, fc1_w, fc1_b, fc2_w, fc2_b],
            Box::new(move |g, t| {
                let leaves: Vec<Var> = t.iter().map(|x| g.variable(x.clone())).collect();
                let p = ProportionHeadParams { fc1_w: leaves[1], fc1_b: leaves[2], fc2_w: leaves[3], fc2_b: leaves[4] };
                let y = proportion_head(g, leaves[0], p)?;
                let j = project(g, y, &r)?;
                Ok((j, leaves))
            }),
        );
    }

    // Detail extraction once per routing bin: the kernel subsets differ.
    for (name, bin) in [
        ("detail.small_bin", SizeBin::Small),
        ("detail.mid_bin", SizeBin::Mid),
        ("detail.large_bin", SizeBin::Large),
    ] {
        let mut f1 = s.draw(Shape::new(1, 3, 8, 8), -1.0, 1.0);
        separate_channel_max(&mut f1, 1e-3);
        let mut inputs = vec![f1];
        for k in KERNEL_SIZES {
            inputs.push(s.draw(Shape::new(3, 3, k, k), -0.3, 0.3));
            inputs.push(s.draw(Shape::new(1, 3, 1, 1), -0.2, 0.2));
            inputs.push(s.draw(Shape::new(1, 1, k, k), -0.3, 0.3));
            inputs.push(s.draw(Shape::new(1, 1, 1, 1), -0.2, 0.2));
        }
        inputs.push(s.draw(Shape::new(1, 1, 1, 1), -0.5, 0.5));
        inputs.push(s.draw(Shape::new(1, 1, 1, 1), -0.2, 0.2));
        let r = s.draw(Shape::new(1, 3, 8, 8), -1.0, 1.0);
        s.add(
            name,
            TOL_OP,
            1e-5,
            inputs,
            Box::new(move |g, t| {
                let leaves: Vec<Var> = t.iter().map(|x| g.variable(x.clone())).collect();
                let mut ext_w = [Var::default(); 5];
                let mut ext_b = [Var::default(); 5];
                let mut opt_w = [Var::default(); 5];
                let mut opt_b = [Var::default(); 5];
                for i in 0..5 {
                    ext_w[i] = leaves[1 + 4 * i];
                    ext_b[i] = leaves[2 + 4 * i];
                    opt_w[i] = leaves[3 + 4 * i];
                    opt_b[i] = leaves[4 + 4 * i];
                }
                let p = DetailParams { ext_w, ext_b, opt_w, opt_b, head_w: leaves[21], head_b: leaves[22] };
                let masks = routing_masks(g, &[bin])?;
                let y = detail_forward(g, leaves[0], &p, &masks)?;
                let j = project(g, y, &r)?;
                Ok((j, leaves))
            }),
        );
    }

    // Wavelet-domain cross-attention between two equally sized band maps.
    {
        let a = s.draw(Shape::new(1, 2, 4, 4), -1.0, 1.0);
        let b = s.draw(Shape::new(1, 2, 4, 4), -1.0, 1.0);
        s.binary("context.wavelet_interaction", a, b, Shape::new(1, 2, 4, 4), wavelet_interaction);
    }

    // Full context stage: alignment, four-band interaction, attention
    // blocks, fusion.
    {
        let f2 = s.draw(Shape::new(1, 3, 8, 8), -1.0, 1.0);
        let f3 = s.draw(Shape::new(1, 4, 4, 4), -1.0, 1.0);
        let align2_w = s.draw(Shape::new(2, 3, 1, 1), -0.5, 0.5);
        let align2_b = s.draw(Shape::new(1, 2, 1, 1), -0.2, 0.2);
        let align3_w = s.draw(Shape::new(2, 4, 1, 1), -0.5, 0.5);
        let align3_b = s.draw(Shape::new(1, 2, 1, 1), -0.2, 0.2);
        let at2 = ca_tensors(s, 4);
        let at3 = ca_tensors(s, 4);
        let fuse_w = s.draw(Shape::new(2, 8, 3, 3), -0.3, 0.3);
        let fuse_b = s.draw(Shape::new(1, 2, 1, 1), -0.2, 0.2);
        let r = s.draw(Shape::new(1, 2, 8, 8), -1.0, 1.0);
        let mut inputs = vec![f2, f3, align2_w, align2_b, align3_w, align3_b];
        inputs.extend(at2);
        inputs.extend(at3);
        inputs.push(fuse_w);
        inputs.push(fuse_b);
        s.add(
            "context.forward",
            TOL_OP,
            1e-5,
            inputs,
            Box::new(move |g, t| {
                let f2 = g.variable(t[0].clone());
                let f3 = g.variable(t[1].clone());
                let align2_w = g.variable(t[2].clone());
                let align2_b = g.variable(t[3].clone());
                let align3_w = g.variable(t[4].clone());
                let align3_b = g.variable(t[5].clone());
                let (at2, l2) = ca_from(g, &t[6..10]);
                let (at3, l3) = ca_from(g, &t[10..14]);
                let fuse_w = g.variable(t[14].clone());
                let fuse_b = g.variable(t[15].clone());
                let p = ContextParams { align2_w, align2_b, align3_w, align3_b, at2, at3, fuse_w, fuse_b };
                let y = context_forward(g, f2, f3, &p)?;
                let j = project(g, y, &r)?;
                let mut leaves = vec![f2, f3, align2_w, align2_b, align3_w, align3_b];
                leaves.extend(l2);
                leaves.extend(l3);
                leaves.push(fuse_w);
                leaves.push(fuse_b);
                Ok((j, leaves))
            }),
        );
    }
}

fn loss_specs(s: &mut Specs) {
    let binary_gt = |s: &mut Specs, n: usize, h: usize, w: usize| {
        let count = n * h * w;
        let data: Vec<f64> = (0..count).map(|_| if s.rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        Tensor::new(Shape::new(n, 1, h, w), data).expect("static shape")
    };

    for (name, which) in [("loss.bce", 0usize), ("loss.iou", 1), ("loss.fm", 2)] {
        let pred = s.draw(Shape::new(1, 1, 4, 4), 0.05, 0.95);
        let gt = binary_gt(s, 1, 4, 4);
        let r = s.draw(Shape::scalar(), -1.0, 1.0);
        s.add(
            name,
            TOL_OP,
            1e-5,
            vec![pred],
            Box::new(move |g, t| {
                let pred = g.variable(t[0].clone());
                let gt = g.constant(gt.clone());
                let y = match which {
                    0 => bce_loss(g, pred, gt)?,
                    1 => iou_loss(g, pred, gt, 1e-8)?,
                    _ => fm_loss(g, pred, gt, 0.3, 1e-8)?,
                };
                let j = project(g, y, &r)?;
                Ok((j, vec![pred]))
            }),
        );
    }

    {
        let pred = s.draw(Shape::new(2, 1, 1, 1), 0.1, 0.9);
        let target = s.draw(Shape::new(2, 1, 1, 1), 0.0, 1.0);
        let r = s.draw(Shape::scalar(), -1.0, 1.0);
        s.add(
            "loss.mse",
            TOL_OP,
            1e-5,
            vec![pred],
            Box::new(move |g, t| {
                let pred = g.variable(t[0].clone());
                let target = g.constant(target.clone());
                let y = mse_loss(g, pred, target)?;
                let j = project(g, y, &r)?;
                Ok((j, vec![pred]))
            }),
        );
    }

    {
        let pred = s.draw(Shape::new(1, 1, 4, 4), 0.05, 0.95);
        let pg_pred = s.draw(Shape::new(1, 1, 1, 1), 0.1, 0.9);
        let gt = binary_gt(s, 1, 4, 4);
        let pg_target = s.draw(Shape::new(1, 1, 1, 1), 0.0, 1.0);
        let r = s.draw(Shape::scalar(), -1.0, 1.0);
        s.add(
            "loss.total",
            TOL_OP,
            1e-5,
            vec![pred, pg_pred],
            Box::new(move |g, t| {
                let pred = g.variable(t[0].clone());
                let pg_pred = g.variable(t[1].clone());
                let gt = g.constant(gt.clone());
                let pg_target = g.constant(pg_target.clone());
                let (y, _) = total_loss(g, pred, gt, pg_pred, pg_target, &LossConfig::default())?;
                let j = project(g, y, &r)?;
                Ok((j, vec![pred, pg_pred]))
            }),
        );
    }
}

fn model_spec(s: &mut Specs) -> Result<()> {
    let model = Model::from_parts([4, 4, 4, 4, 4], 4, 2, false, 4, 0.25, 0.50)?;
    let mut store = ParamStore::new();
    let init_seed = s.rng.gen::<u64>();
    model.register(&mut store, &mut ChaCha8Rng::seed_from_u64(init_seed))?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut inputs = vec![s.draw(Shape::new(1, 3, 32, 32), 0.0, 1.0)];
    for n in &names {
        inputs.push(store.value(n).expect("registered").clone());
    }
    let r_s = s.draw(Shape::new(1, 1, 32, 32), -1.0, 1.0);
    let r_p = s.draw(Shape::scalar(), -1.0, 1.0);
    let mut input_names = vec!["image".to_string()];
    input_names.extend(names.iter().cloned());
    // A shorter step than the op checks: perturbing an early-stage weight
    // shifts whole feature maps, and a small step keeps every channel-argmax
    // decision on one side of its margin.
    s.add(
        "model.full_forward",
        TOL_MODEL,
        1e-6,
        inputs,
        Box::new(move |g, t| {
            let mut st = ParamStore::new();
            for (name, tensor) in names.iter().zip(&t[1..]) {
                st.insert(name, tensor.clone())?;
            }
            let b = model.bind(&st, g)?;
            let image = g.variable(t[0].clone());
            let out = model.forward(g, &b, image, &[SizeBin::Mid])?;
            let js = project(g, out.s, &r_s)?;
            let jp = project(g, out.proportion, &r_p)?;
            let j = g.add(js, jp)?;
            let mut labeled = g.labeled_vars();
            labeled.sort_by(|a, b| a.0.cmp(&b.0));
            let mut leaves = vec![image];
            leaves.extend(labeled.into_iter().map(|(_, v)| v));
            Ok((j, leaves))
        }),
    );
    s.list.last_mut().expect("just added").input_names = input_names;
    Ok(())
}

fn build_specs(opts: &GradcheckOptions) -> Result<Vec<CheckSpec>> {
    let mut s = Specs { rng: ChaCha8Rng::seed_from_u64(opts.seed), list: Vec::new() };
    op_specs(&mut s);
    stage_specs(&mut s);
    loss_specs(&mut s);
    model_spec(&mut s)?;
    Ok(s.list)
}

fn run_check(spec: &CheckSpec, index: usize, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut g = Graph::new();
    let (out, leaves) = (spec.build)(&mut g, &spec.inputs)?;
    if g.shape(out) != Shape::scalar() || leaves.len() != spec.inputs.len() {
        return Err(Error::Argument(format!("check {} returned a malformed objective", spec.name)));
    }
    g.backward(out)?;
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(leaves.len());
    for (k, &v) in leaves.iter().enumerate() {
        analytic.push(g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; spec.inputs[k].data().len()]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(0x6772_6164 + index as u64);
    // Pass iff |a − n| ≤ ATOL + tolerance·max(|a|, |n|); dividing through by
    // the tolerance turns that into a single reportable relative error.
    let floor = ATOL / spec.tolerance;
    let mut worst = 0.0f64;
    let mut worst_detail = String::from("all probes matched");
    let mut corrupt_pending = opts.corrupt_analytic;
    for (k, tensor) in spec.inputs.iter().enumerate() {
        let len = tensor.data().len();
        let picks: Vec<usize> =
            if len <= PROBES { (0..len).collect() } else { rand::seq::index::sample(&mut rng, len, PROBES).into_vec() };
        for idx in picks {
            let probe = |delta: f64| -> Result<f64> {
                let mut tensors = spec.inputs.clone();
                tensors[k].data_mut()[idx] += delta;
                let mut g2 = Graph::new();
                let (out2, _) = (spec.build)(&mut g2, &tensors)?;
                Ok(g2.value(out2).data()[0])
            };
            let numeric = (probe(spec.step)? - probe(-spec.step)?) / (2.0 * spec.step);
            let mut a = analytic[k][idx];
            if corrupt_pending {
                a += 1e-2 * (1.0 + a.abs());
                corrupt_pending = false;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst {
                worst = rel;
                let input_name = spec.input_names.get(k).cloned().unwrap_or_else(|| format!("input{k}"));
                worst_detail = format!("{input_name}[{idx}]: analytic {a:.6e}, numeric {numeric:.6e}");
            }
        }
    }
    Ok(CheckResult {
        name: spec.name.clone(),
        worst_rel_err: worst,
        tolerance: spec.tolerance,
        passed: worst <= spec.tolerance,
        worst_detail,
    })
}

/// Run the whole suite. Results come back in a fixed order, one per check,
/// each carrying its worst observed relative error.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let specs = build_specs(opts)?;
    specs.iter().enumerate().map(|(i, spec)| run_check(spec, i, opts)).collect()
}
