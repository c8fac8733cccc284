//! The operation tape: forward ops and reverse accumulation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Ops
//! append a node holding the op record (inputs + any saved state), the
//! output value, and space for a gradient. Because the tape is appended in
//! execution order it *is* a topological order: [`Graph::backward`] seeds
//! d(loss)/d(loss)=1 and walks the tape once in reverse, adding each node's
//! contribution into its inputs' gradient buffers (fan-out accumulates).
//!
//! Every op validates shapes up front and checks its output for NaN/Inf —
//! a non-finite value is an error state, reported with the producing node
//! so callers can name the first bad tensor.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// produced it. The default value points at node 0 and is only a
/// placeholder for array initialization.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct Var(usize);

/// Wavelet sub-band selector for [`Graph::dwt2_band`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Band {
    /// Signs of the (a, b, c, d) block corners — a=(2y,2x), b=(2y,2x+1),
    /// c=(2y+1,2x), d=(2y+1,2x+1) — in this band's analysis formula
    /// coef = (±a ±b ±c ±d)/2.
    fn signs(self) -> [f64; 4] {
        match self {
            Band::Ll => [1.0, 1.0, 1.0, 1.0],
            Band::Lh => [1.0, 1.0, -1.0, -1.0],
            Band::Hl => [1.0, -1.0, 1.0, -1.0],
            Band::Hh => [1.0, -1.0, -1.0, 1.0],
        }
    }
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    AvgPool2 { x: Var },
    GlobalAvgPool { x: Var },
    /// `argmax[i]` = winning channel for output element i (lowest channel
    /// index wins ties).
    ChannelMaxPool { x: Var, argmax: Vec<u32> },
    FullyConnected { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Softmax { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Log { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    AddScalar { x: Var },
    MulScalar { x: Var, k: f64 },
    ConcatChannels { a: Var, b: Var },
    Reshape { x: Var },
    Transpose { x: Var },
    UpsampleNearest { x: Var, factor: usize },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumSpatial { x: Var },
    Dwt2 { x: Var, band: Band },
    Idwt2 { ll: Var, lh: Var, hl: Var, hh: Var },
}

struct Node {
    op: Op,
    name: &'static str,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    label: Option<String>,
}

/// Ordered record of executed operations. Build one per forward pass, run
/// [`Graph::backward`] on a scalar, read gradients, drop it. A graph and
/// its vars are confined to one logical thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves -----------------------------------------------------------

    /// Insert data that never receives a gradient (inputs, targets, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false, None)
    }

    /// Insert a gradient-tracked leaf (used for inputs under test).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true, None)
    }

    /// Insert a named trainable parameter. The label ties the gradient back
    /// to a [`super::ParamStore`] entry.
    pub fn param(&mut self, t: Tensor, label: &str) -> Var {
        self.push_leaf(t, true, Some(label.to_string()))
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool, label: Option<String>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, name: "leaf", value: t, grad: None, requires_grad, label });
        Var(self.nodes.len() - 1)
    }

    // ---- access -----------------------------------------------------------

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient buffer of `v`, populated by [`Graph::backward`]. `None` for
    /// nodes that do not track gradients or before any backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Labeled parameter leaves in tape order, with their gradients.
    pub(crate) fn labeled_grads(&self) -> impl Iterator<Item = (&str, Option<&[f64]>)> {
        self.nodes
            .iter()
            .filter(|n| n.label.is_some())
            .map(|n| (n.label.as_deref().unwrap(), n.grad.as_deref()))
    }

    /// Labeled parameter leaves in tape order, as (name, handle) pairs.
    pub(crate) fn labeled_vars(&self) -> Vec<(String, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.label.clone().map(|l| (l, Var(i))))
            .collect()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, name: &'static str, shape: Shape, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.count(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name, node: self.nodes.len() });
        }
        self.nodes.push(Node { op, name, value: Tensor { shape, data }, grad: None, requires_grad, label: None });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- convolution & pooling ---------------------------------------------

    /// 2-D convolution, stride 1, odd kernel, zero "same" padding.
    /// `x`: (N,Cin,H,W); `w`: (Cout,Cin,k,k); `b`: (1,Cout,1,1) per-channel
    /// bias. Output (N,Cout,H,W).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if ws.h != ws.w {
            return Err(Error::Shape(format!("conv2d kernel must be square, got {}x{}", ws.h, ws.w)));
        }
        let k = ws.h;
        if k % 2 == 0 {
            return Err(Error::Argument(format!("conv2d kernel size must be odd, got {k}")));
        }
        if xs.c != ws.c {
            return Err(Error::Shape(format!(
                "conv2d input has {} channels but kernel expects {}",
                xs.c, ws.c
            )));
        }
        if bs != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::Shape(format!(
                "conv2d bias must be (1,{},1,1), got {}",
                ws.n, bs
            )));
        }
        let (n_, cout, cin, h, wd) = (xs.n, ws.n, ws.c, xs.h, xs.w);
        let p = k / 2;
        let os = Shape::new(n_, cout, h, wd);
        let mut out = vec![0.0; os.count()];
        let xd = self.nodes[x.0].value.data();
        let wdat = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        for n in 0..n_ {
            for co in 0..cout {
                let obase = (n * cout + co) * h * wd;
                out[obase..obase + h * wd].fill(bd[co]);
                for ci in 0..cin {
                    let ibase = (n * cin + ci) * h * wd;
                    for ky in 0..k {
                        let oy_lo = p.saturating_sub(ky);
                        let oy_hi = (h + p).saturating_sub(ky).min(h);
                        for kx in 0..k {
                            let wv = wdat[((co * cin + ci) * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let ox_lo = p.saturating_sub(kx);
                            let ox_hi = (wd + p).saturating_sub(kx).min(wd);
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - p;
                                let orow = &mut out[obase + oy * wd..obase + oy * wd + wd];
                                let irow = &xd[ibase + iy * wd..ibase + iy * wd + wd];
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * irow[ox + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(Op::Conv2d { x, w, b }, "conv2d", os, out, req)
    }

    /// 2×2 average pooling with stride 2; H and W must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(Error::Argument(format!("avg_pool2 requires even spatial dims, got {}", xs)));
        }
        let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; os.count()];
        let mut i = 0;
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = (n * xs.c + c) * xs.h * xs.w;
                for y in 0..os.h {
                    let r0 = base + (2 * y) * xs.w;
                    let r1 = r0 + xs.w;
                    for xq in 0..os.w {
                        out[i] = 0.25 * (xd[r0 + 2 * xq] + xd[r0 + 2 * xq + 1] + xd[r1 + 2 * xq] + xd[r1 + 2 * xq + 1]);
                        i += 1;
                    }
                }
            }
        }
        let req = self.requires(x);
        self.push(Op::AvgPool2 { x }, "avg_pool2", os, out, req)
    }

    /// Spatial mean per (n, c): (N,C,H,W) → (N,C,1,1).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let os = Shape::new(xs.n, xs.c, 1, 1);
        let plane = xs.h * xs.w;
        let xd = self.nodes[x.0].value.data();
        let out: Vec<f64> = (0..xs.n * xs.c)
            .map(|nc| xd[nc * plane..(nc + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let req = self.requires(x);
        self.push(Op::GlobalAvgPool { x }, "global_avg_pool", os, out, req)
    }

    /// Per-pixel maximum over channels: (N,C,H,W) → (N,1,H,W). Ties route
    /// the gradient to the lowest channel index.
    pub fn channel_max_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let os = Shape::new(xs.n, 1, xs.h, xs.w);
        let plane = xs.h * xs.w;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; os.count()];
        let mut argmax = vec![0u32; os.count()];
        for n in 0..xs.n {
            for p in 0..plane {
                let mut best = xd[n * xs.c * plane + p];
                let mut best_c = 0u32;
                for c in 1..xs.c {
                    let v = xd[(n * xs.c + c) * plane + p];
                    if v > best {
                        best = v;
                        best_c = c as u32;
                    }
                }
                out[n * plane + p] = best;
                argmax[n * plane + p] = best_c;
            }
        }
        let req = self.requires(x);
        self.push(Op::ChannelMaxPool { x, argmax }, "channel_max_pool", os, out, req)
    }

    /// Dense layer on pooled features. `x`: (N,D,1,1); `w`: (1,1,Dout,D);
    /// `b`: (1,Dout,1,1). Output (N,Dout,1,1).
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.h != 1 || xs.w != 1 {
            return Err(Error::Shape(format!("fully_connected input must be (N,D,1,1), got {xs}")));
        }
        if ws.n != 1 || ws.c != 1 || ws.w != xs.c {
            return Err(Error::Shape(format!(
                "fully_connected weight must be (1,1,Dout,{}), got {ws}",
                xs.c
            )));
        }
        let dout = ws.h;
        if bs != Shape::new(1, dout, 1, 1) {
            return Err(Error::Shape(format!("fully_connected bias must be (1,{dout},1,1), got {bs}")));
        }
        let d = xs.c;
        let os = Shape::new(xs.n, dout, 1, 1);
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; os.count()];
        for n in 0..xs.n {
            for o in 0..dout {
                let mut acc = bd[o];
                let wrow = &wd[o * d..(o + 1) * d];
                let xrow = &xd[n * d..(n + 1) * d];
                for j in 0..d {
                    acc += wrow[j] * xrow[j];
                }
                out[n * dout + o] = acc;
            }
        }
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(Op::FullyConnected { x, w, b }, "fully_connected", os, out, req)
    }

    // ---- matrix ops --------------------------------------------------------

    /// Batched matrix product over the leading (N, C) dims:
    /// (N,C,P,Q) × (N,C,Q,R) → (N,C,P,R).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let as_ = self.shape(a);
        let bs = self.shape(b);
        if as_.n != bs.n || as_.c != bs.c {
            return Err(Error::Shape(format!("matmul batch dims differ: {as_} vs {bs}")));
        }
        if as_.w != bs.h {
            return Err(Error::Shape(format!("matmul inner dims differ: {as_} vs {bs}")));
        }
        let (p, q, r) = (as_.h, as_.w, bs.w);
        let os = Shape::new(as_.n, as_.c, p, r);
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; os.count()];
        for nc in 0..as_.n * as_.c {
            let ab = nc * p * q;
            let bb = nc * q * r;
            let ob = nc * p * r;
            for i in 0..p {
                for kq in 0..q {
                    let av = ad[ab + i * q + kq];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[bb + kq * r..bb + kq * r + r];
                    let orow = &mut out[ob + i * r..ob + i * r + r];
                    for j in 0..r {
                        orow[j] += av * brow[j];
                    }
                }
            }
        }
        let req = self.requires(a) || self.requires(b);
        self.push(Op::MatMul { a, b }, "matmul", os, out, req)
    }

    /// Row softmax over the last dim with max subtraction for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let rows = xs.n * xs.c * xs.h;
        let r = xs.w;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; xs.count()];
        for row in 0..rows {
            let xr = &xd[row * r..(row + 1) * r];
            let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[row * r..(row + 1) * r];
            let mut sum = 0.0;
            for j in 0..r {
                let e = (xr[j] - m).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let req = self.requires(x);
        self.push(Op::Softmax { x }, "softmax", xs, out, req)
    }

    // ---- elementwise -------------------------------------------------------

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xs = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.data().iter().map(|&v| f(v)).collect();
        let req = self.requires(x);
        self.push(op, name, xs, out, req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid { x }, "sigmoid", |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh { x }, "tanh", f64::tanh)
    }

    /// Natural log. Non-positive inputs surface as a non-finite error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log { x }, "log", f64::ln)
    }

    /// Clamp into [lo, hi]; the gradient passes through inside the interval
    /// (inclusive) and is zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::Argument(format!("clamp bounds must satisfy lo < hi, got {lo} >= {hi}")));
        }
        self.unary(x, Op::Clamp { x, lo, hi }, "clamp", |v| v.clamp(lo, hi))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary(x, Op::AddScalar { x }, "add_scalar", |v| v + k)
    }

    pub fn mul_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary(x, Op::MulScalar { x, k }, "mul_scalar", |v| v * k)
    }

    /// Broadcast metadata: per-dim stride of `s` viewed under `out`, with 0
    /// stride on broadcast (size-1) dims.
    fn bcast_strides(s: Shape) -> [usize; 4] {
        let sw = 1;
        let sh = s.w;
        let sc = s.h * s.w;
        let sn = s.c * s.h * s.w;
        [
            if s.n == 1 { 0 } else { sn },
            if s.c == 1 { 0 } else { sc },
            if s.h == 1 { 0 } else { sh },
            if s.w == 1 { 0 } else { sw },
        ]
    }

    fn bcast_shape(name: &str, a: Shape, b: Shape) -> Result<Shape> {
        let dim = |x: usize, y: usize| -> Result<usize> {
            if x == y || x == 1 || y == 1 {
                Ok(x.max(y))
            } else {
                Err(Error::Shape(format!("{name}: incompatible operand shapes {a} and {b}")))
            }
        };
        Ok(Shape::new(dim(a.n, b.n)?, dim(a.c, b.c)?, dim(a.h, b.h)?, dim(a.w, b.w)?))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let as_ = self.shape(a);
        let bs = self.shape(b);
        let os = Self::bcast_shape(name, as_, bs)?;
        let sa = Self::bcast_strides(as_);
        let sb = Self::bcast_strides(bs);
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![0.0; os.count()];
        let mut i = 0;
        for n in 0..os.n {
            for c in 0..os.c {
                for y in 0..os.h {
                    let abase = n * sa[0] + c * sa[1] + y * sa[2];
                    let bbase = n * sb[0] + c * sb[1] + y * sb[2];
                    for x in 0..os.w {
                        out[i] = f(ad[abase + x * sa[3]], bd[bbase + x * sb[3]]);
                        i += 1;
                    }
                }
            }
        }
        let req = self.requires(a) || self.requires(b);
        self.push(op, name, os, out, req)
    }

    /// Elementwise sum with numpy-style broadcasting on size-1 dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a, b }, "add", |x, y| x + y)
    }

    /// Elementwise product with numpy-style broadcasting on size-1 dims.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a, b }, "mul", |x, y| x * y)
    }

    /// Elementwise quotient with broadcasting; division by zero surfaces as
    /// a non-finite error, so guard denominators at call sites.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div { a, b }, "div", |x, y| x / y)
    }

    // ---- structure ---------------------------------------------------------

    /// Stack along the channel dim: (N,Ca,H,W) ++ (N,Cb,H,W) → (N,Ca+Cb,H,W).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let as_ = self.shape(a);
        let bs = self.shape(b);
        if as_.n != bs.n || as_.h != bs.h || as_.w != bs.w {
            return Err(Error::Shape(format!("concat_channels operands disagree outside C: {as_} vs {bs}")));
        }
        let os = Shape::new(as_.n, as_.c + bs.c, as_.h, as_.w);
        let plane = as_.h * as_.w;
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(os.count());
        for n in 0..as_.n {
            out.extend_from_slice(&ad[n * as_.c * plane..(n + 1) * as_.c * plane]);
            out.extend_from_slice(&bd[n * bs.c * plane..(n + 1) * bs.c * plane]);
        }
        let req = self.requires(a) || self.requires(b);
        self.push(Op::ConcatChannels { a, b }, "concat_channels", os, out, req)
    }

    /// Relabel dims without reordering data; element count must match.
    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let xs = self.shape(x);
        if xs.count() != shape.count() {
            return Err(Error::Shape(format!("reshape {xs} → {shape} changes element count")));
        }
        let out = self.nodes[x.0].value.data().to_vec();
        let req = self.requires(x);
        self.push(Op::Reshape { x }, "reshape", shape, out, req)
    }

    /// Swap the two matrix dims: (N,C,H,W) → (N,C,W,H).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let os = Shape::new(xs.n, xs.c, xs.w, xs.h);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; os.count()];
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.h * xs.w;
            for y in 0..xs.h {
                for x_ in 0..xs.w {
                    out[base + x_ * xs.h + y] = xd[base + y * xs.w + x_];
                }
            }
        }
        let req = self.requires(x);
        self.push(Op::Transpose { x }, "transpose", os, out, req)
    }

    /// Nearest-neighbor upsampling by an integer factor ≥ 1.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Argument("upsample_nearest factor must be >= 1".into()));
        }
        let xs = self.shape(x);
        let os = Shape::new(xs.n, xs.c, xs.h * factor, xs.w * factor);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; os.count()];
        let mut i = 0;
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.h * xs.w;
            for y in 0..os.h {
                let irow = base + (y / factor) * xs.w;
                for x_ in 0..os.w {
                    out[i] = xd[irow + x_ / factor];
                    i += 1;
                }
            }
        }
        let req = self.requires(x);
        self.push(Op::UpsampleNearest { x, factor }, "upsample_nearest", os, out, req)
    }

    // ---- reductions --------------------------------------------------------

    /// Sum of every element → (1,1,1,1).
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        let req = self.requires(x);
        self.push(Op::SumAll { x }, "sum_all", Shape::scalar(), vec![s], req)
    }

    /// Mean of every element → (1,1,1,1).
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let d = self.nodes[x.0].value.data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let req = self.requires(x);
        self.push(Op::MeanAll { x }, "mean_all", Shape::scalar(), vec![m], req)
    }

    /// Per-(n,c) spatial sum: (N,C,H,W) → (N,C,1,1).
    pub fn sum_spatial(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let plane = xs.h * xs.w;
        let xd = self.nodes[x.0].value.data();
        let out: Vec<f64> = (0..xs.n * xs.c).map(|nc| xd[nc * plane..(nc + 1) * plane].iter().sum()).collect();
        let req = self.requires(x);
        self.push(Op::SumSpatial { x }, "sum_spatial", Shape::new(xs.n, xs.c, 1, 1), out, req)
    }

    // ---- wavelet -----------------------------------------------------------

    /// One sub-band of the single-level orthonormal Haar analysis:
    /// (N,C,H,W) → (N,C,H/2,W/2). H and W must be even.
    pub fn dwt2_band(&mut self, x: Var, band: Band) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(Error::Argument(format!(
                "dwt2 requires even spatial dims, got {}x{}",
                xs.h, xs.w
            )));
        }
        let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
        let [sa, sb, sc, sd] = band.signs();
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; os.count()];
        let mut i = 0;
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.h * xs.w;
            for y in 0..os.h {
                let r0 = base + (2 * y) * xs.w;
                let r1 = r0 + xs.w;
                for x_ in 0..os.w {
                    out[i] = 0.5
                        * (sa * xd[r0 + 2 * x_] + sb * xd[r0 + 2 * x_ + 1] + sc * xd[r1 + 2 * x_] + sd * xd[r1 + 2 * x_ + 1]);
                    i += 1;
                }
            }
        }
        let req = self.requires(x);
        self.push(Op::Dwt2 { x, band }, "dwt2", os, out, req)
    }

    /// Single-level orthonormal Haar synthesis from four equal-shape bands:
    /// (N,C,h,w) ×4 → (N,C,2h,2w). Exact inverse of the four-band analysis.
    pub fn idwt2(&mut self, ll: Var, lh: Var, hl: Var, hh: Var) -> Result<Var> {
        let s = self.shape(ll);
        for (name, v) in [("lh", lh), ("hl", hl), ("hh", hh)] {
            if self.shape(v) != s {
                return Err(Error::Shape(format!(
                    "idwt2 band {name} has shape {} but ll has {s}",
                    self.shape(v)
                )));
            }
        }
        let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
        let lld = self.nodes[ll.0].value.data();
        let lhd = self.nodes[lh.0].value.data();
        let hld = self.nodes[hl.0].value.data();
        let hhd = self.nodes[hh.0].value.data();
        let mut out = vec![0.0; os.count()];
        for nc in 0..s.n * s.c {
            let ibase = nc * s.h * s.w;
            let obase = nc * os.h * os.w;
            for y in 0..s.h {
                for x_ in 0..s.w {
                    let i = ibase + y * s.w + x_;
                    let (vll, vlh, vhl, vhh) = (lld[i], lhd[i], hld[i], hhd[i]);
                    let r0 = obase + (2 * y) * os.w + 2 * x_;
                    let r1 = r0 + os.w;
                    out[r0] = 0.5 * (vll + vlh + vhl + vhh);
                    out[r0 + 1] = 0.5 * (vll + vlh - vhl - vhh);
                    out[r1] = 0.5 * (vll - vlh + vhl - vhh);
                    out[r1 + 1] = 0.5 * (vll - vlh - vhl + vhh);
                }
            }
        }
        let req = self.requires(ll) || self.requires(lh) || self.requires(hl) || self.requires(hh);
        self.push(Op::Idwt2 { ll, lh, hl, hh }, "idwt2", os, out, req)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse accumulation from a scalar. Resets all gradient buffers, seeds
    /// d(target)/d(target) = 1, then visits every node exactly once in
    /// reverse tape order, adding into input gradients (fan-out accumulates
    /// additively). Bitwise deterministic for a fixed tape.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        let ts = self.shape(target);
        if ts.count() != 1 {
            return Err(Error::Argument(format!(
                "backward requires a scalar target, got shape {ts}"
            )));
        }
        if !self.requires(target) {
            return Err(Error::Argument(
                "backward target does not depend on any gradient-tracked tensor".into(),
            ));
        }
        for node in &mut self.nodes {
            node.grad = if node.requires_grad { Some(vec![0.0; node.value.shape().count()]) } else { None };
        }
        self.nodes[target.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=target.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Take this node's grad out so we can borrow input grads mutably.
            let go = self.nodes[i].grad.take().unwrap();
            self.accumulate(i, &go);
            self.nodes[i].grad = Some(go);
        }
        Ok(())
    }

    /// Add d(target)/d(node_i) contributions into node i's inputs.
    fn accumulate(&mut self, i: usize, go: &[f64]) {
        // Split borrows: everything before node i is a candidate input.
        let (inputs, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let os = node.value.shape();
        macro_rules! grad_of {
            ($v:expr) => {
                inputs[$v.0].grad.as_deref_mut()
            };
        }
        macro_rules! value_of {
            ($v:expr) => {
                inputs[$v.0].value.data()
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let xs = inputs[x.0].value.shape();
                let ws = inputs[w.0].value.shape();
                let k = ws.h;
                let p = k / 2;
                let (n_, cout, cin, h, wd) = (xs.n, ws.n, ws.c, xs.h, xs.w);
                // Bias gradient.
                if inputs[b.0].grad.is_some() {
                    let mut gb = vec![0.0; cout];
                    for n in 0..n_ {
                        for co in 0..cout {
                            gb[co] += go[(n * cout + co) * h * wd..(n * cout + co + 1) * h * wd].iter().sum::<f64>();
                        }
                    }
                    let g = inputs[b.0].grad.as_deref_mut().unwrap();
                    for (gi, v) in g.iter_mut().zip(gb) {
                        *gi += v;
                    }
                }
                let need_x = inputs[x.0].grad.is_some();
                let need_w = inputs[w.0].grad.is_some();
                if !need_x && !need_w {
                    return;
                }
                // Weight gradient accumulates locally; input gradient is
                // scattered through a temp buffer to satisfy the borrow
                // checker when x and w are distinct nodes.
                let wdat = inputs[w.0].value.data().to_vec();
                let xdat = inputs[x.0].value.data().to_vec();
                let mut gx = vec![0.0; if need_x { xdat.len() } else { 0 }];
                let mut gw = vec![0.0; if need_w { wdat.len() } else { 0 }];
                for n in 0..n_ {
                    for co in 0..cout {
                        let obase = (n * cout + co) * h * wd;
                        for ci in 0..cin {
                            let ibase = (n * cin + ci) * h * wd;
                            for ky in 0..k {
                                let oy_lo = p.saturating_sub(ky);
                                let oy_hi = (h + p).saturating_sub(ky).min(h);
                                for kx in 0..k {
                                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                                    let wv = wdat[widx];
                                    let ox_lo = p.saturating_sub(kx);
                                    let ox_hi = (wd + p).saturating_sub(kx).min(wd);
                                    let mut wacc = 0.0;
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy + ky - p;
                                        let gobase = obase + oy * wd;
                                        let irow = ibase + iy * wd;
                                        if need_x {
                                            for ox in ox_lo..ox_hi {
                                                gx[irow + ox + kx - p] += wv * go[gobase + ox];
                                            }
                                        }
                                        if need_w {
                                            for ox in ox_lo..ox_hi {
                                                wacc += go[gobase + ox] * xdat[irow + ox + kx - p];
                                            }
                                        }
                                    }
                                    if need_w {
                                        gw[widx] += wacc;
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    let g = inputs[x.0].grad.as_deref_mut().unwrap();
                    for (gi, v) in g.iter_mut().zip(gx) {
                        *gi += v;
                    }
                }
                if need_w {
                    let g = inputs[w.0].grad.as_deref_mut().unwrap();
                    for (gi, v) in g.iter_mut().zip(gw) {
                        *gi += v;
                    }
                }
            }
            Op::AvgPool2 { x } => {
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let (oh, ow) = (xs.h / 2, xs.w / 2);
                    let mut i = 0;
                    for nc in 0..xs.n * xs.c {
                        let base = nc * xs.h * xs.w;
                        for y in 0..oh {
                            let r0 = base + 2 * y * xs.w;
                            let r1 = r0 + xs.w;
                            for x_ in 0..ow {
                                let g = 0.25 * go[i];
                                i += 1;
                                gx[r0 + 2 * x_] += g;
                                gx[r0 + 2 * x_ + 1] += g;
                                gx[r1 + 2 * x_] += g;
                                gx[r1 + 2 * x_ + 1] += g;
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let plane = xs.h * xs.w;
                    let inv = 1.0 / plane as f64;
                    for nc in 0..xs.n * xs.c {
                        let g = go[nc] * inv;
                        for v in &mut gx[nc * plane..(nc + 1) * plane] {
                            *v += g;
                        }
                    }
                }
            }
            Op::ChannelMaxPool { x, argmax } => {
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let plane = xs.h * xs.w;
                    for n in 0..xs.n {
                        for p in 0..plane {
                            let c = argmax[n * plane + p] as usize;
                            gx[(n * xs.c + c) * plane + p] += go[n * plane + p];
                        }
                    }
                }
            }
            Op::FullyConnected { x, w, b } => {
                let xs = inputs[x.0].value.shape();
                let d = xs.c;
                let dout = os.c;
                if inputs[b.0].grad.is_some() {
                    let mut gb = vec![0.0; dout];
                    for n in 0..xs.n {
                        for o in 0..dout {
                            gb[o] += go[n * dout + o];
                        }
                    }
                    let g = inputs[b.0].grad.as_deref_mut().unwrap();
                    for (gi, v) in g.iter_mut().zip(gb) {
                        *gi += v;
                    }
                }
                let wdat = inputs[w.0].value.data().to_vec();
                let xdat = inputs[x.0].value.data().to_vec();
                if inputs[x.0].grad.is_some() {
                    let gx = inputs[x.0].grad.as_deref_mut().unwrap();
                    for n in 0..xs.n {
                        for o in 0..dout {
                            let g = go[n * dout + o];
                            let wrow = &wdat[o * d..(o + 1) * d];
                            for j in 0..d {
                                gx[n * d + j] += g * wrow[j];
                            }
                        }
                    }
                }
                if inputs[w.0].grad.is_some() {
                    let gw = inputs[w.0].grad.as_deref_mut().unwrap();
                    for n in 0..xs.n {
                        for o in 0..dout {
                            let g = go[n * dout + o];
                            let xrow = &xdat[n * d..(n + 1) * d];
                            for j in 0..d {
                                gw[o * d + j] += g * xrow[j];
                            }
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let as_ = inputs[a.0].value.shape();
                let bs = inputs[b.0].value.shape();
                let (p, q, r) = (as_.h, as_.w, bs.w);
                let adat = inputs[a.0].value.data().to_vec();
                let bdat = inputs[b.0].value.data().to_vec();
                if inputs[a.0].grad.is_some() {
                    let ga = inputs[a.0].grad.as_deref_mut().unwrap();
                    // ga[i,k] += sum_j go[i,j] * b[k,j]
                    for nc in 0..as_.n * as_.c {
                        let (ab, bb, ob) = (nc * p * q, nc * q * r, nc * p * r);
                        for i2 in 0..p {
                            for kq in 0..q {
                                let brow = &bdat[bb + kq * r..bb + kq * r + r];
                                let gorow = &go[ob + i2 * r..ob + i2 * r + r];
                                let mut acc = 0.0;
                                for j in 0..r {
                                    acc += gorow[j] * brow[j];
                                }
                                ga[ab + i2 * q + kq] += acc;
                            }
                        }
                    }
                }
                if inputs[b.0].grad.is_some() {
                    let gb = inputs[b.0].grad.as_deref_mut().unwrap();
                    // gb[k,j] += sum_i a[i,k] * go[i,j]
                    for nc in 0..as_.n * as_.c {
                        let (ab, bb, ob) = (nc * p * q, nc * q * r, nc * p * r);
                        for i2 in 0..p {
                            for kq in 0..q {
                                let av = adat[ab + i2 * q + kq];
                                if av == 0.0 {
                                    continue;
                                }
                                let gorow = &go[ob + i2 * r..ob + i2 * r + r];
                                let gbrow = &mut gb[bb + kq * r..bb + kq * r + r];
                                for j in 0..r {
                                    gbrow[j] += av * gorow[j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let rows = os.n * os.c * os.h;
                let r = os.w;
                if let Some(gx) = grad_of!(x) {
                    for row in 0..rows {
                        let yr = &y[row * r..(row + 1) * r];
                        let gor = &go[row * r..(row + 1) * r];
                        let dot: f64 = yr.iter().zip(gor).map(|(yv, gv)| yv * gv).sum();
                        let gxr = &mut gx[row * r..(row + 1) * r];
                        for j in 0..r {
                            gxr[j] += yr[j] * (gor[j] - dot);
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Tanh { x } => {
                let y = node.value.data();
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Log { x } => {
                let xv = value_of!(x).to_vec();
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j] / xv[j];
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let xv = value_of!(x).to_vec();
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        if xv[j] >= lo && xv[j] <= hi {
                            gx[j] += go[j];
                        }
                    }
                }
            }
            Op::AddScalar { x } => {
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j];
                    }
                }
            }
            Op::MulScalar { x, k } => {
                let k = *k;
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j] * k;
                    }
                }
            }
            Op::Add { a, b } => {
                for (v, _other) in [(a, b), (b, a)] {
                    let vs = inputs[v.0].value.shape();
                    let st = Self::bcast_strides(vs);
                    if inputs[v.0].grad.is_some() {
                        let gv = inputs[v.0].grad.as_deref_mut().unwrap();
                        let mut i2 = 0;
                        for n in 0..os.n {
                            for c in 0..os.c {
                                for y in 0..os.h {
                                    let base = n * st[0] + c * st[1] + y * st[2];
                                    for x_ in 0..os.w {
                                        gv[base + x_ * st[3]] += go[i2];
                                        i2 += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(a, b), (b, a)] {
                    if inputs[v.0].grad.is_none() {
                        continue;
                    }
                    let vs = inputs[v.0].value.shape();
                    let ovs = inputs[other.0].value.shape();
                    let st = Self::bcast_strides(vs);
                    let so = Self::bcast_strides(ovs);
                    let od = inputs[other.0].value.data().to_vec();
                    let gv = inputs[v.0].grad.as_deref_mut().unwrap();
                    let mut i2 = 0;
                    for n in 0..os.n {
                        for c in 0..os.c {
                            for y in 0..os.h {
                                let vb = n * st[0] + c * st[1] + y * st[2];
                                let ob = n * so[0] + c * so[1] + y * so[2];
                                for x_ in 0..os.w {
                                    gv[vb + x_ * st[3]] += go[i2] * od[ob + x_ * so[3]];
                                    i2 += 1;
                                }
                            }
                        }
                    }
                }
            }
            Op::Div { a, b } => {
                let as_ = inputs[a.0].value.shape();
                let bs = inputs[b.0].value.shape();
                let sa = Self::bcast_strides(as_);
                let sb = Self::bcast_strides(bs);
                let ad = inputs[a.0].value.data().to_vec();
                let bd = inputs[b.0].value.data().to_vec();
                if inputs[a.0].grad.is_some() {
                    let ga = inputs[a.0].grad.as_deref_mut().unwrap();
                    let mut i2 = 0;
                    for n in 0..os.n {
                        for c in 0..os.c {
                            for y in 0..os.h {
                                let abase = n * sa[0] + c * sa[1] + y * sa[2];
                                let bbase = n * sb[0] + c * sb[1] + y * sb[2];
                                for x_ in 0..os.w {
                                    ga[abase + x_ * sa[3]] += go[i2] / bd[bbase + x_ * sb[3]];
                                    i2 += 1;
                                }
                            }
                        }
                    }
                }
                if inputs[b.0].grad.is_some() {
                    let gb = inputs[b.0].grad.as_deref_mut().unwrap();
                    let mut i2 = 0;
                    for n in 0..os.n {
                        for c in 0..os.c {
                            for y in 0..os.h {
                                let abase = n * sa[0] + c * sa[1] + y * sa[2];
                                let bbase = n * sb[0] + c * sb[1] + y * sb[2];
                                for x_ in 0..os.w {
                                    let bv = bd[bbase + x_ * sb[3]];
                                    gb[bbase + x_ * sb[3]] -= go[i2] * ad[abase + x_ * sa[3]] / (bv * bv);
                                    i2 += 1;
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let as_ = inputs[a.0].value.shape();
                let bs = inputs[b.0].value.shape();
                let plane = as_.h * as_.w;
                let (ac, bc) = (as_.c, bs.c);
                if inputs[a.0].grad.is_some() {
                    let ga = inputs[a.0].grad.as_deref_mut().unwrap();
                    for n in 0..as_.n {
                        let obase = n * (ac + bc) * plane;
                        for j in 0..ac * plane {
                            ga[n * ac * plane + j] += go[obase + j];
                        }
                    }
                }
                if inputs[b.0].grad.is_some() {
                    let gb = inputs[b.0].grad.as_deref_mut().unwrap();
                    for n in 0..as_.n {
                        let obase = n * (ac + bc) * plane + ac * plane;
                        for j in 0..bc * plane {
                            gb[n * bc * plane + j] += go[obase + j];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = grad_of!(x) {
                    for j in 0..gx.len() {
                        gx[j] += go[j];
                    }
                }
            }
            Op::Transpose { x } => {
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    // out[.., x, y] = in[.., y, x]  ⇒  gx[.., y, x] += go[.., x, y]
                    for nc in 0..xs.n * xs.c {
                        let base = nc * xs.h * xs.w;
                        for y in 0..xs.h {
                            for x_ in 0..xs.w {
                                gx[base + y * xs.w + x_] += go[base + x_ * xs.h + y];
                            }
                        }
                    }
                }
            }
            Op::UpsampleNearest { x, factor } => {
                let f = *factor;
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let mut i2 = 0;
                    for nc in 0..xs.n * xs.c {
                        let base = nc * xs.h * xs.w;
                        for y in 0..xs.h * f {
                            let irow = base + (y / f) * xs.w;
                            for x_ in 0..xs.w * f {
                                gx[irow + x_ / f] += go[i2];
                                i2 += 1;
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if let Some(gx) = grad_of!(x) {
                    let g = go[0];
                    for v in gx.iter_mut() {
                        *v += g;
                    }
                }
            }
            Op::MeanAll { x } => {
                if let Some(gx) = grad_of!(x) {
                    let g = go[0] / gx.len() as f64;
                    for v in gx.iter_mut() {
                        *v += g;
                    }
                }
            }
            Op::SumSpatial { x } => {
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let plane = xs.h * xs.w;
                    for nc in 0..xs.n * xs.c {
                        let g = go[nc];
                        for v in &mut gx[nc * plane..(nc + 1) * plane] {
                            *v += g;
                        }
                    }
                }
            }
            Op::Dwt2 { x, band } => {
                let [sa, sb, sc, sd] = band.signs();
                let xs = inputs[x.0].value.shape();
                if let Some(gx) = grad_of!(x) {
                    let (oh, ow) = (xs.h / 2, xs.w / 2);
                    let mut i2 = 0;
                    for nc in 0..xs.n * xs.c {
                        let base = nc * xs.h * xs.w;
                        for y in 0..oh {
                            let r0 = base + 2 * y * xs.w;
                            let r1 = r0 + xs.w;
                            for x_ in 0..ow {
                                let g = 0.5 * go[i2];
                                i2 += 1;
                                gx[r0 + 2 * x_] += sa * g;
                                gx[r0 + 2 * x_ + 1] += sb * g;
                                gx[r1 + 2 * x_] += sc * g;
                                gx[r1 + 2 * x_ + 1] += sd * g;
                            }
                        }
                    }
                }
            }
            Op::Idwt2 { ll, lh, hl, hh } => {
                let s = inputs[ll.0].value.shape();
                let (ow2, _oh2) = (s.w * 2, s.h * 2);
                for (v, signs) in [
                    (ll, [1.0, 1.0, 1.0, 1.0]),
                    (lh, [1.0, 1.0, -1.0, -1.0]),
                    (hl, [1.0, -1.0, 1.0, -1.0]),
                    (hh, [1.0, -1.0, -1.0, 1.0]),
                ] {
                    if inputs[v.0].grad.is_none() {
                        continue;
                    }
                    let gv = inputs[v.0].grad.as_deref_mut().unwrap();
                    for nc in 0..s.n * s.c {
                        let ibase = nc * s.h * s.w;
                        let obase = nc * (s.h * 2) * ow2;
                        for y in 0..s.h {
                            for x_ in 0..s.w {
                                let r0 = obase + 2 * y * ow2 + 2 * x_;
                                let r1 = r0 + ow2;
                                gv[ibase + y * s.w + x_] += 0.5
                                    * (signs[0] * go[r0] + signs[1] * go[r0 + 1] + signs[2] * go[r1] + signs[3] * go[r1 + 1]);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Diagnostic name for a node ("conv2d#12", or the parameter label).
    pub fn node_name(&self, v: Var) -> String {
        match &self.nodes[v.0].label {
            Some(l) => l.clone(),
            None => format!("{}#{}", self.nodes[v.0].name, v.0),
        }
    }
}
