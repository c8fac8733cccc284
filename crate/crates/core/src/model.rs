//! End-to-end model assembly: a small five-stage backbone, the three
//! feature-processing stages, a two-step bottom-up decoder, the training
//! step, and checkpoint serialization.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TrainGate};
use crate::context::{context_forward, ContextParams};
use crate::detail::{detail_forward, routing_masks, DetailParams};
use crate::localizer::{bin_proportion, localize, proportion_head, LocalizerParams, ProportionHeadParams, SizeBin};
use crate::losses::{total_loss, LossConfig, LossReport};
use crate::tensor::{Graph, ParamStore, RmspropConfig, Shape, Tensor, Var};
use crate::{Error, Result};

/// Architecture hyperparameters, decoupled from run plumbing so tests and
/// gradient checks can build reduced instances.
#[derive(Clone, Debug)]
pub struct Model {
    pub channels: [usize; 5],
    pub common_channels: usize,
    pub reduction_ratio: usize,
    pub cross_gating: bool,
    pub pg_hidden: usize,
    pub bins_lo: f64,
    pub bins_hi: f64,
}

/// Graph handles for every parameter of one forward pass.
pub struct BoundModel {
    stage_w: [Var; 5],
    stage_b: [Var; 5],
    loc: LocalizerParams,
    prop: ProportionHeadParams,
    det: DetailParams,
    ctx: ContextParams,
    fuse1_w: Var,
    fuse1_b: Var,
    fuse2_w: Var,
    fuse2_b: Var,
    head_w: Var,
    head_b: Var,
}

/// The model's two supervised outputs.
pub struct SaliencyOutput {
    /// Saliency map (N,1,H,W), strictly inside (0,1).
    pub s: Var,
    /// Estimated foreground proportion (N,1,1,1), strictly inside (0,1).
    pub proportion: Var,
}

impl Model {
    pub fn new(cfg: &RunConfig) -> Result<Model> {
        Model::from_parts(
            cfg.channels,
            cfg.common_channels,
            cfg.reduction_ratio,
            cfg.cross_gating,
            cfg.pg_hidden,
            cfg.bins_lo,
            cfg.bins_hi,
        )
    }

    pub fn from_parts(
        channels: [usize; 5],
        common_channels: usize,
        reduction_ratio: usize,
        cross_gating: bool,
        pg_hidden: usize,
        bins_lo: f64,
        bins_hi: f64,
    ) -> Result<Model> {
        if channels.iter().any(|&c| c == 0) || common_channels == 0 || pg_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if channels[3] != channels[4] {
            return Err(Error::Config(format!(
                "the two deepest widths must match for cross-level gating, got {} and {}",
                channels[3], channels[4]
            )));
        }
        if reduction_ratio == 0
            || channels[3] % reduction_ratio != 0
            || (2 * common_channels) % reduction_ratio != 0
        {
            return Err(Error::Config(format!(
                "reduction ratio {reduction_ratio} must divide the deep width {} and the context concat width {}",
                channels[3],
                2 * common_channels
            )));
        }
        if !(0.0..1.0).contains(&bins_lo) || !(bins_lo < bins_hi) || bins_hi > 1.0 {
            return Err(Error::Config(format!("proportion bins need 0 <= lo < hi <= 1, got {bins_lo} and {bins_hi}")));
        }
        Ok(Model { channels, common_channels, reduction_ratio, cross_gating, pg_hidden, bins_lo, bins_hi })
    }

    /// Create every parameter with fan-in uniform weights and zero biases.
    /// Draw order is fixed, so a seed fully determines the initialization.
    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut in_c = 3;
        for (i, &out_c) in self.channels.iter().enumerate() {
            let w = Tensor::init_fan_in(Shape::new(out_c, in_c, 3, 3), in_c * 9, rng);
            store.insert(&format!("backbone.stage{}.w", i + 1), w)?;
            store.insert(&format!("backbone.stage{}.b", i + 1), Tensor::zeros(Shape::new(1, out_c, 1, 1)))?;
            in_c = out_c;
        }
        LocalizerParams::register(store, self.channels[3], self.reduction_ratio, rng)?;
        ProportionHeadParams::register(store, self.channels[4], self.pg_hidden, rng)?;
        DetailParams::register(store, self.channels[0], rng)?;
        ContextParams::register(store, self.channels[1], self.channels[2], self.common_channels, self.reduction_ratio, rng)?;

        let c = self.common_channels;
        let in1 = self.channels[3] + c;
        store.insert("dec.fuse1.w", Tensor::init_fan_in(Shape::new(c, in1, 3, 3), in1 * 9, rng))?;
        store.insert("dec.fuse1.b", Tensor::zeros(Shape::new(1, c, 1, 1)))?;
        let in2 = c + self.channels[0];
        store.insert("dec.fuse2.w", Tensor::init_fan_in(Shape::new(c, in2, 3, 3), in2 * 9, rng))?;
        store.insert("dec.fuse2.b", Tensor::zeros(Shape::new(1, c, 1, 1)))?;
        store.insert("dec.head.w", Tensor::init_fan_in(Shape::new(1, c, 1, 1), c, rng))?;
        store.insert("dec.head.b", Tensor::zeros(Shape::new(1, 1, 1, 1)))?;
        Ok(())
    }

    /// Mirror every registered parameter into `g` as a labeled leaf.
    pub fn bind(&self, store: &ParamStore, g: &mut Graph) -> Result<BoundModel> {
        let mut stage_w = [Var::default(); 5];
        let mut stage_b = [Var::default(); 5];
        for i in 0..5 {
            stage_w[i] = store.bind(g, &format!("backbone.stage{}.w", i + 1))?;
            stage_b[i] = store.bind(g, &format!("backbone.stage{}.b", i + 1))?;
        }
        Ok(BoundModel {
            stage_w,
            stage_b,
            loc: LocalizerParams::bind(store, g)?,
            prop: ProportionHeadParams::bind(store, g)?,
            det: DetailParams::bind(store, g)?,
            ctx: ContextParams::bind(store, g)?,
            fuse1_w: store.bind(g, "dec.fuse1.w")?,
            fuse1_b: store.bind(g, "dec.fuse1.b")?,
            fuse2_w: store.bind(g, "dec.fuse2.w")?,
            fuse2_b: store.bind(g, "dec.fuse2.b")?,
            head_w: store.bind(g, "dec.head.w")?,
            head_b: store.bind(g, "dec.head.b")?,
        })
    }

    /// Five-stage feature pyramid: each stage is conv3×3 (stride 1) → tanh →
    /// 2×2 average downsample, so level i sits at stride 2^i with the
    /// configured width.
    pub fn features(&self, g: &mut Graph, b: &BoundModel, image: Var) -> Result<[Var; 5]> {
        let s = g.shape(image);
        if s.c != 3 {
            return Err(Error::Shape(format!("expected an RGB input (N,3,H,W), got {s}")));
        }
        if s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::Config(format!("input sides must be positive multiples of 32, got {}x{}", s.h, s.w)));
        }
        let mut x = image;
        let mut f = [Var::default(); 5];
        for i in 0..5 {
            x = g.conv2d(x, b.stage_w[i], b.stage_b[i])?;
            x = g.tanh(x)?;
            x = g.avg_pool2(x)?;
            f[i] = x;
        }
        Ok(f)
    }

    /// Bottom-up decoding from a feature pyramid and per-sample routing bins.
    fn decode(&self, g: &mut Graph, b: &BoundModel, f: &[Var; 5], bins: &[SizeBin]) -> Result<Var> {
        if bins.len() != g.shape(f[0]).n {
            return Err(Error::Argument(format!(
                "got {} routing bins for a batch of {}",
                bins.len(),
                g.shape(f[0]).n
            )));
        }
        let fa = localize(g, f[3], f[4], &b.loc, self.cross_gating)?;
        let fw = context_forward(g, f[1], f[2], &b.ctx)?;
        let masks = routing_masks(g, bins)?;
        let fp = detail_forward(g, f[0], &b.det, &masks)?;

        let up_a = g.upsample_nearest(fa, 4)?;
        let cat1 = g.concat_channels(up_a, fw)?;
        let d1 = g.conv2d(cat1, b.fuse1_w, b.fuse1_b)?;
        let up_1 = g.upsample_nearest(d1, 2)?;
        let cat2 = g.concat_channels(up_1, fp)?;
        let d2 = g.conv2d(cat2, b.fuse2_w, b.fuse2_b)?;
        let logits = g.conv2d(d2, b.head_w, b.head_b)?;
        let s_half = g.sigmoid(logits)?;
        g.upsample_nearest(s_half, 2)
    }

    /// Full forward pass with caller-supplied routing bins (ground truth at
    /// training time). With fixed bins this is a pure function of the image
    /// and the parameters.
    pub fn forward(&self, g: &mut Graph, b: &BoundModel, image: Var, bins: &[SizeBin]) -> Result<SaliencyOutput> {
        let f = self.features(g, b, image)?;
        let proportion = proportion_head(g, f[4], b.prop)?;
        let s = self.decode(g, b, &f, bins)?;
        Ok(SaliencyOutput { s, proportion })
    }

    /// Forward pass that routes detail extraction by the model's own
    /// proportion estimate: the estimate is read mid-graph and discretized,
    /// which is exactly how inference must behave without ground truth.
    pub fn infer(&self, g: &mut Graph, b: &BoundModel, image: Var) -> Result<(SaliencyOutput, Vec<SizeBin>)> {
        let f = self.features(g, b, image)?;
        let proportion = proportion_head(g, f[4], b.prop)?;
        let bins: Vec<SizeBin> =
            g.value(proportion).data().iter().map(|&p| bin_proportion(p, self.bins_lo, self.bins_hi)).collect();
        let s = self.decode(g, b, &f, &bins)?;
        Ok((SaliencyOutput { s, proportion }, bins))
    }
}

/// One optimization step: forward, fixed-order total loss, reverse pass,
/// RMSprop update. Routing bins come from the ground-truth proportions or
/// from the model's estimate, per `gate`. Any non-finite intermediate aborts
/// with an error naming the producing operation and node.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    images: &Tensor,
    gts: &Tensor,
    gt_props: &[f64],
    gate: TrainGate,
    loss_cfg: &LossConfig,
    optim_cfg: &RmspropConfig,
) -> Result<LossReport> {
    let n = images.shape().n;
    if gts.shape().n != n || gt_props.len() != n {
        return Err(Error::Shape(format!(
            "batch disagreement: {} images, {} masks, {} proportions",
            n,
            gts.shape().n,
            gt_props.len()
        )));
    }
    let mut g = Graph::new();
    let b = model.bind(store, &mut g)?;
    let image = g.constant(images.clone());
    let gt = g.constant(gts.clone());

    let f = model.features(&mut g, &b, image)?;
    let proportion = proportion_head(&mut g, f[4], b.prop)?;
    let bins: Vec<SizeBin> = match gate {
        TrainGate::Gt => gt_props.iter().map(|&p| bin_proportion(p, model.bins_lo, model.bins_hi)).collect(),
        TrainGate::Predicted => g
            .value(proportion)
            .data()
            .iter()
            .map(|&p| bin_proportion(p, model.bins_lo, model.bins_hi))
            .collect(),
    };
    let s = model.decode(&mut g, &b, &f, &bins)?;

    let pg_target = g.constant(Tensor::new(Shape::new(n, 1, 1, 1), gt_props.to_vec())?);
    let (total, report) = total_loss(&mut g, s, gt, proportion, pg_target, loss_cfg)?;
    g.backward(total)?;
    store.rmsprop_step(&g, optim_cfg)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SALCKPT\0";
const CKPT_VERSION: u32 = 1;

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, count: usize) -> std::io::Result<Vec<f64>> {
    let mut out = vec![0.0; count];
    let mut b = [0u8; 8];
    for v in &mut out {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(out)
}

/// Serialize every parameter (value + optimizer state) with the training
/// step and an architecture fingerprint. Little-endian, versioned.
pub fn save_checkpoint(path: &Path, store: &ParamStore, fingerprint: u64, step: u64) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(io)?;
    w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&fingerprint.to_le_bytes()).map_err(io)?;
    w.write_all(&step.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, state) in store.entries() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
        let s = state.value.shape();
        for dim in [s.n, s.c, s.h, s.w] {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
        }
        write_f64s(&mut w, state.value.data()).map_err(io)?;
        write_f64s(&mut w, &state.square_avg).map_err(io)?;
        write_f64s(&mut w, &state.momentum).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Restore parameters and optimizer state into an already-registered store.
/// Refuses files whose architecture fingerprint, parameter set, or shapes do
/// not match. Returns the stored step count.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore, fingerprint: u64) -> Result<u64> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::State(format!("{} is not a checkpoint file", path.display())));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != CKPT_VERSION {
        return Err(Error::State(format!(
            "checkpoint {} has version {version}, this build reads version {CKPT_VERSION}",
            path.display()
        )));
    }
    let stored_fp = read_u64(&mut r).map_err(io)?;
    if stored_fp != fingerprint {
        return Err(Error::State(format!(
            "checkpoint {} was written by a different architecture (fingerprint {stored_fp:#018x}, expected {fingerprint:#018x})",
            path.display()
        )));
    }
    let step = read_u64(&mut r).map_err(io)?;
    let count = read_u64(&mut r).map_err(io)? as usize;
    if count != store.len() {
        return Err(Error::State(format!(
            "checkpoint {} holds {count} parameters, model has {}",
            path.display(),
            store.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(io)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::State(format!("checkpoint {} has a non-UTF-8 parameter name", path.display())))?;
        let dims: [usize; 4] = [
            read_u64(&mut r).map_err(io)? as usize,
            read_u64(&mut r).map_err(io)? as usize,
            read_u64(&mut r).map_err(io)? as usize,
            read_u64(&mut r).map_err(io)? as usize,
        ];
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let value = read_f64s(&mut r, shape.count()).map_err(io)?;
        let square_avg = read_f64s(&mut r, shape.count()).map_err(io)?;
        let momentum = read_f64s(&mut r, shape.count()).map_err(io)?;
        store.restore(&name, Tensor::new(shape, value)?, square_avg, momentum)?;
    }
    Ok(step)
}
