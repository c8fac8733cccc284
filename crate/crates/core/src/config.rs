//! Run configuration: a flat `key = value` text format in which every key
//! has a default, unknown keys are rejected by name, and the resolved state
//! can be echoed back byte-stably for provenance.

use std::fmt::Write as _;
use std::path::Path;

use crate::losses::LossConfig;
use crate::tensor::RmspropConfig;
use crate::{Error, Result};

/// Which signal routes detail extraction during training: the ground-truth
/// area proportion or the model's own prediction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrainGate {
    Gt,
    Predicted,
}

/// Everything a training or evaluation run needs, with toy-scale defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Square input edge; must be divisible by 32.
    pub input_size: usize,
    pub batch: usize,
    pub steps: usize,
    pub data_dir: String,
    pub out_dir: String,
    /// Checkpoint cadence in steps.
    pub ckpt_every: usize,
    /// Checkpoint to resume from; empty string disables.
    pub resume: String,
    /// Backbone widths c1..c5; c4 must equal c5.
    pub channels: [usize; 5],
    /// Common width of the context stage.
    pub common_channels: usize,
    /// Channel-attention bottleneck divisor.
    pub reduction_ratio: usize,
    pub cross_gating: bool,
    /// Hidden width of the proportion head.
    pub pg_hidden: usize,
    /// Area-proportion bin edges: Small < lo ≤ Mid ≤ hi < Large.
    pub bins_lo: f64,
    pub bins_hi: f64,
    pub train_gate: TrainGate,
    pub loss: LossConfig,
    pub optim: RmspropConfig,
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input_size: 64,
            batch: 4,
            steps: 300,
            data_dir: "data".into(),
            out_dir: "out".into(),
            ckpt_every: 100,
            resume: String::new(),
            channels: [8, 16, 24, 32, 32],
            common_channels: 16,
            reduction_ratio: 4,
            cross_gating: false,
            pg_hidden: 64,
            bins_lo: 0.25,
            bins_hi: 0.50,
            train_gate: TrainGate::Gt,
            loss: LossConfig::default(),
            optim: RmspropConfig::default(),
            augment: true,
        }
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key:?}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("key {key:?}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Parse `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors naming the key. The result is
    /// validated.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("key {key:?} appears more than once")));
            }
            seen.push(key.to_string());
            match key {
                "seed" => cfg.seed = parse_key(key, value)?,
                "input_size" => cfg.input_size = parse_key(key, value)?,
                "batch" => cfg.batch = parse_key(key, value)?,
                "steps" => cfg.steps = parse_key(key, value)?,
                "data_dir" => cfg.data_dir = value.to_string(),
                "out_dir" => cfg.out_dir = value.to_string(),
                "ckpt_every" => cfg.ckpt_every = parse_key(key, value)?,
                "resume" => cfg.resume = value.to_string(),
                "model.channels" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 5 {
                        return Err(Error::Config(format!(
                            "key \"model.channels\": expected 5 comma-separated widths, got {}",
                            parts.len()
                        )));
                    }
                    for (i, p) in parts.iter().enumerate() {
                        cfg.channels[i] = parse_key(key, p)?;
                    }
                }
                "fce.common_channels" => cfg.common_channels = parse_key(key, value)?,
                "rpl.reduction_ratio" => cfg.reduction_ratio = parse_key(key, value)?,
                "rpl.cross_gating" => cfg.cross_gating = parse_bool(key, value)?,
                "pg.hidden" => cfg.pg_hidden = parse_key(key, value)?,
                "bins.lo" => cfg.bins_lo = parse_key(key, value)?,
                "bins.hi" => cfg.bins_hi = parse_key(key, value)?,
                "dad.train_gate" => {
                    cfg.train_gate = match value {
                        "gt" => TrainGate::Gt,
                        "predicted" => TrainGate::Predicted,
                        _ => {
                            return Err(Error::Config(format!(
                                "key \"dad.train_gate\": expected gt or predicted, got {value:?}"
                            )))
                        }
                    }
                }
                "loss.beta2" => cfg.loss.beta2 = parse_key(key, value)?,
                "loss.eps" => cfg.loss.eps = parse_key(key, value)?,
                "optim.lr" => cfg.optim.lr = parse_key(key, value)?,
                "optim.momentum" => cfg.optim.momentum = parse_key(key, value)?,
                "optim.decay" => cfg.optim.decay = parse_key(key, value)?,
                "optim.eps" => cfg.optim.eps = parse_key(key, value)?,
                "augment" => cfg.augment = parse_bool(key, value)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and parse a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural sanity: failures name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "key \"input_size\": must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("key \"batch\": must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("key \"steps\": must be at least 1".into()));
        }
        if self.ckpt_every == 0 {
            return Err(Error::Config("key \"ckpt_every\": must be at least 1".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("key \"model.channels\": widths must be positive".into()));
        }
        if self.channels[3] != self.channels[4] {
            return Err(Error::Config(format!(
                "key \"model.channels\": the two deepest widths must match for cross-level gating, got {} and {}",
                self.channels[3], self.channels[4]
            )));
        }
        if self.common_channels == 0 {
            return Err(Error::Config("key \"fce.common_channels\": must be positive".into()));
        }
        if self.reduction_ratio == 0 {
            return Err(Error::Config("key \"rpl.reduction_ratio\": must be positive".into()));
        }
        if self.channels[3] % self.reduction_ratio != 0 {
            return Err(Error::Config(format!(
                "key \"rpl.reduction_ratio\": {} does not divide the deep width {}",
                self.reduction_ratio, self.channels[3]
            )));
        }
        if (2 * self.common_channels) % self.reduction_ratio != 0 {
            return Err(Error::Config(format!(
                "key \"rpl.reduction_ratio\": {} does not divide the context concat width {}",
                self.reduction_ratio,
                2 * self.common_channels
            )));
        }
        if self.pg_hidden == 0 {
            return Err(Error::Config("key \"pg.hidden\": must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bins_lo) || !(self.bins_lo < self.bins_hi) || self.bins_hi > 1.0 {
            return Err(Error::Config(format!(
                "keys \"bins.lo\"/\"bins.hi\": need 0 <= lo < hi <= 1, got {} and {}",
                self.bins_lo, self.bins_hi
            )));
        }
        if self.loss.beta2 <= 0.0 {
            return Err(Error::Config("key \"loss.beta2\": must be positive".into()));
        }
        if self.loss.eps <= 0.0 {
            return Err(Error::Config("key \"loss.eps\": must be positive".into()));
        }
        if self.optim.lr <= 0.0 {
            return Err(Error::Config("key \"optim.lr\": must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(Error::Config("key \"optim.momentum\": must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.optim.decay) || self.optim.decay == 0.0 {
            return Err(Error::Config("key \"optim.decay\": must be in (0, 1)".into()));
        }
        if self.optim.eps <= 0.0 {
            return Err(Error::Config("key \"optim.eps\": must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line in a fixed order.
    /// Byte-stable for a given config, suitable for file provenance.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let gate = match self.train_gate {
            TrainGate::Gt => "gt",
            TrainGate::Predicted => "predicted",
        };
        let ch = self.channels.map(|c| c.to_string()).join(",");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "data_dir = {}", self.data_dir);
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "ckpt_every = {}", self.ckpt_every);
        let _ = writeln!(s, "resume = {}", self.resume);
        let _ = writeln!(s, "model.channels = {ch}");
        let _ = writeln!(s, "fce.common_channels = {}", self.common_channels);
        let _ = writeln!(s, "rpl.reduction_ratio = {}", self.reduction_ratio);
        let _ = writeln!(s, "rpl.cross_gating = {}", self.cross_gating);
        let _ = writeln!(s, "pg.hidden = {}", self.pg_hidden);
        let _ = writeln!(s, "bins.lo = {}", self.bins_lo);
        let _ = writeln!(s, "bins.hi = {}", self.bins_hi);
        let _ = writeln!(s, "dad.train_gate = {gate}");
        let _ = writeln!(s, "loss.beta2 = {}", self.loss.beta2);
        let _ = writeln!(s, "loss.eps = {}", self.loss.eps);
        let _ = writeln!(s, "optim.lr = {}", self.optim.lr);
        let _ = writeln!(s, "optim.momentum = {}", self.optim.momentum);
        let _ = writeln!(s, "optim.decay = {}", self.optim.decay);
        let _ = writeln!(s, "optim.eps = {}", self.optim.eps);
        let _ = writeln!(s, "augment = {}", self.augment);
        s
    }

    /// FNV-1a hash of the keys that determine parameter shapes. Checkpoints
    /// carry it so a restore into a differently shaped model is refused.
    pub fn architecture_fingerprint(&self) -> u64 {
        let desc = format!(
            "channels={},{},{},{},{};common={};ratio={};pg={}",
            self.channels[0],
            self.channels[1],
            self.channels[2],
            self.channels[3],
            self.channels[4],
            self.common_channels,
            self.reduction_ratio,
            self.pg_hidden
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in desc.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
