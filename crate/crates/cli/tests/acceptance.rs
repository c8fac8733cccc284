//! Acceptance suite: eight end-to-end criteria covering wavelet exactness,
//! gradient correctness, metric fidelity, routing and frequency separation,
//! loss hand-values, toy-training quality, and CLI determinism/diagnostics.
//!
//! Each test prints a single `PASS criterion N: ...` / `FAIL criterion N: ...`
//! line (visible under `--nocapture`); failures list every sub-check that
//! missed before panicking.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saldet::config::RunConfig;
use saldet::context::{attention_matrix, wavelet_interaction};
use saldet::data::generate_dataset;
use saldet::detail::{detail_forward, kernel_set, routing_masks, DetailParams, KERNEL_SIZES};
use saldet::localizer::bin_proportion;
use saldet::losses::{bce_loss, fm_loss, iou_loss};
use saldet::metrics::{e_measure, evaluate_pair, f_measure, mae, s_measure};
use saldet::tensor::{Graph, Shape, Tensor, Var};
use saldet::train;
use saldet::wavelet::{dwt2, idwt2};

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(name: &'static str) -> Criterion {
        Criterion { name, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(detail());
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!("PASS {}", self.name);
        } else {
            println!("FAIL {} ({} sub-checks)", self.name, self.failures.len());
            for f in &self.failures {
                println!("  - {f}");
            }
            panic!("{}: {} sub-checks failed", self.name, self.failures.len());
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: wavelet round-trip exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_wavelet_roundtrip() {
    let mut c = Criterion::new("criterion 1: wavelet round-trip on 20 random tensors");
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let n = rng.gen_range(1..=4usize);
        let ch = rng.gen_range(1..=3usize);
        let h = 2 * rng.gen_range(1..=16usize);
        let w = 2 * rng.gen_range(1..=16usize);
        let x = Tensor::uniform(Shape::new(n, ch, h, w), -2.0, 2.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let quad = dwt2(&mut g, xv).unwrap();
        let recon = idwt2(&mut g, quad).unwrap();

        let mut max_err = 0.0f64;
        for (a, b) in x.data().iter().zip(g.value(recon).data()) {
            max_err = max_err.max((a - b).abs());
        }
        let energy_in: f64 = x.data().iter().map(|v| v * v).sum();
        let mut energy_coef = 0.0;
        for band in [quad.ll, quad.lh, quad.hl, quad.hh] {
            energy_coef += g.value(band).data().iter().map(|v| v * v).sum::<f64>();
        }
        let residual = (energy_in - energy_coef).abs() / energy_in;
        c.check(max_err <= 1e-9, || {
            format!("case {case} ({n}x{ch}x{h}x{w}): reconstruction error {max_err:e}")
        });
        c.check(residual <= 1e-9, || {
            format!("case {case} ({n}x{ch}x{h}x{w}): energy residual {residual:e}")
        });
    }
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 5.0, || format!("runtime {elapsed:.2}s exceeds 5s"));
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_suite() {
    let mut c = Criterion::new("criterion 2: gradient suite (ops, stages, losses, full model)");
    let started = Instant::now();
    let results =
        saldet::gradcheck::run_all(&saldet::gradcheck::GradcheckOptions::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    c.check(results.len() > 30, || {
        format!("only {} checks ran; expected full coverage", results.len())
    });
    c.check(results.iter().any(|r| r.name.starts_with("model.")), || {
        "no full-model check present".to_string()
    });
    for r in &results {
        c.check(r.passed, || {
            format!("{}: worst rel err {:e} > tol {:e} at {}", r.name, r.worst_rel_err, r.tolerance, r.worst_detail)
        });
    }
    c.check(elapsed < 60.0, || format!("runtime {elapsed:.1}s exceeds 60s"));
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 3: metric oracles
// ---------------------------------------------------------------------------

fn is_fg(v: f64) -> bool {
    v > 0.5
}

/// Literal mean |s - g|.
fn oracle_mae(s: &[f64], g: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..s.len() {
        sum += (s[i] - g[i]).abs();
    }
    sum / s.len() as f64
}

/// Literal F-beta curve: recount TP/positives at every threshold, a pixel
/// being positive at `t` iff `255 * s >= t`.
fn oracle_f_curve(s: &[f64], g: &[f64], beta2: f64) -> Vec<f64> {
    let fg_total = g.iter().filter(|&&v| is_fg(v)).count() as f64;
    let mut curve = vec![0.0; 256];
    for (t, slot) in curve.iter_mut().enumerate() {
        let mut positives = 0.0;
        let mut true_positives = 0.0;
        for i in 0..s.len() {
            if s[i] * 255.0 >= t as f64 {
                positives += 1.0;
                if is_fg(g[i]) {
                    true_positives += 1.0;
                }
            }
        }
        let precision = if positives == 0.0 { 0.0 } else { true_positives / positives };
        let recall = true_positives / fg_total;
        let denom = beta2 * precision + recall;
        *slot = if denom == 0.0 { 0.0 } else { (1.0 + beta2) * precision * recall / denom };
    }
    curve
}

/// Literal enhanced-alignment measure: binarize at twice the prediction
/// mean, center both maps, average (phi+1)^2/4.
fn oracle_e(s: &[f64], g: &[f64]) -> f64 {
    let n = s.len() as f64;
    let tau = (2.0 * s.iter().sum::<f64>() / n).clamp(0.0, 1.0);
    let d: Vec<f64> = s.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
    let gb: Vec<f64> = g.iter().map(|&v| if is_fg(v) { 1.0 } else { 0.0 }).collect();
    let fg = gb.iter().sum::<f64>();
    if fg == 0.0 || fg == n {
        let mut dis = 0.0;
        for i in 0..d.len() {
            dis += (d[i] - gb[i]).abs();
        }
        return 1.0 - dis / n;
    }
    let mean_d = d.iter().sum::<f64>() / n;
    let mean_g = fg / n;
    let mut acc = 0.0;
    for i in 0..d.len() {
        let a = d[i] - mean_d;
        let b = gb[i] - mean_g;
        let denom = a * a + b * b;
        let phi = if denom == 0.0 { 0.0 } else { 2.0 * a * b / denom };
        acc += (phi + 1.0) * (phi + 1.0) / 4.0;
    }
    acc / n
}

/// Literal structure measure: object term on foreground/inverted background,
/// region term as area-weighted per-quadrant SSIM around the rounded
/// ground-truth centroid.
fn oracle_s(s: &[f64], g: &[f64], h: usize, w: usize, alpha: f64) -> f64 {
    let n = s.len() as f64;
    let fg: Vec<usize> = (0..s.len()).filter(|&i| is_fg(g[i])).collect();
    if fg.is_empty() {
        return 1.0 - s.iter().sum::<f64>() / n;
    }
    if fg.len() == s.len() {
        return s.iter().sum::<f64>() / n;
    }

    let object = |vals: &[f64]| -> f64 {
        let m = vals.len() as f64;
        let x = vals.iter().sum::<f64>() / m;
        let sigma = if vals.len() > 1 {
            (vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
    };
    let fg_vals: Vec<f64> = fg.iter().map(|&i| s[i]).collect();
    let bg_vals: Vec<f64> =
        (0..s.len()).filter(|&i| !is_fg(g[i])).map(|i| 1.0 - s[i]).collect();
    let mu = fg.len() as f64 / n;
    let s_object = mu * object(&fg_vals) + (1.0 - mu) * object(&bg_vals);

    let ssim = |sv: &[f64], gv: &[f64]| -> f64 {
        let m = sv.len() as f64;
        let x = sv.iter().sum::<f64>() / m;
        let y = gv.iter().sum::<f64>() / m;
        let denom = m - 1.0 + f64::EPSILON;
        let sx = sv.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom;
        let sy = gv.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom;
        let sxy = sv.iter().zip(gv).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
        let num = 4.0 * x * y * sxy;
        let den = (x * x + y * y) * (sx + sy);
        if num != 0.0 {
            num / (den + f64::EPSILON)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let (mut sum_x, mut sum_y) = (0.0, 0.0);
    for &i in &fg {
        sum_x += (i % w + 1) as f64;
        sum_y += (i / w + 1) as f64;
    }
    let cx = (sum_x / fg.len() as f64).round() as usize;
    let cy = (sum_y / fg.len() as f64).round() as usize;
    let mut s_region = 0.0;
    for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
        if y1 == y0 || x1 == x0 {
            continue;
        }
        let mut sq = Vec::new();
        let mut gq = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                sq.push(s[y * w + x]);
                gq.push(if is_fg(g[y * w + x]) { 1.0 } else { 0.0 });
            }
        }
        s_region += (sq.len() as f64 / n) * ssim(&sq, &gq);
    }

    (alpha * s_object + (1.0 - alpha) * s_region).clamp(0.0, 1.0)
}

#[test]
fn criterion_3_metric_oracles() {
    let mut c = Criterion::new("criterion 3: metric self-evaluation and double-loop oracles");
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (h, w) = (16usize, 16usize);

    // Self-evaluation: a binary mask scored against itself is perfect.
    for case in 0..5 {
        let mut m = vec![0.0f64; h * w];
        for v in m.iter_mut() {
            *v = if rng.gen_bool(0.4) { 1.0 } else { 0.0 };
        }
        m[0] = 1.0;
        m[1] = 0.0;
        let report = evaluate_pair(&m, &m, h, w).unwrap();
        c.check(report.mae.abs() <= 1e-6, || format!("self-eval {case}: mae {:e}", report.mae));
        c.check((report.fbeta_max - 1.0).abs() <= 1e-6, || {
            format!("self-eval {case}: fbeta_max {}", report.fbeta_max)
        });
        c.check((report.emeasure - 1.0).abs() <= 1e-6, || {
            format!("self-eval {case}: emeasure {}", report.emeasure)
        });
        c.check((report.smeasure - 1.0).abs() <= 1e-6, || {
            format!("self-eval {case}: smeasure {}", report.smeasure)
        });
    }

    // Oracle agreement on 25 random continuous/binary pairs.
    for case in 0..25 {
        let s: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        let density: f64 = rng.gen_range(0.2..0.8);
        let mut g: Vec<f64> =
            (0..h * w).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect();
        g[0] = 1.0;
        g[1] = 0.0;

        let got_mae = mae(&s, &g).unwrap();
        let want_mae = oracle_mae(&s, &g);
        c.check((got_mae - want_mae).abs() <= 1e-10, || {
            format!("pair {case}: mae {got_mae} vs oracle {want_mae}")
        });

        let fm = f_measure(&s, &g, 0.3).unwrap();
        let want_curve = oracle_f_curve(&s, &g, 0.3);
        let worst = fm
            .curve
            .iter()
            .zip(&want_curve)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c.check(worst <= 1e-10, || format!("pair {case}: F curve deviates by {worst:e}"));
        let want_max = want_curve.iter().cloned().fold(0.0, f64::max);
        c.check((fm.max - want_max).abs() <= 1e-10, || {
            format!("pair {case}: fbeta_max {} vs oracle {want_max}", fm.max)
        });

        let got_e = e_measure(&s, &g).unwrap();
        let want_e = oracle_e(&s, &g);
        c.check((got_e - want_e).abs() <= 1e-10, || {
            format!("pair {case}: emeasure {got_e} vs oracle {want_e}")
        });

        let got_s = s_measure(&s, &g, h, w, 0.5).unwrap();
        let want_s = oracle_s(&s, &g, h, w, 0.5);
        c.check((got_s - want_s).abs() <= 1e-10, || {
            format!("pair {case}: smeasure {got_s} vs oracle {want_s}")
        });
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 4: proportion-routed kernel selection
// ---------------------------------------------------------------------------

/// Fresh random conv stacks for the detail stage, as plain graph leaves so a
/// test can perturb individual kernels between runs.
fn detail_leaves(g: &mut Graph, channels: usize, rng: &mut ChaCha8Rng) -> DetailParams {
    let mut ext_w = [Var::default(); 5];
    let mut ext_b = [Var::default(); 5];
    let mut opt_w = [Var::default(); 5];
    let mut opt_b = [Var::default(); 5];
    for (i, k) in KERNEL_SIZES.iter().enumerate() {
        ext_w[i] = g.constant(Tensor::uniform(Shape::new(channels, channels, *k, *k), -0.3, 0.3, rng));
        ext_b[i] = g.constant(Tensor::uniform(Shape::new(1, channels, 1, 1), -0.1, 0.1, rng));
        opt_w[i] = g.constant(Tensor::uniform(Shape::new(1, 1, *k, *k), -0.3, 0.3, rng));
        opt_b[i] = g.constant(Tensor::uniform(Shape::new(1, 1, 1, 1), -0.1, 0.1, rng));
    }
    DetailParams {
        ext_w,
        ext_b,
        opt_w,
        opt_b,
        head_w: g.constant(Tensor::uniform(Shape::new(1, 1, 1, 1), -0.3, 0.3, rng)),
        head_b: g.constant(Tensor::uniform(Shape::new(1, 1, 1, 1), -0.1, 0.1, rng)),
    }
}

/// Run the detail stage over a 3-sample batch binned Small/Mid/Large, with
/// every parameter tensor drawn from `seed` except the listed kernel's,
/// which are nudged by +0.25.
fn detail_run(seed: u64, perturb_kernel: Option<usize>) -> (Vec<f64>, usize) {
    let channels = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut p = detail_leaves(&mut g, channels, &mut rng);
    if let Some(k) = perturb_kernel {
        let j = KERNEL_SIZES.iter().position(|&s| s == k).unwrap();
        for var in [p.ext_w[j], p.opt_w[j]] {
            let bumped: Vec<f64> = g.value(var).data().iter().map(|v| v + 0.25).collect();
            let shape = g.value(var).shape();
            let new = g.constant(Tensor::new(shape, bumped).unwrap());
            if var == p.ext_w[j] {
                p.ext_w[j] = new;
            } else {
                p.opt_w[j] = new;
            }
        }
    }
    let bins = [
        bin_proportion(0.10, 0.25, 0.50),
        bin_proportion(0.30, 0.25, 0.50),
        bin_proportion(0.60, 0.25, 0.50),
    ];
    let x = g.constant(Tensor::uniform(Shape::new(3, channels, 8, 8), -1.0, 1.0, &mut rng));
    let masks = routing_masks(&mut g, &bins).unwrap();
    let out = detail_forward(&mut g, x, &p, &masks).unwrap();
    let per_sample = g.value(out).data().len() / 3;
    (g.value(out).data().to_vec(), per_sample)
}

#[test]
fn criterion_4_kernel_routing() {
    let mut c = Criterion::new("criterion 4: proportion-routed kernel selection");

    let cases = [
        (0.10, &[1usize, 3, 5][..]),
        (0.30, &[1, 3, 5, 7][..]),
        (0.60, &[1, 3, 5, 7, 9][..]),
    ];
    for (p, want) in cases {
        let got = kernel_set(bin_proportion(p, 0.25, 0.50));
        c.check(got == want, || format!("proportion {p}: kernel set {got:?}, want {want:?}"));
    }

    // Samples binned Small/Mid/Large in one batch; perturbing a kernel's
    // weights must leave every sample that doesn't select it bit-identical.
    let (base, per) = detail_run(31, None);
    for (kernel, unaffected) in [(9usize, vec![0usize, 1]), (7, vec![0])] {
        let (bumped, _) = detail_run(31, Some(kernel));
        for sample in 0..3 {
            let same = base[sample * per..(sample + 1) * per]
                .iter()
                .zip(&bumped[sample * per..(sample + 1) * per])
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if unaffected.contains(&sample) {
                c.check(same, || {
                    format!("kernel {kernel}: sample {sample} changed despite not selecting it")
                });
            } else {
                c.check(!same, || {
                    format!("kernel {kernel}: sample {sample} ignored a selected kernel's weights")
                });
            }
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 5: frequency separation and attention shape
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_frequency_separation() {
    let mut c = Criterion::new("criterion 5: band independence and attention rows");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let band_shape = Shape::new(1, 4, 4, 4); // bands of an 8x8 feature

    let draw = |rng: &mut ChaCha8Rng| Tensor::uniform(band_shape, -1.0, 1.0, rng);
    let ll2 = draw(&mut rng);
    let ll3 = draw(&mut rng);
    let hh2 = draw(&mut rng);
    let hh3 = draw(&mut rng);

    // Interact every band the way the context stage does, capturing the LL
    // interaction before synthesis; then rerun with only the HH inputs
    // changed.
    let run = |hh2: &Tensor, hh3: &Tensor| -> Vec<f64> {
        let mut g = Graph::new();
        let a_ll = g.constant(ll2.clone());
        let b_ll = g.constant(ll3.clone());
        let a_hh = g.constant(hh2.clone());
        let b_hh = g.constant(hh3.clone());
        let i_ll = wavelet_interaction(&mut g, a_ll, b_ll).unwrap();
        let _i_hh = wavelet_interaction(&mut g, a_hh, b_hh).unwrap();
        g.value(i_ll).data().to_vec()
    };
    let base = run(&hh2, &hh3);
    let mut hh2_alt = hh2.clone();
    for v in hh2_alt.data_mut() {
        *v += 0.7;
    }
    let mut hh3_alt = hh3.clone();
    for v in hh3_alt.data_mut() {
        *v -= 1.3;
    }
    let moved = run(&hh2_alt, &hh3_alt);
    let identical = base.iter().zip(&moved).all(|(a, b)| a.to_bits() == b.to_bits());
    c.check(identical, || {
        "LL interaction output changed when only HH inputs were perturbed".to_string()
    });

    // Affinity over a band of an 8x8 feature: side (8/2)*(8/2), rows sum 1.
    let mut g = Graph::new();
    let x = g.constant(Tensor::uniform(Shape::new(1, 4, 8, 8), -1.0, 1.0, &mut rng));
    let quad = dwt2(&mut g, x).unwrap();
    let other = g.constant(Tensor::uniform(Shape::new(1, 4, 4, 4), -1.0, 1.0, &mut rng));
    let m = attention_matrix(&mut g, quad.ll, other).unwrap();
    let shape = g.value(m).shape();
    c.check(shape.h == 16 && shape.w == 16, || {
        format!("attention matrix is {shape}, want side 16 = (8/2)*(8/2)")
    });
    let data = g.value(m).data();
    for row in 0..shape.h {
        let sum: f64 = data[row * shape.w..(row + 1) * shape.w].iter().sum();
        c.check((sum - 1.0).abs() <= 1e-9, || format!("attention row {row} sums to {sum}"));
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 6: loss hand-values
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_loss_hand_values() {
    let mut c = Criterion::new("criterion 6: loss hand-values on 2x2 instances");
    let mut g = Graph::new();
    let half = g.constant(Tensor::filled(Shape::new(1, 1, 2, 2), 0.5));
    let two_ones = g.constant(Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap());

    let bce = bce_loss(&mut g, half, two_ones).unwrap();
    let got_bce = g.value(bce).data()[0];
    c.check((got_bce - std::f64::consts::LN_2).abs() <= 1e-9, || {
        format!("bce(0.5, any) = {got_bce}, want ln 2")
    });

    // inter = 1, union = 3 -> 1 - 1/3 (the 1e-8 ratio guard shifts ~2e-9).
    let iou = iou_loss(&mut g, half, two_ones, 1e-8).unwrap();
    let got_iou = g.value(iou).data()[0];
    c.check((got_iou - 2.0 / 3.0).abs() <= 1e-8, || {
        format!("iou(0.5, two ones) = {got_iou}, want 2/3")
    });

    // TP = FP = FN = 1 at beta^2 = 0.3 -> 1 - 1.3/2.6.
    let fm = fm_loss(&mut g, half, half, 0.3, 1e-8).unwrap();
    let got_fm = g.value(fm).data()[0];
    c.check((got_fm - 0.5).abs() <= 1e-8, || {
        format!("fm(0.5, 0.5) = {got_fm}, want 0.5")
    });
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 7: toy training quality
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_toy_training() {
    let mut c = Criterion::new("criterion 7: toy training bounds and bitwise rerun");
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("data");
    generate_dataset(&data, 200, 64, 1).unwrap();

    let mut cfg = RunConfig::default();
    cfg.data_dir = data.to_string_lossy().into_owned();
    cfg.out_dir = dir.path().join("run_a").to_string_lossy().into_owned();
    assert_eq!(cfg.steps, 300);
    assert_eq!(cfg.batch, 4);
    assert_eq!(cfg.optim.lr, 1e-5);

    let started = Instant::now();
    let a = train::run(&cfg, |_, _| {}).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 900.0, || format!("300-step run took {elapsed:.0}s, budget 900s"));
    c.check(a.final_train_mae < 0.10, || {
        format!("train MAE {:.4} >= 0.10", a.final_train_mae)
    });
    c.check(a.final_pg_mse < 0.01, || {
        format!("proportion-head MSE {:.5} >= 0.01", a.final_pg_mse)
    });
    c.check(a.rows.len() == 300, || format!("loss log has {} rows, want 300", a.rows.len()));

    // Seeded rerun reproduces the loss log byte for byte.
    let mut cfg_b = cfg.clone();
    cfg_b.out_dir = dir.path().join("run_b").to_string_lossy().into_owned();
    train::run(&cfg_b, |_, _| {}).unwrap();
    let log_a = std::fs::read(dir.path().join("run_a/loss_log.csv")).unwrap();
    let log_b = std::fs::read(dir.path().join("run_b/loss_log.csv")).unwrap();
    c.check(log_a == log_b, || "rerun produced a different loss log".to_string());

    // Single-image overfit.
    let data1 = dir.path().join("data1");
    generate_dataset(&data1, 1, 64, 2).unwrap();
    let mut cfg1 = RunConfig::default();
    cfg1.data_dir = data1.to_string_lossy().into_owned();
    cfg1.out_dir = dir.path().join("run_1").to_string_lossy().into_owned();
    cfg1.batch = 1;
    cfg1.augment = false;
    let one = train::run(&cfg1, |_, _| {}).unwrap();
    c.check(one.final_train_mae < 0.05, || {
        format!("single-image overfit MAE {:.4} >= 0.05", one.final_train_mae)
    });
    c.finish();
}

// ---------------------------------------------------------------------------
// Criterion 8: CLI determinism and error hygiene
// ---------------------------------------------------------------------------

fn saldet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saldet"))
        .args(args)
        .output()
        .expect("spawn saldet")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

/// Copy every mask PNG of a generated dataset into `dest`.
fn copy_masks(data: &Path, dest: &Path) -> Vec<PathBuf> {
    std::fs::create_dir_all(dest).unwrap();
    let mut copied = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("mask_"))
        .collect();
    names.sort();
    for name in names {
        let to = dest.join(&name);
        std::fs::copy(data.join(&name), &to).unwrap();
        copied.push(to);
    }
    copied
}

#[test]
fn criterion_8_cli_determinism_and_diagnostics() {
    let mut c = Criterion::new("criterion 8: CLI determinism and diagnostics");
    let dir = tempfile::TempDir::new().unwrap();
    let path_of = |name: &str| dir.path().join(name);
    let str_of = |p: &Path| p.to_string_lossy().into_owned();

    // gen-data: deterministic bytes, clean failure on a bad size.
    let d1 = path_of("d1");
    let d2 = path_of("d2");
    for d in [&d1, &d2] {
        let out = saldet(&["gen-data", "--out", &str_of(d), "--count", "6", "--size", "32", "--seed", "5"]);
        c.check(out.status.success(), || format!("gen-data failed: {}", stderr_of(&out)));
    }
    for name in ["index.csv", "image_0000.png", "mask_0003.png"] {
        c.check(read(&d1.join(name)) == read(&d2.join(name)), || {
            format!("gen-data rerun changed {name}")
        });
    }
    let bad = saldet(&["gen-data", "--out", &str_of(&path_of("d3")), "--count", "1", "--size", "33", "--seed", "5"]);
    c.check(bad.status.code() == Some(1), || {
        format!("gen-data --size 33 exited {:?}, want 1", bad.status.code())
    });
    c.check(stderr_of(&bad).contains("32"), || {
        format!("gen-data size diagnostic lacks the divisibility hint: {}", stderr_of(&bad))
    });

    // train-toy: malformed config names file and key; missing data names path;
    // fixed seed reruns are byte-identical.
    let bad_cfg = path_of("bad.cfg");
    std::fs::write(&bad_cfg, "florb = 1\n").unwrap();
    let out = saldet(&["train-toy", "--config", &str_of(&bad_cfg), "--out", &str_of(&path_of("x"))]);
    c.check(out.status.code() == Some(1), || {
        format!("malformed config exited {:?}, want 1", out.status.code())
    });
    c.check(stderr_of(&out).contains("florb") && stderr_of(&out).contains("bad.cfg"), || {
        format!("config diagnostic lacks key/file: {}", stderr_of(&out))
    });

    let tiny_cfg = |data: &Path, out: &Path, seed: u64| {
        format!(
            "seed = {seed}\ninput_size = 32\nbatch = 2\nsteps = 4\nckpt_every = 100\n\
             model.channels = 4,4,4,4,4\nfce.common_channels = 4\nrpl.reduction_ratio = 2\n\
             pg.hidden = 4\ndata_dir = {}\nout_dir = {}\n",
            data.display(),
            out.display()
        )
    };
    let no_data_cfg = path_of("no_data.cfg");
    std::fs::write(&no_data_cfg, tiny_cfg(&path_of("absent"), &path_of("x"), 3)).unwrap();
    let out = saldet(&["train-toy", "--config", &str_of(&no_data_cfg)]);
    c.check(out.status.code() == Some(2), || {
        format!("missing dataset exited {:?}, want 2", out.status.code())
    });
    c.check(stderr_of(&out).contains("absent"), || {
        format!("missing-dataset diagnostic lacks the path: {}", stderr_of(&out))
    });

    let train_cfg = path_of("train.cfg");
    std::fs::write(&train_cfg, tiny_cfg(&d1, &path_of("t_unused"), 3)).unwrap();
    for out_dir in ["t1", "t2"] {
        let out = saldet(&["train-toy", "--config", &str_of(&train_cfg), "--out", &str_of(&path_of(out_dir))]);
        c.check(out.status.success(), || format!("train-toy failed: {}", stderr_of(&out)));
    }
    c.check(
        read(&path_of("t1").join("loss_log.csv")) == read(&path_of("t2").join("loss_log.csv")),
        || "train-toy rerun changed the loss log".to_string(),
    );

    // eval: self-evaluation, determinism, and partial-input signaling.
    let gt = path_of("gt");
    let masks = copy_masks(&d1, &gt);
    let pred = path_of("pred");
    copy_masks(&d1, &pred);
    let csv1 = path_of("eval1.csv");
    let out = saldet(&["eval", "--pred", &str_of(&pred), "--gt", &str_of(&gt), "--out", &str_of(&csv1)]);
    c.check(out.status.success(), || format!("eval failed: {}", stderr_of(&out)));
    let text = String::from_utf8(read(&csv1)).unwrap();
    let mean_line = text.lines().last().unwrap_or("").to_string();
    c.check(mean_line.starts_with("mean,0,1,"), || {
        format!("self-eval mean row not perfect: {mean_line}")
    });
    let csv2 = path_of("eval2.csv");
    saldet(&["eval", "--pred", &str_of(&pred), "--gt", &str_of(&gt), "--out", &str_of(&csv2)]);
    c.check(read(&csv1) == read(&csv2), || "eval rerun changed the CSV".to_string());

    let dropped = masks[2].file_name().unwrap().to_string_lossy().into_owned();
    std::fs::remove_file(&pred.join(&dropped)).unwrap();
    let csv3 = path_of("eval3.csv");
    let out = saldet(&["eval", "--pred", &str_of(&pred), "--gt", &str_of(&gt), "--out", &str_of(&csv3)]);
    c.check(out.status.code() == Some(1), || {
        format!("partial eval exited {:?}, want 1", out.status.code())
    });
    c.check(stderr_of(&out).contains(&dropped), || {
        format!("partial eval did not name {dropped}: {}", stderr_of(&out))
    });
    let rows = String::from_utf8(read(&csv3)).unwrap().lines().count();
    c.check(rows == 1 + 5 + 1, || format!("partial CSV has {rows} lines, want header+5+mean"));

    // dwt-roundtrip: exact on an even image, clean rejection of odd sizes,
    // deterministic stdout.
    let even = path_of("even.png");
    image::save_buffer(&even, &vec![128u8; 32 * 32], 32, 32, image::ColorType::L8).unwrap();
    let odd = path_of("odd.png");
    image::save_buffer(&odd, &vec![128u8; 31 * 32], 31, 32, image::ColorType::L8).unwrap();
    let out1 = saldet(&["dwt-roundtrip", "--image", &str_of(&even)]);
    c.check(out1.status.success(), || format!("dwt-roundtrip failed: {}", stderr_of(&out1)));
    let stdout = String::from_utf8_lossy(&out1.stdout).into_owned();
    let errors: Vec<f64> = stdout
        .lines()
        .filter_map(|l| l.split('=').nth(1))
        .filter_map(|v| v.trim().parse::<f64>().ok())
        .collect();
    c.check(errors.len() == 2 && errors.iter().all(|&e| e <= 1e-9), || {
        format!("round-trip errors not within 1e-9: {stdout}")
    });
    let out2 = saldet(&["dwt-roundtrip", "--image", &str_of(&even)]);
    c.check(out1.stdout == out2.stdout, || "dwt-roundtrip stdout not deterministic".to_string());
    let out = saldet(&["dwt-roundtrip", "--image", &str_of(&odd)]);
    c.check(out.status.code() == Some(1), || {
        format!("odd image exited {:?}, want 1", out.status.code())
    });
    c.check(stderr_of(&out).contains("odd.png"), || {
        format!("odd-size diagnostic lacks the path: {}", stderr_of(&out))
    });
    c.check(out.stdout.is_empty(), || "odd image printed partial output".to_string());

    // gradcheck: deterministic report under a fixed seed.
    let g1 = saldet(&["gradcheck", "--seed", "3"]);
    let g2 = saldet(&["gradcheck", "--seed", "3"]);
    c.check(g1.status.success(), || format!("gradcheck failed: {}", stderr_of(&g1)));
    c.check(g1.stdout == g2.stdout, || "gradcheck stdout not deterministic".to_string());

    // Unknown flags are validation failures, not I/O failures.
    let out = saldet(&["gen-data", "--florb", "1"]);
    c.check(out.status.code() == Some(1), || {
        format!("unknown flag exited {:?}, want 1", out.status.code())
    });
    c.finish();
}
