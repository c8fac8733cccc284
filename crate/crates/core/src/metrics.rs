//! Evaluation metrics over plain saliency/ground-truth buffers.
//!
//! All functions take the prediction as f64 values in [0,1] and the ground
//! truth as a binary map (foreground iff > 0.5); none of them touch the
//! autodiff tape. MAE sums sorted absolute differences so that the result
//! is exactly invariant under any simultaneous pixel permutation of both
//! maps; the F-measure curve works on integer 8-bit level histograms and is
//! exactly permutation-invariant by construction.

use crate::{Error, Result};

/// β² used by the evaluation F-measure.
pub const DEFAULT_BETA2: f64 = 0.3;
/// Object/region balance of the structure measure.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Per-image metric values. `fbeta_curve[t]` is Fβ after binarizing at
/// integer level `t` (a pixel is positive iff `255·s ≥ t`); `fbeta_max` is
/// the curve maximum and `fbeta_adaptive` the curve at the adaptive
/// threshold (twice the prediction mean, snapped up to the level grid).
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub mae: f64,
    pub fbeta_curve: Vec<f64>,
    pub fbeta_max: f64,
    pub fbeta_adaptive: f64,
    pub emeasure: f64,
    pub smeasure: f64,
    /// The ground truth had no foreground; the F curve was forced to zero.
    pub empty_gt: bool,
}

/// F-measure products of one prediction/truth pair.
#[derive(Clone, Debug)]
pub struct FMeasureResult {
    pub curve: Vec<f64>,
    pub max: f64,
    pub adaptive: f64,
    pub empty_gt: bool,
}

fn check_same_len(name: &str, s: &[f64], g: &[f64]) -> Result<()> {
    if s.len() != g.len() {
        return Err(Error::Shape(format!(
            "{name}: prediction has {} pixels but ground truth has {}",
            s.len(),
            g.len()
        )));
    }
    if s.is_empty() {
        return Err(Error::Argument(format!("{name}: empty maps")));
    }
    Ok(())
}

fn is_fg(v: f64) -> bool {
    v > 0.5
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean absolute error. Differences are sorted before summation, so the
/// value is bitwise identical under simultaneous pixel permutations and
/// under swapping the two maps.
pub fn mae(s: &[f64], g: &[f64]) -> Result<f64> {
    check_same_len("mae", s, g)?;
    let mut diffs: Vec<f64> = s.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    diffs.sort_unstable_by(f64::total_cmp);
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Fβ over the 256-level threshold sweep plus the adaptive variant.
///
/// A pixel counts as positive at threshold `t` iff `255·s ≥ t`, which for
/// integer `t` equals `floor(255·s) ≥ t` — so one histogram pass and a
/// suffix sum cover all thresholds. Empty ground truth yields an all-zero
/// curve with `empty_gt` set instead of an error.
pub fn f_measure(s: &[f64], g: &[f64], beta2: f64) -> Result<FMeasureResult> {
    check_same_len("f_measure", s, g)?;
    if beta2 <= 0.0 {
        return Err(Error::Argument(format!("f_measure beta2 must be positive, got {beta2}")));
    }
    let mut hist_all = [0u64; 256];
    let mut hist_fg = [0u64; 256];
    let mut fg_total = 0u64;
    for (&sv, &gv) in s.iter().zip(g) {
        let level = ((sv * 255.0).floor() as i64).clamp(0, 255) as usize;
        hist_all[level] += 1;
        if is_fg(gv) {
            hist_fg[level] += 1;
            fg_total += 1;
        }
    }
    let empty_gt = fg_total == 0;
    let mut curve = vec![0.0; 256];
    if !empty_gt {
        let mut positives = 0u64;
        let mut true_positives = 0u64;
        for t in (0..256).rev() {
            positives += hist_all[t];
            true_positives += hist_fg[t];
            let precision = if positives == 0 { 0.0 } else { true_positives as f64 / positives as f64 };
            let recall = true_positives as f64 / fg_total as f64;
            let denom = beta2 * precision + recall;
            curve[t] = if denom == 0.0 { 0.0 } else { (1.0 + beta2) * precision * recall / denom };
        }
    }
    let max = curve.iter().cloned().fold(0.0, f64::max);
    let tau = (2.0 * mean(s)).clamp(0.0, 1.0);
    let adaptive_level = ((tau * 255.0).ceil() as i64).clamp(0, 255) as usize;
    let adaptive = curve[adaptive_level];
    Ok(FMeasureResult { curve, max, adaptive, empty_gt })
}

/// Enhanced-alignment measure: binarize the prediction at twice its mean,
/// center both maps, and average the enhanced alignment
/// θ = (φ+1)²/4 with φ = 2ab/(a²+b²). A ground truth that is entirely one
/// class degenerates to plain agreement 1 − mean|d − g|.
pub fn e_measure(s: &[f64], g: &[f64]) -> Result<f64> {
    check_same_len("e_measure", s, g)?;
    let n = s.len();
    let tau = (2.0 * mean(s)).clamp(0.0, 1.0);
    let d: Vec<f64> = s.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
    let fg = g.iter().filter(|&&v| is_fg(v)).count();
    if fg == 0 || fg == n {
        let disagreement: f64 = d
            .iter()
            .zip(g)
            .map(|(&dv, &gv)| (dv - if is_fg(gv) { 1.0 } else { 0.0 }).abs())
            .sum();
        return Ok(1.0 - disagreement / n as f64);
    }
    let mean_d = mean(&d);
    let mean_g = fg as f64 / n as f64;
    let mut acc = 0.0;
    for (&dv, &gv) in d.iter().zip(g) {
        let a = dv - mean_d;
        let b = if is_fg(gv) { 1.0 } else { 0.0 } - mean_g;
        let denom = a * a + b * b;
        let phi = if denom == 0.0 { 0.0 } else { 2.0 * a * b / denom };
        acc += (phi + 1.0) * (phi + 1.0) / 4.0;
    }
    Ok(acc / n as f64)
}

/// Similarity of one saliency distribution against a binary region:
/// 2x̄ / (x̄² + 1 + σ + ε), with the sample standard deviation.
fn object_score(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let x = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
}

/// Luminance/contrast/structure similarity of one region, with the
/// conventional degenerate handling (both moments zero → identical → 1).
fn region_ssim(sv: &[f64], gv: &[f64]) -> f64 {
    let n = sv.len() as f64;
    let x = sv.iter().sum::<f64>() / n;
    let y = gv.iter().sum::<f64>() / n;
    let denom = n - 1.0 + f64::EPSILON;
    let sx = sv.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom;
    let sy = gv.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom;
    let sxy = sv.iter().zip(gv).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: α·object-aware + (1−α)·region-aware similarity.
///
/// The object term compares foreground saliency (and inverted background
/// saliency) against ideal constants; the region term splits both maps at
/// the ground-truth centroid and averages per-quadrant SSIM weighted by
/// quadrant area. Degenerate ground truths collapse to 1 − mean(s) (all
/// background) or mean(s) (all foreground).
pub fn s_measure(s: &[f64], g: &[f64], h: usize, w: usize, alpha: f64) -> Result<f64> {
    check_same_len("s_measure", s, g)?;
    if h * w != s.len() {
        return Err(Error::Shape(format!(
            "s_measure: {h}×{w} does not match buffer of {} pixels",
            s.len()
        )));
    }
    let fg_count = g.iter().filter(|&&v| is_fg(v)).count();
    if fg_count == 0 {
        return Ok(1.0 - mean(s));
    }
    if fg_count == s.len() {
        return Ok(mean(s));
    }

    // Object-aware term over foreground and inverted background.
    let fg_vals: Vec<f64> = s.iter().zip(g).filter(|(_, &gv)| is_fg(gv)).map(|(&sv, _)| sv).collect();
    let bg_vals: Vec<f64> = s.iter().zip(g).filter(|(_, &gv)| !is_fg(gv)).map(|(&sv, _)| 1.0 - sv).collect();
    let mu = fg_count as f64 / s.len() as f64;
    let s_object = mu * object_score(&fg_vals) + (1.0 - mu) * object_score(&bg_vals);

    // Region-aware term: split at the rounded 1-based foreground centroid.
    let (mut sum_x, mut sum_y) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            if is_fg(g[y * w + x]) {
                sum_x += (x + 1) as f64;
                sum_y += (y + 1) as f64;
            }
        }
    }
    let cx = (sum_x / fg_count as f64).round() as usize;
    let cy = (sum_y / fg_count as f64).round() as usize;
    let total = (h * w) as f64;
    let mut s_region = 0.0;
    for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
        let area = (y1 - y0) * (x1 - x0);
        if area == 0 {
            continue;
        }
        let mut sq = Vec::with_capacity(area);
        let mut gq = Vec::with_capacity(area);
        for y in y0..y1 {
            for x in x0..x1 {
                sq.push(s[y * w + x]);
                gq.push(if is_fg(g[y * w + x]) { 1.0 } else { 0.0 });
            }
        }
        s_region += (area as f64 / total) * region_ssim(&sq, &gq);
    }

    Ok((alpha * s_object + (1.0 - alpha) * s_region).clamp(0.0, 1.0))
}

/// All metrics for one prediction/truth pair with the default settings.
pub fn evaluate_pair(s: &[f64], g: &[f64], h: usize, w: usize) -> Result<MetricReport> {
    let mae_v = mae(s, g)?;
    let fm = f_measure(s, g, DEFAULT_BETA2)?;
    let em = e_measure(s, g)?;
    let sm = s_measure(s, g, h, w, DEFAULT_ALPHA)?;
    Ok(MetricReport {
        mae: mae_v,
        fbeta_max: fm.max,
        fbeta_adaptive: fm.adaptive,
        fbeta_curve: fm.curve,
        emeasure: em,
        smeasure: sm,
        empty_gt: fm.empty_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
        (s, g)
    }

    #[test]
    fn mae_hand_cases() {
        let g = vec![0.0, 0.0, 1.0, 1.0];
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4]).unwrap(), 1.0);
        // Uniform 0.5 against half foreground: every pixel differs by 0.5.
        assert_eq!(mae(&[0.5; 4], &g).unwrap(), 0.5);
    }

    #[test]
    fn f_measure_perfect_prediction_peaks_at_one() {
        let g = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let r = f_measure(&g, &g, 0.3).unwrap();
        assert!((r.max - 1.0).abs() <= 1e-12);
        assert!(!r.empty_gt);
    }

    #[test]
    fn f_measure_complement_is_zero_beyond_the_all_positive_bin() {
        // At t = 0 every pixel is predicted positive (255·s ≥ 0), so the
        // curve start reflects plain foreground prevalence; at every other
        // threshold the complement has no true positives at all.
        let g = vec![1.0, 1.0, 0.0, 0.0];
        let s: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
        let r = f_measure(&s, &g, 0.3).unwrap();
        for t in 1..256 {
            assert_eq!(r.curve[t], 0.0, "threshold {t}");
        }
        let p = 0.5; // precision of the all-positive prediction
        let want = (1.3 * p * 1.0) / (0.3 * p + 1.0);
        assert!((r.curve[0] - want).abs() <= 1e-12);
        assert_eq!(r.max, r.curve[0]);
    }

    #[test]
    fn f_measure_three_by_three_plateau() {
        // Foreground scores {0.9, 0.8, 0.4}, background max 0.3: thresholds
        // in (0.3, 0.4] of the unit scale (levels 77..=102) isolate the
        // foreground exactly → precision = recall = 1.
        let s = vec![0.9, 0.8, 0.4, 0.3, 0.1, 0.0, 0.2, 0.05, 0.15];
        let g = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let r = f_measure(&s, &g, 0.3).unwrap();
        for t in 77..=102 {
            assert!((r.curve[t] - 1.0).abs() <= 1e-12, "level {t}: {}", r.curve[t]);
        }
        assert!((r.max - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn f_measure_matches_exhaustive_threshold_oracle() {
        // Literal oracle: re-binarize per threshold with the 255·s ≥ t rule
        // and count with a full pixel loop.
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..10 {
            let (s, g) = random_pair(64, &mut rng);
            let r = f_measure(&s, &g, 0.3).unwrap();
            let fg_total = g.iter().filter(|&&v| v > 0.5).count() as f64;
            let mut prev_pos = u64::MAX;
            for t in 0..256 {
                let mut pos = 0u64;
                let mut tp = 0u64;
                for (sv, gv) in s.iter().zip(&g) {
                    if sv * 255.0 >= t as f64 {
                        pos += 1;
                        if *gv > 0.5 {
                            tp += 1;
                        }
                    }
                }
                assert!(pos <= prev_pos, "positive count must not grow with the threshold");
                prev_pos = pos;
                let p = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
                let rec = tp as f64 / fg_total;
                let want = if 0.3 * p + rec == 0.0 { 0.0 } else { 1.3 * p * rec / (0.3 * p + rec) };
                assert!((r.curve[t] - want).abs() <= 1e-10, "t={t}: {} vs {want}", r.curve[t]);
            }
        }
    }

    #[test]
    fn f_measure_empty_ground_truth_flags_instead_of_crashing() {
        let r = f_measure(&[0.4, 0.9], &[0.0, 0.0], 0.3).unwrap();
        assert!(r.empty_gt);
        assert!(r.curve.iter().all(|&v| v == 0.0));
        assert_eq!(r.max, 0.0);
    }

    #[test]
    fn adaptive_never_exceeds_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let (s, g) = random_pair(48, &mut rng);
            let r = f_measure(&s, &g, 0.3).unwrap();
            assert!(r.adaptive <= r.max + 1e-15);
        }
    }

    #[test]
    fn e_measure_perfect_and_complement() {
        let g = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        assert!((e_measure(&g, &g).unwrap() - 1.0).abs() <= 1e-12);
        let s: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
        assert!(e_measure(&s, &g).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn e_measure_degenerate_ground_truths_use_agreement() {
        // All-background truth: score is the share of pixels the binarized
        // prediction also calls background.
        let s = vec![0.9, 0.9, 0.1, 0.1]; // mean 0.5 → τ = 1.0 → d = (s ≥ 1) = none
        assert_eq!(e_measure(&s, &[0.0; 4]).unwrap(), 1.0);
        let s2 = vec![1.0, 1.0, 0.0, 0.0]; // τ = 1 → d = (1,1,0,0)
        assert_eq!(e_measure(&s2, &[0.0; 4]).unwrap(), 0.5);
        assert_eq!(e_measure(&s2, &[1.0; 4]).unwrap(), 0.5);
    }

    #[test]
    fn e_measure_matches_literal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let (s, g) = random_pair(64, &mut rng);
            if g.iter().all(|&v| v < 0.5) || g.iter().all(|&v| v > 0.5) {
                continue;
            }
            // Literal re-derivation.
            let n = s.len() as f64;
            let tau = (2.0 * s.iter().sum::<f64>() / n).clamp(0.0, 1.0);
            let d: Vec<f64> = s.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
            let md = d.iter().sum::<f64>() / n;
            let mg = g.iter().sum::<f64>() / n;
            let mut acc = 0.0;
            for i in 0..s.len() {
                let a = d[i] - md;
                let b = g[i] - mg;
                let phi = if a * a + b * b == 0.0 { 0.0 } else { 2.0 * a * b / (a * a + b * b) };
                acc += (phi + 1.0) * (phi + 1.0) / 4.0;
            }
            let want = acc / n;
            assert!((e_measure(&s, &g).unwrap() - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn s_measure_perfect_binary_is_one() {
        let g = vec![
            0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        let v = s_measure(&g, &g, 4, 4, 0.5).unwrap();
        assert!((v - 1.0).abs() <= 1e-6, "got {v}");
    }

    #[test]
    fn s_measure_degenerate_ground_truths() {
        let s = vec![0.5; 16];
        assert!((s_measure(&s, &[0.0; 16], 4, 4, 0.5).unwrap() - 0.5).abs() <= 1e-12);
        assert!((s_measure(&s, &[1.0; 16], 4, 4, 0.5).unwrap() - 0.5).abs() <= 1e-12);
        let low = vec![0.2; 16];
        assert!((s_measure(&low, &[0.0; 16], 4, 4, 0.5).unwrap() - 0.8).abs() <= 1e-12);
    }

    #[test]
    fn s_measure_matches_literal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..10 {
            let (s, g) = random_pair(64, &mut rng);
            let (h, w) = (8usize, 8usize);
            let fg: Vec<usize> = (0..64).filter(|&i| g[i] > 0.5).collect();
            if fg.is_empty() || fg.len() == 64 {
                continue;
            }
            // Literal object term.
            let fgv: Vec<f64> = fg.iter().map(|&i| s[i]).collect();
            let bgv: Vec<f64> = (0..64).filter(|i| g[*i] <= 0.5).map(|i| 1.0 - s[i]).collect();
            let obj = |vals: &[f64]| {
                let n = vals.len() as f64;
                let x = vals.iter().sum::<f64>() / n;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                2.0 * x / (x * x + 1.0 + sd + f64::EPSILON)
            };
            let mu = fg.len() as f64 / 64.0;
            let so = mu * obj(&fgv) + (1.0 - mu) * obj(&bgv);
            // Literal region term.
            let cx = (fg.iter().map(|&i| (i % w + 1) as f64).sum::<f64>() / fg.len() as f64).round() as usize;
            let cy = (fg.iter().map(|&i| (i / w + 1) as f64).sum::<f64>() / fg.len() as f64).round() as usize;
            let mut sr = 0.0;
            for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
                let area = (y1 - y0) * (x1 - x0);
                if area == 0 {
                    continue;
                }
                let mut sv = Vec::new();
                let mut gv = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        sv.push(s[y * w + x]);
                        gv.push(if g[y * w + x] > 0.5 { 1.0 } else { 0.0 });
                    }
                }
                let n = sv.len() as f64;
                let xm = sv.iter().sum::<f64>() / n;
                let ym = gv.iter().sum::<f64>() / n;
                let dn = n - 1.0 + f64::EPSILON;
                let sx = sv.iter().map(|v| (v - xm) * (v - xm)).sum::<f64>() / dn;
                let sy = gv.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / dn;
                let sxy = sv.iter().zip(&gv).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / dn;
                let al = 4.0 * xm * ym * sxy;
                let be = (xm * xm + ym * ym) * (sx + sy);
                let q = if al != 0.0 {
                    al / (be + f64::EPSILON)
                } else if be == 0.0 {
                    1.0
                } else {
                    0.0
                };
                sr += (area as f64 / 64.0) * q;
            }
            let want = (0.5 * so + 0.5 * sr).clamp(0.0, 1.0);
            let got = s_measure(&s, &g, h, w, 0.5).unwrap();
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn self_evaluation_is_perfect_within_tolerance() {
        let mut g = vec![0.0; 256];
        for y in 4..10 {
            for x in 5..12 {
                g[y * 16 + x] = 1.0;
            }
        }
        let r = evaluate_pair(&g, &g, 16, 16).unwrap();
        assert!(r.mae <= 1e-6);
        assert!((r.fbeta_max - 1.0).abs() <= 1e-6);
        assert!((r.emeasure - 1.0).abs() <= 1e-6);
        assert!((r.smeasure - 1.0).abs() <= 1e-6);
    }

    proptest! {
        /// Applying one permutation to both maps cannot change MAE or the
        /// F curve at all.
        #[test]
        fn mae_and_f_curve_are_exactly_permutation_invariant(
            sv in prop::collection::vec(0.0f64..=1.0, 32),
            bits in prop::collection::vec(prop::bool::ANY, 32),
            seed in prop::num::u64::ANY,
        ) {
            let gv: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mut idx: Vec<usize> = (0..32).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let sp: Vec<f64> = idx.iter().map(|&i| sv[i]).collect();
            let gp: Vec<f64> = idx.iter().map(|&i| gv[i]).collect();
            prop_assert_eq!(mae(&sv, &gv).unwrap(), mae(&sp, &gp).unwrap());
            let a = f_measure(&sv, &gv, 0.3).unwrap();
            let b = f_measure(&sp, &gp, 0.3).unwrap();
            prop_assert_eq!(a.curve, b.curve);
        }

        /// MAE is exactly symmetric in its arguments.
        #[test]
        fn mae_is_exactly_symmetric(
            sv in prop::collection::vec(0.0f64..=1.0, 16),
            gv in prop::collection::vec(0.0f64..=1.0, 16),
        ) {
            prop_assert_eq!(mae(&sv, &gv).unwrap(), mae(&gv, &sv).unwrap());
        }

        /// Every reported value stays in [0,1] for arbitrary inputs.
        #[test]
        fn metric_ranges(
            sv in prop::collection::vec(0.0f64..=1.0, 16),
            bits in prop::collection::vec(prop::bool::ANY, 16),
        ) {
            let gv: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let r = evaluate_pair(&sv, &gv, 4, 4).unwrap();
            for v in [r.mae, r.fbeta_max, r.fbeta_adaptive, r.emeasure, r.smeasure] {
                prop_assert!((0.0..=1.0).contains(&v), "out of range: {v}");
            }
        }
    }
}
