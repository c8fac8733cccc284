//! Synthetic datasets and image I/O for the training/evaluation harness.
//!
//! The generator renders simple figure/ground scenes — one big shape, one
//! medium shape, one small shape, a thin bar, or several blobs — over a
//! textured background, so every area-proportion bin and each of the four
//! difficulty categories (big/small/narrow/multiple objects) is represented.
//! All randomness derives from one seed plus the image index, so a dataset is
//! bitwise reproducible.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// One loaded training pair at a fixed square size.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Channel-major RGB planes, 3·size·size values in [0,1].
    pub image: Vec<f64>,
    /// size·size values in {0.0, 1.0}.
    pub mask: Vec<f64>,
    pub size: usize,
    /// Foreground fraction of `mask`.
    pub proportion: f64,
}

/// Mean of a {0,1} mask: the exact foreground fraction.
pub fn mask_fraction(mask: &[f64]) -> f64 {
    let fg: f64 = mask.iter().sum();
    fg / mask.len() as f64
}

// ---------------------------------------------------------------------------
// Scene rendering
// ---------------------------------------------------------------------------

/// Smooth value noise in [0,1]: a coarse random grid, bilinearly upsampled.
struct ValueNoise {
    cell: usize,
    nodes_w: usize,
    nodes: Vec<f64>,
}

impl ValueNoise {
    fn new(size: usize, cell: usize, rng: &mut ChaCha8Rng) -> Self {
        let nodes_w = size / cell + 2;
        let nodes = (0..nodes_w * nodes_w).map(|_| rng.gen_range(0.0..1.0)).collect();
        ValueNoise { cell, nodes_w, nodes }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let fx = (x % self.cell) as f64 / self.cell as f64;
        let fy = (y % self.cell) as f64 / self.cell as f64;
        let n = |ix: usize, iy: usize| self.nodes[iy * self.nodes_w + ix];
        let top = n(gx, gy) * (1.0 - fx) + n(gx + 1, gy) * fx;
        let bot = n(gx, gy + 1) * (1.0 - fx) + n(gx + 1, gy + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

fn fill_rect(mask: &mut [bool], size: usize, cx: f64, cy: f64, hw: f64, hh: f64) {
    for y in 0..size {
        let py = y as f64 + 0.5;
        if (py - cy).abs() > hh {
            continue;
        }
        for x in 0..size {
            let px = x as f64 + 0.5;
            if (px - cx).abs() <= hw {
                mask[y * size + x] = true;
            }
        }
    }
}

fn fill_ellipse(mask: &mut [bool], size: usize, cx: f64, cy: f64, rx: f64, ry: f64) {
    for y in 0..size {
        let dy = (y as f64 + 0.5 - cy) / ry;
        if dy.abs() > 1.0 {
            continue;
        }
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / rx;
            if dx * dx + dy * dy <= 1.0 {
                mask[y * size + x] = true;
            }
        }
    }
}

/// Drop one rectangle or ellipse of roughly `area` (as a fraction of the
/// image) somewhere it fully fits.
fn place_shape(mask: &mut [bool], size: usize, area: f64, rng: &mut ChaCha8Rng) {
    let s = size as f64;
    let aspect = rng.gen_range(0.8..1.25);
    if rng.gen_bool(0.5) {
        let hw = (s * s * area * aspect).sqrt() / 2.0;
        let hh = (s * s * area / aspect).sqrt() / 2.0;
        let cx = rng.gen_range(hw..s - hw);
        let cy = rng.gen_range(hh..s - hh);
        fill_rect(mask, size, cx, cy, hw, hh);
    } else {
        let rx = (s * s * area * aspect / std::f64::consts::PI).sqrt();
        let ry = (s * s * area / (aspect * std::f64::consts::PI)).sqrt();
        let cx = rng.gen_range(rx..s - rx);
        let cy = rng.gen_range(ry..s - ry);
        fill_ellipse(mask, size, cx, cy, rx, ry);
    }
}

/// Scene categories, cycled by image index so small datasets still cover
/// every proportion bin.
fn render_mask(size: usize, category: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    let s = size as f64;
    match category {
        // One dominant shape: proportion lands in the large bin.
        0 => place_shape(&mut mask, size, rng.gen_range(0.52..0.64), rng),
        // Mid-sized shape.
        1 => place_shape(&mut mask, size, rng.gen_range(0.30..0.45), rng),
        // Small shape. The floor keeps targets off the sigmoid tail so the
        // proportion head can reach them within the toy step budget.
        2 => place_shape(&mut mask, size, rng.gen_range(0.12..0.22), rng),
        // Elongated bar, horizontal or vertical (aspect ratio 3.5-6.8).
        3 => {
            let thick = rng.gen_range(0.14..0.20) * s;
            let len = rng.gen_range(0.7..0.95) * s;
            let (hw, hh) = if rng.gen_bool(0.5) { (len / 2.0, thick / 2.0) } else { (thick / 2.0, len / 2.0) };
            let cx = rng.gen_range(hw..s - hw);
            let cy = rng.gen_range(hh..s - hh);
            fill_rect(&mut mask, size, cx, cy, hw, hh);
        }
        // Several small blobs.
        _ => {
            let n = rng.gen_range(4..=6);
            for _ in 0..n {
                place_shape(&mut mask, size, rng.gen_range(0.025..0.05), rng);
            }
        }
    }
    mask
}

/// Paint a scene: dark textured background, bright tinted foreground.
/// Returns interleaved RGB bytes.
fn render_image(size: usize, mask: &[bool], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let bg_noise = ValueNoise::new(size, 8, rng);
    let fg_noise = ValueNoise::new(size, 8, rng);
    let grad_x = rng.gen_range(-1.0..1.0);
    let grad_y = rng.gen_range(-1.0..1.0);
    let bg_base: [f64; 3] = [rng.gen_range(0.0..25.0), rng.gen_range(0.0..25.0), rng.gen_range(0.0..25.0)];
    let dominant = rng.gen_range(0..3usize);
    let mut fg_mul = [rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0)];
    fg_mul[dominant] = 1.0;

    let s = size as f64;
    let mut rgb = vec![0u8; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let px = &mut rgb[3 * i..3 * i + 3];
            if mask[i] {
                let v = 170.0 + 70.0 * fg_noise.at(x, y);
                for c in 0..3 {
                    px[c] = (v * fg_mul[c]).round().clamp(0.0, 255.0) as u8;
                }
            } else {
                let ramp = (grad_x * x as f64 / s + grad_y * y as f64 / s + 2.0) / 4.0;
                let mix = 0.6 * bg_noise.at(x, y) + 0.4 * ramp;
                for c in 0..3 {
                    px[c] = (5.0 + bg_base[c] + 55.0 * mix).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    rgb
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Render `count` image/mask pairs plus an `index.csv` of exact foreground
/// proportions into `out_dir`. Fully determined by `seed`; each image draws
/// from its own RNG stream so the set is stable under reordering.
pub fn generate_dataset(out_dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Argument(format!("dataset size must be a positive multiple of 32, got {size}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = String::from("name,proportion\n");
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mask = render_mask(size, i % 5, &mut rng);
        let rgb = render_image(size, &mask, &mut rng);
        let gray: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        let fg = mask.iter().filter(|&&m| m).count();
        let proportion = fg as f64 / (size * size) as f64;

        let image_name = format!("image_{i:04}.png");
        let image_path = out_dir.join(&image_name);
        image::save_buffer(&image_path, &rgb, size as u32, size as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Image { path: image_path.clone(), message: e.to_string() })?;
        let mask_path = out_dir.join(format!("mask_{i:04}.png"));
        image::save_buffer(&mask_path, &gray, size as u32, size as u32, image::ColorType::L8)
            .map_err(|e| Error::Image { path: mask_path.clone(), message: e.to_string() })?;
        index.push_str(&format!("{image_name},{proportion}\n"));
    }
    let index_path = out_dir.join("index.csv");
    std::fs::write(&index_path, index).map_err(|e| Error::io(index_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
    })
}

/// Load a grayscale image as values in [0,1] (byte / 255). Returns
/// (values, height, width).
pub fn load_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let vals = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok((vals, h, w))
}

/// Load an RGB image as channel-major planes in [0,1]. Returns
/// (planes, height, width).
pub fn load_rgb(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut planes = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            planes[c * h * w + i] = raw[3 * i + c] as f64 / 255.0;
        }
    }
    Ok((planes, h, w))
}

/// Load every `image_*.png`/`mask_*.png` pair in `dir`, in filename order.
/// Masks binarize at byte value > 127. All pairs must be square with edge
/// `expect_size`.
pub fn load_dataset(dir: &Path, expect_size: usize) -> Result<Vec<Sample>> {
    let mut names: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("image_") && name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort_unstable();
    if names.is_empty() {
        return Err(Error::State(format!("no image_*.png files found in {}", dir.display())));
    }

    let mut samples = Vec::with_capacity(names.len());
    for name in &names {
        let (image, h, w) = load_rgb(&dir.join(name))?;
        let mask_name = format!("mask_{}", &name["image_".len()..]);
        let (mask_raw, mh, mw) = load_gray(&dir.join(&mask_name))?;
        if h != expect_size || w != expect_size || mh != h || mw != w {
            return Err(Error::State(format!(
                "{name}: expected {expect_size}x{expect_size} image with matching mask, got image {h}x{w}, mask {mh}x{mw}"
            )));
        }
        let mask: Vec<f64> = mask_raw.iter().map(|&v| if v > 127.0 / 255.0 { 1.0 } else { 0.0 }).collect();
        let proportion = mask_fraction(&mask);
        samples.push(Sample { image, mask, size: expect_size, proportion });
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

fn hflip(plane: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = plane[y * size + (size - 1 - x)];
        }
    }
    out
}

fn vflip(plane: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..size {
        out[y * size..(y + 1) * size].copy_from_slice(&plane[(size - 1 - y) * size..(size - y) * size]);
    }
    out
}

/// Quarter-turn clockwise rotation of a square plane.
fn rot90cw(plane: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = plane[(size - 1 - x) * size + y];
        }
    }
    out
}

/// Crop a `crop`-sized window at (ox, oy) and resize back to `size` with
/// nearest-neighbor sampling.
fn crop_resize(plane: &[f64], size: usize, ox: usize, oy: usize, crop: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let sy = oy + y * crop / size;
        for x in 0..size {
            let sx = ox + x * crop / size;
            out[y * size + x] = plane[sy * size + sx];
        }
    }
    out
}

/// Apply one random flip/rotate/crop combination jointly to image and mask.
/// The proportion is recomputed from the transformed mask, so routing and
/// supervision stay consistent with what the model actually sees.
pub fn augment(sample: &Sample, rng: &mut ChaCha8Rng) -> Sample {
    let size = sample.size;
    let do_h = rng.gen_bool(0.5);
    let do_v = rng.gen_bool(0.5);
    let quarter_turns = rng.gen_range(0..4usize);
    let do_crop = rng.gen_bool(0.5);
    let (crop, ox, oy) = if do_crop {
        let crop = rng.gen_range(size * 6 / 10..=size);
        (crop, rng.gen_range(0..=size - crop), rng.gen_range(0..=size - crop))
    } else {
        (size, 0, 0)
    };

    let transform = |plane: &[f64]| -> Vec<f64> {
        let mut p = plane.to_vec();
        if do_h {
            p = hflip(&p, size);
        }
        if do_v {
            p = vflip(&p, size);
        }
        for _ in 0..quarter_turns {
            p = rot90cw(&p, size);
        }
        if crop < size {
            p = crop_resize(&p, size, ox, oy, crop);
        }
        p
    };

    let hw = size * size;
    let mut image = Vec::with_capacity(3 * hw);
    for c in 0..3 {
        image.extend_from_slice(&transform(&sample.image[c * hw..(c + 1) * hw]));
    }
    let mask = transform(&sample.mask);
    let proportion = mask_fraction(&mask);
    Sample { image, mask, size, proportion }
}
