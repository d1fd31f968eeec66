//! Training data: synthetic rain-streak pair generation over procedural
//! clean textures, loaders for external rainy/clean pair directories,
//! multi-scale ground-truth preparation, and augmentation.

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, uniform_in};
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// (3, H, W) with entries in [0,1].
pub type Image = Array3<f64>;

/// A full training sample with every field the losses consume. The residual
/// identity residual = clamp(rainy - clean, 0, 1) and the exact half/quarter
/// spatial relationships hold by construction.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub rainy: Image,
    pub clean: Image,
    pub residual: Image,
    pub residual_half: Image,
    pub residual_quarter: Image,
    pub rainy_half: Image,
}

impl TrainSample {
    /// Derive all fields from a rainy/clean pair. Spatial dims must be
    /// divisible by 4 so the half and quarter fields are exact.
    pub fn from_pair(rainy: Image, clean: Image) -> Result<TrainSample> {
        if rainy.dim() != clean.dim() {
            return Err(Error::shape(
                "train_sample",
                format!("rainy {:?} vs clean {:?}", rainy.dim(), clean.dim()),
            ));
        }
        let (_, h, w) = rainy.dim();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(
                "train_sample",
                format!("dims {h}x{w} must be divisible by 4 for the scale fields"),
            ));
        }
        let mut residual = &rainy - &clean;
        residual.mapv_inplace(|v| v.clamp(0.0, 1.0));
        let residual_half = downscale(&residual, 0.5)?;
        let residual_quarter = downscale(&residual, 0.25)?;
        let rainy_half = downscale(&rainy, 0.5)?;
        Ok(TrainSample { rainy, clean, residual, residual_half, residual_quarter, rainy_half })
    }
}

/// Streak layer parameters. All ranges are inclusive (lo, hi) pairs sampled
/// uniformly; a degenerate range pins the value.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RainParams {
    pub streak_count: usize,
    pub length_px: (f64, f64),
    pub angle_deg: (f64, f64),
    pub width_px: (f64, f64),
    pub intensity: (f64, f64),
    pub seed: u64,
}

impl Default for RainParams {
    /// Tuned for 64x64 desk-scale images: visible rain with the residual
    /// still sparse (well over 70% of entries near zero).
    fn default() -> Self {
        RainParams {
            streak_count: 18,
            length_px: (8.0, 20.0),
            angle_deg: (-30.0, 30.0),
            width_px: (0.4, 0.8),
            intensity: (0.15, 0.45),
            seed: 0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("length_px", self.length_px),
            ("angle_deg", self.angle_deg),
            ("width_px", self.width_px),
            ("intensity", self.intensity),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) {
                return Err(Error::Config(format!("rain {name} range ({lo}, {hi}) is empty")));
            }
        }
        let (ilo, ihi) = self.intensity;
        if ilo <= 0.0 || ihi > 1.0 {
            return Err(Error::Config(format!(
                "rain intensity range ({ilo}, {ihi}) must sit inside (0, 1]"
            )));
        }
        if self.length_px.0 <= 0.0 || self.width_px.0 <= 0.0 {
            return Err(Error::Config("rain length and width must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> RainParams {
        RainParams { seed, ..*self }
    }
}

/// Distance from a point to a segment.
fn segment_distance(py: f64, px: f64, y0: f64, x0: f64, y1: f64, x1: f64) -> f64 {
    let (dy, dx) = (y1 - y0, x1 - x0);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((py - y0) * dy + (px - x0) * dx) / len2).clamp(0.0, 1.0)
    };
    let (cy, cx) = (y0 + t * dy, x0 + t * dx);
    ((py - cy).powi(2) + (px - cx).powi(2)).sqrt()
}

/// Render oriented streaks with a Gaussian cross-profile and alpha-over
/// compositing (1 - product of per-streak transparencies), then build the
/// sample. Deterministic in the seed; compositing is order-independent.
pub fn synthesize_rain(clean: &Image, p: &RainParams) -> Result<TrainSample> {
    p.validate()?;
    let (_, h, w) = clean.dim();
    let mut rng = seeded_rng(p.seed);
    let mut transmission = Array2::<f64>::ones((h, w));

    for _ in 0..p.streak_count {
        let cy = uniform_in(&mut rng, 0.0, h as f64);
        let cx = uniform_in(&mut rng, 0.0, w as f64);
        let angle = uniform_in(&mut rng, p.angle_deg.0, p.angle_deg.1).to_radians();
        let len = uniform_in(&mut rng, p.length_px.0, p.length_px.1);
        let sigma = uniform_in(&mut rng, p.width_px.0, p.width_px.1);
        let c = uniform_in(&mut rng, p.intensity.0, p.intensity.1);

        // Angle 0 falls straight down; positive angles tilt toward +x.
        let (dy, dx) = (angle.cos(), angle.sin());
        let (y0, x0) = (cy - dy * len / 2.0, cx - dx * len / 2.0);
        let (y1, x1) = (cy + dy * len / 2.0, cx + dx * len / 2.0);

        let margin = 3.0 * sigma + 1.0;
        let ymin = (y0.min(y1) - margin).floor().max(0.0) as usize;
        let ymax = ((y0.max(y1) + margin).ceil() as usize).min(h.saturating_sub(1));
        let xmin = (x0.min(x1) - margin).floor().max(0.0) as usize;
        let xmax = ((x0.max(x1) + margin).ceil() as usize).min(w.saturating_sub(1));

        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let d = segment_distance(y as f64, x as f64, y0, x0, y1, x1);
                let v = c * (-d * d / (2.0 * sigma * sigma)).exp();
                transmission[(y, x)] *= 1.0 - v;
            }
        }
    }

    let mut rainy = clean.clone();
    for ch in 0..3 {
        let mut plane = rainy.index_axis_mut(Axis(0), ch);
        for ((y, x), t) in transmission.indexed_iter() {
            plane[(y, x)] = (plane[(y, x)] + (1.0 - t)).clamp(0.0, 1.0);
        }
    }
    TrainSample::from_pair(rainy, clean.clone())
}

/// Area-average downscale by factor 0.5 or 0.25. The quarter factor is two
/// successive half downscales, so the composition identity
/// downscale(x, 0.25) == downscale(downscale(x, 0.5), 0.5) holds bitwise.
pub fn downscale(img: &Image, factor: f64) -> Result<Image> {
    if factor == 0.25 {
        return downscale(&downscale(img, 0.5)?, 0.5);
    }
    if factor != 0.5 {
        return Err(Error::invalid("downscale", format!("factor must be 0.5 or 0.25, got {factor}")));
    }
    let (c, h, w) = img.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("downscale", format!("dims {h}x{w} not divisible by 2")));
    }
    let mut out = Array3::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                out[(ch, y, x)] = (img[(ch, 2 * y, 2 * x)]
                    + img[(ch, 2 * y, 2 * x + 1)]
                    + img[(ch, 2 * y + 1, 2 * x)]
                    + img[(ch, 2 * y + 1, 2 * x + 1)])
                    / 4.0;
            }
        }
    }
    Ok(out)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch, y, x)] = img[(ch, y, w - 1 - x)];
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers (the common convention without
/// corner alignment).
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (c, h, w) = img.dim();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Array3::zeros((c, out_h, out_w));
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = img[(ch, y0, x0)] * (1.0 - fx) + img[(ch, y0, x1)] * fx;
                let bot = img[(ch, y1, x0)] * (1.0 - fx) + img[(ch, y1, x1)] * fx;
                out[(ch, y, x)] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Flip (decided by the forced flag) and resize rainy and clean, then
/// rebuild the sample so the residual identity and the scale fields stay
/// exact. Resizing the residual directly would break the identity.
pub fn augment_forced(sample: &TrainSample, flip: bool, target: usize) -> Result<TrainSample> {
    let (mut rainy, mut clean) = (sample.rainy.clone(), sample.clean.clone());
    if flip {
        rainy = flip_horizontal(&rainy);
        clean = flip_horizontal(&clean);
    }
    if rainy.dim().1 != target || rainy.dim().2 != target {
        rainy = resize_bilinear(&rainy, target, target);
        clean = resize_bilinear(&clean, target, target);
    }
    TrainSample::from_pair(rainy, clean)
}

/// Horizontal flip with probability 0.5, then resize to the training size.
pub fn augment(sample: &TrainSample, seed: u64, target: usize) -> Result<TrainSample> {
    let mut rng = seeded_rng(seed);
    augment_forced(sample, rng.gen_bool(0.5), target)
}

fn smooth_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize, amp: f64) -> Array2<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen_range(-amp..amp));
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f64 / cell as f64;
        let fx = x as f64 / cell as f64;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = grid[(y0, x0)] * (1.0 - tx) + grid[(y0, x0 + 1)] * tx;
        let bot = grid[(y0 + 1, x0)] * (1.0 - tx) + grid[(y0 + 1, x0 + 1)] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Procedural clean image: color gradient base, smoothed noise octaves, and
/// a few soft shapes. Keeps the repo self-contained at desk scale.
pub fn clean_texture(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    let c0: [f64; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    let c1: [f64; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    let (gy, gx) = (rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0f64));
    let norm = (gy.abs() + gx.abs()).max(1e-6);

    let octaves: Vec<Array2<f64>> = [(4usize, 0.08), (8, 0.12), (16, 0.16)]
        .iter()
        .map(|&(cell, amp)| smooth_noise(rng, h, w, cell, amp))
        .collect();

    let mut img = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 + 0.5 * (gy * (y as f64 / h as f64 - 0.5) + gx * (x as f64 / w as f64 - 0.5)) / norm;
            let noise: f64 = octaves.iter().map(|o| o[(y, x)]).sum();
            for ch in 0..3 {
                img[(ch, y, x)] = c0[ch] + (c1[ch] - c0[ch]) * t + noise;
            }
        }
    }

    for _ in 0..rng.gen_range(2..5usize) {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let r = rng.gen_range(h as f64 * 0.1..h as f64 * 0.35);
        let shade: [f64; 3] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                if d < r {
                    let soft = 1.0 - (d / r).powi(2);
                    for ch in 0..3 {
                        img[(ch, y, x)] += shade[ch] * soft;
                    }
                }
            }
        }
    }

    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// A self-contained synthetic dataset: procedural textures with rain, named
/// sample_000, sample_001, ...
pub fn synthetic_dataset(count: usize, size: usize, params: &RainParams, seed: u64) -> Result<Vec<(String, TrainSample)>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = seeded_rng(seed.wrapping_add(i as u64).wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed));
        let clean = clean_texture(size, size, &mut rng);
        let sample = synthesize_rain(&clean, &params.with_seed(seed.wrapping_add(1000 + i as u64)))?;
        out.push((format!("sample_{i:03}"), sample));
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[(ch, y as usize, x as usize)] = px.0[ch] as f64 / 255.0;
        }
    }
    Ok(out)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let (_, h, w) = img.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            px.0[ch] = (img[(ch, y as usize, x as usize)] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    buf.save(path)?;
    Ok(())
}

/// Write one sample as a fixture directory of rainy.png / clean.png /
/// residual.png.
pub fn write_sample_dir(sample: &TrainSample, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_png(&sample.rainy, &dir.join("rainy.png"))?;
    write_png(&sample.clean, &dir.join("clean.png"))?;
    write_png(&sample.residual, &dir.join("residual.png"))?;
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        let lower = name.to_lowercase();
        if lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Load matched rainy/clean pairs by identical filename, sorted. Undecodable
/// files are skipped with a warning (more than 10% skipped is an error); a
/// decodable pair with mismatching dimensions is rejected outright with both
/// shapes reported. Images are cropped to dims divisible by 4 so the scale
/// fields stay exact.
pub fn load_pairs(dir_rainy: &Path, dir_clean: &Path) -> Result<Vec<(String, TrainSample)>> {
    let rainy_names = image_files(dir_rainy)?;
    let clean_names = image_files(dir_clean)?;

    let missing_clean: Vec<_> = rainy_names.iter().filter(|n| !clean_names.contains(n)).collect();
    let missing_rainy: Vec<_> = clean_names.iter().filter(|n| !rainy_names.contains(n)).collect();
    if !missing_clean.is_empty() || !missing_rainy.is_empty() {
        return Err(Error::invalid(
            "load_pairs",
            format!("unmatched files; missing clean: {missing_clean:?}, missing rainy: {missing_rainy:?}"),
        ));
    }

    let mut out = Vec::new();
    let mut skipped = 0usize;
    for name in &rainy_names {
        let rainy = match read_png(&dir_rainy.join(name)) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("warning: skipping undecodable {name}: {e}");
                skipped += 1;
                continue;
            }
        };
        let clean = match read_png(&dir_clean.join(name)) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("warning: skipping undecodable {name}: {e}");
                skipped += 1;
                continue;
            }
        };
        if rainy.dim() != clean.dim() {
            return Err(Error::shape(
                "load_pairs",
                format!("pair {name}: rainy {:?} vs clean {:?}", rainy.dim(), clean.dim()),
            ));
        }
        let (_, h, w) = rainy.dim();
        let (ch, cw) = (h - h % 4, w - w % 4);
        if ch == 0 || cw == 0 {
            return Err(Error::invalid("load_pairs", format!("pair {name}: {h}x{w} too small")));
        }
        let crop = |img: &Image| img.slice(ndarray::s![.., 0..ch, 0..cw]).to_owned();
        out.push((name.clone(), TrainSample::from_pair(crop(&rainy), crop(&clean))?));
    }

    let total = rainy_names.len();
    if total > 0 && skipped * 10 > total {
        return Err(Error::invalid(
            "load_pairs",
            format!("{skipped} of {total} pairs undecodable (over 10%)"),
        ));
    }
    Ok(out)
}

/// Mirror-pad (reflection without edge repetition) the bottom and right to
/// the next multiple of `m`. Works for any pad size via index folding.
pub fn pad_to_multiple_reflect(img: &Image, m: usize) -> Image {
    let (c, h, w) = img.dim();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if ph == h && pw == w {
        return img.clone();
    }
    let mirror = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let j = i % period;
        if j < n {
            j
        } else {
            period - j
        }
    };
    Array3::from_shape_fn((c, ph, pw), |(ch, y, x)| img[(ch, mirror(y, h), mirror(x, w))])
}
