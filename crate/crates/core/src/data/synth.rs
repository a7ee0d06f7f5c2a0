use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, Sample};
use crate::error::{config_err, Error, Result};
use crate::label::{Image, LabelMap};

/// Object family to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Filled ellipses; `size` is the semi-axis range.
    Blobs,
    /// Capsules; `size` is the length range.
    Rods,
    /// Smooth open curves through 3–5 control points; `size` is the length.
    Worms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub images: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive instance-count range per image.
    pub count: (usize, usize),
    pub size: (f64, f64),
    /// Stroke width range for rods and worms.
    pub thickness: (f64, f64),
    /// Fraction of an instance's pixels allowed to fall on earlier ones.
    pub overlap: f64,
    /// Minimum background gap between instances when `overlap == 0`.
    pub gap: usize,
    pub background: f32,
    pub intensity: (f32, f32),
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::Blobs,
            images: 200,
            width: 128,
            height: 128,
            count: (5, 12),
            size: (6.0, 14.0),
            thickness: (3.0, 5.0),
            overlap: 0.0,
            gap: 1,
            background: 0.1,
            intensity: (0.45, 1.0),
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Defaults per kind: blobs ≈ HeLa/CVPPP, rods ≈ E. coli, worms ≈ C. elegans.
    pub fn preset(kind: SynthKind) -> Self {
        let base = Self::default();
        match kind {
            SynthKind::Blobs => base,
            SynthKind::Rods => Self {
                kind,
                count: (15, 25),
                size: (10.0, 22.0),
                thickness: (3.0, 5.0),
                ..base
            },
            SynthKind::Worms => Self {
                kind,
                count: (4, 8),
                size: (40.0, 80.0),
                thickness: (3.0, 5.0),
                overlap: 0.3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(config_err!("image size must be positive"));
        }
        if self.count.0 > self.count.1 {
            return Err(config_err!("empty count range {:?}", self.count));
        }
        if !(self.size.0 > 0.0 && self.size.0 <= self.size.1) {
            return Err(config_err!("size range {:?} must be positive and ordered", self.size));
        }
        if !(self.thickness.0 > 0.0 && self.thickness.0 <= self.thickness.1) {
            return Err(config_err!("thickness range {:?} must be positive and ordered", self.thickness));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(config_err!("overlap allowance must lie in [0, 1]"));
        }
        if !(self.intensity.0 <= self.intensity.1) || self.noise_std < 0.0 {
            return Err(config_err!("invalid intensity/noise parameters"));
        }
        if self.count.1 > u16::MAX as usize {
            return Err(config_err!("at most 65535 instances per image"));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 400;
const IMAGE_RESTARTS: usize = 50;

/// Generates `config.images` samples; image `i` depends only on
/// `(config, i)`.
pub fn synth(config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.images).map(|i| synth_one(config, i)).collect()
}

pub fn synth_one(config: &SynthConfig, index: usize) -> Result<Sample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index as u64));
    for _ in 0..IMAGE_RESTARTS {
        if let Some(sample) = try_image(config, &mut rng) {
            return Ok(sample);
        }
    }
    Err(Error::Unsatisfiable(format!(
        "could not place the requested instances in image {index}; \
         lower the count or size ranges"
    )))
}

fn try_image(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<Sample> {
    let (w, h) = (cfg.width, cfg.height);
    let count = rng.gen_range(cfg.count.0..=cfg.count.1);
    let mut label = LabelMap::new(w, h);
    let mut intensities = Vec::with_capacity(count);
    for id in 1..=count as u32 {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let pixels = draw_shape(cfg, rng);
            if pixels.is_empty() {
                continue;
            }
            if !fits(&label, &pixels, cfg) {
                continue;
            }
            for &(x, y) in &pixels {
                if label.get(x, y) == 0 {
                    label.set(x, y, id);
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
        intensities.push(rng.gen_range(cfg.intensity.0..=cfg.intensity.1));
    }

    let noise = Normal::new(0.0f32, cfg.noise_std).ok()?;
    let mut image = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let id = label.get(x, y);
            let base = if id == 0 {
                cfg.background
            } else {
                intensities[id as usize - 1]
            };
            let v = (base + noise.sample(rng)).clamp(0.0, 1.0);
            // quantized so the in-memory sample equals its 8-bit PNG
            image.set(0, x, y, (v * 255.0).round() / 255.0);
        }
    }
    Some(Sample { image, label })
}

fn fits(label: &LabelMap, pixels: &[(usize, usize)], cfg: &SynthConfig) -> bool {
    let (w, h) = (label.width(), label.height());
    if cfg.overlap <= 0.0 {
        let g = cfg.gap as isize;
        return pixels.iter().all(|&(x, y)| {
            for dy in -g..=g {
                for dx in -g..=g {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && label.get(nx as usize, ny as usize) != 0 {
                        return false;
                    }
                }
            }
            true
        });
    }
    let taken = pixels.iter().filter(|&&(x, y)| label.get(x, y) != 0).count();
    let free = pixels.len() - taken;
    free > 0 && taken as f64 <= cfg.overlap * pixels.len() as f64
}

/// Rasterizes one random shape fully inside the frame; empty if the drawn
/// shape does not fit.
fn draw_shape(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    match cfg.kind {
        SynthKind::Blobs => {
            let a = rng.gen_range(cfg.size.0..=cfg.size.1);
            let b = rng.gen_range(cfg.size.0..=cfg.size.1);
            let theta = rng.gen_range(0.0..PI);
            let r = a.max(b);
            if 2.0 * r + 2.0 > w.min(h) {
                return Vec::new();
            }
            let cx = rng.gen_range(r + 1.0..w - r - 1.0);
            let cy = rng.gen_range(r + 1.0..h - r - 1.0);
            let (s, c) = theta.sin_cos();
            rasterize(cfg, (cx - r, cy - r, cx + r, cy + r), |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
        }
        SynthKind::Rods => {
            let len = rng.gen_range(cfg.size.0..=cfg.size.1);
            let t = rng.gen_range(cfg.thickness.0..=cfg.thickness.1);
            let theta = rng.gen_range(0.0..PI);
            let half = len / 2.0 + t / 2.0;
            if 2.0 * half + 2.0 > w.min(h) {
                return Vec::new();
            }
            let cx = rng.gen_range(half + 1.0..w - half - 1.0);
            let cy = rng.gen_range(half + 1.0..h - half - 1.0);
            let (s, c) = theta.sin_cos();
            let p0 = (cx - c * len / 2.0, cy - s * len / 2.0);
            let p1 = (cx + c * len / 2.0, cy + s * len / 2.0);
            rasterize(cfg, (cx - half, cy - half, cx + half, cy + half), |x, y| {
                seg_dist2((x, y), p0, p1) <= (t / 2.0).powi(2)
            })
        }
        SynthKind::Worms => {
            let len = rng.gen_range(cfg.size.0..=cfg.size.1);
            let t = rng.gen_range(cfg.thickness.0..=cfg.thickness.1);
            let k = rng.gen_range(3..=5usize);
            let step = len / (k - 1) as f64;
            let mut heading = rng.gen_range(0.0..TAU);
            let mut ctrl = vec![(0.0f64, 0.0f64)];
            for _ in 1..k {
                heading += rng.gen_range(-PI / 3.0..PI / 3.0);
                let &(px, py) = ctrl.last().expect("non-empty");
                ctrl.push((px + step * heading.cos(), py + step * heading.sin()));
            }
            let poly = catmull_rom(&ctrl, 8);
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for &(x, y) in &poly {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let pad = t / 2.0 + 1.0;
            let (bw, bh) = (x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
            if bw >= w || bh >= h {
                return Vec::new();
            }
            let ox = rng.gen_range(0.0..w - bw) + pad - x0;
            let oy = rng.gen_range(0.0..h - bh) + pad - y0;
            let poly: Vec<(f64, f64)> = poly.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
            let r2 = (t / 2.0).powi(2);
            rasterize(
                cfg,
                (x0 + ox - pad, y0 + oy - pad, x1 + ox + pad, y1 + oy + pad),
                |x, y| poly.windows(2).any(|s| seg_dist2((x, y), s[0], s[1]) <= r2),
            )
        }
    }
}

/// Pixels whose centres satisfy `inside`, scanning the clamped bounding box.
fn rasterize(
    cfg: &SynthConfig,
    bbox: (f64, f64, f64, f64),
    inside: impl Fn(f64, f64) -> bool,
) -> Vec<(usize, usize)> {
    let x0 = bbox.0.floor().max(0.0) as usize;
    let y0 = bbox.1.floor().max(0.0) as usize;
    let x1 = (bbox.2.ceil() as usize).min(cfg.width - 1);
    let y1 = (bbox.3.ceil() as usize).min(cfg.height - 1);
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                out.push((x, y));
            }
        }
    }
    out
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

/// Uniform Catmull-Rom spline through `pts` (end points duplicated),
/// `per_seg` samples per segment.
fn catmull_rom(pts: &[(f64, f64)], per_seg: usize) -> Vec<(f64, f64)> {
    let n = pts.len();
    let at = |i: isize| pts[i.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity((n - 1) * per_seg + 1);
    for i in 0..n - 1 {
        let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
        for s in 0..per_seg {
            let t = s as f64 / per_seg as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out.push(pts[n - 1]);
    out
}
