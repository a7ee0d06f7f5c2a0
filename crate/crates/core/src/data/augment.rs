#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::label::{Image, LabelMap};

/// Random augmentation ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Output `(W, H)`; `None` keeps the (scaled) frame.
    pub crop: Option<(usize, usize)>,
    /// Isotropic scale factor range.
    pub scale: (f64, f64),
    /// Left-right flip with probability 1/2.
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: None,
            scale: (0.8, 1.25),
            flip: true,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            crop: None,
            scale: (1.0, 1.0),
            flip: false,
        }
    }

    /// Draws concrete operations for a `(w, h)` input.
    pub fn draw(&self, frame: (usize, usize), rng: &mut impl Rng) -> AugmentOps {
        let scale = if self.scale.0 < self.scale.1 {
            rng.gen_range(self.scale.0..=self.scale.1)
        } else {
            self.scale.0
        };
        let flip = self.flip && rng.gen_bool(0.5);
        let crop = self.crop.map(|(cw, ch)| {
            let (sw, sh) = scaled_size(frame, scale);
            let off = |src: usize, dst: usize, rng: &mut dyn rand::RngCore| -> isize {
                let (lo, hi) = if src >= dst {
                    (0, (src - dst) as isize)
                } else {
                    (src as isize - dst as isize, 0)
                };
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..=hi)
                }
            };
            let x0 = off(sw, cw, rng);
            let y0 = off(sh, ch, rng);
            (x0, y0, cw, ch)
        });
        AugmentOps { scale, flip, crop }
    }
}

/// Concrete augmentation applied in the order scale, flip, crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOps {
    pub scale: f64,
    pub flip: bool,
    /// `(x0, y0, w, h)` in the scaled frame; negative offsets pad.
    pub crop: Option<(isize, isize, usize, usize)>,
}

impl AugmentOps {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            flip: false,
            crop: None,
        }
    }
}

fn scaled_size(frame: (usize, usize), scale: f64) -> (usize, usize) {
    let w = ((frame.0 as f64 * scale).round() as usize).max(1);
    let h = ((frame.1 as f64 * scale).round() as usize).max(1);
    (w, h)
}

/// Draws operations from `seed` and applies them.
pub fn augment(sample: &Sample, config: &AugmentConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = config.draw((sample.label.width(), sample.label.height()), &mut rng);
    apply_augment(sample, &ops)
}

/// Labels are resampled nearest-neighbour (ids are never mixed); images
/// bilinearly.
pub fn apply_augment(sample: &Sample, ops: &AugmentOps) -> Sample {
    let mut image = sample.image.clone();
    let mut label = sample.label.clone();
    if ops.scale != 1.0 {
        let size = scaled_size((label.width(), label.height()), ops.scale);
        label = resize_nearest(&label, size);
        image = resize_bilinear(&image, size);
    }
    if ops.flip {
        label = flip_labels(&label);
        image = flip_image(&image);
    }
    if let Some((x0, y0, w, h)) = ops.crop {
        label = label.crop(x0, y0, w, h);
        image = image.crop(x0, y0, w, h);
    }
    Sample { image, label }
}

fn resize_nearest(src: &LabelMap, (w, h): (usize, usize)) -> LabelMap {
    let sx = src.width() as f64 / w as f64;
    let sy = src.height() as f64 / h as f64;
    let mut out = LabelMap::new(w, h);
    for y in 0..h {
        let yy = (((y as f64 + 0.5) * sy) as usize).min(src.height() - 1);
        for x in 0..w {
            let xx = (((x as f64 + 0.5) * sx) as usize).min(src.width() - 1);
            out.set(x, y, src.get(xx, yy));
        }
    }
    out
}

fn resize_bilinear(src: &Image, (w, h): (usize, usize)) -> Image {
    let sx = src.width() as f64 / w as f64;
    let sy = src.height() as f64 / h as f64;
    let mut out = Image::new(w, h, src.channels());
    let clampf = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    for y in 0..h {
        let fy = clampf((y as f64 + 0.5) * sy - 0.5, src.height());
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height() - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..w {
            let fx = clampf((x as f64 + 0.5) * sx - 0.5, src.width());
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width() - 1);
            let tx = (fx - x0 as f64) as f32;
            for c in 0..src.channels() {
                let top = src.get(c, x0, y0) * (1.0 - tx) + src.get(c, x1, y0) * tx;
                let bot = src.get(c, x0, y1) * (1.0 - tx) + src.get(c, x1, y1) * tx;
                out.set(c, x, y, top * (1.0 - ty) + bot * ty);
            }
        }
    }
    out
}

fn flip_labels(src: &LabelMap) -> LabelMap {
    let w = src.width();
    let mut out = src.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

fn flip_image(src: &Image) -> Image {
    let w = src.width();
    let mut out = src.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}
