//! Tiled inference: non-overlapping tiles, instance ids offset per tile.

use hseg_core::clustering::{extract_instances, ExtractConfig};
use hseg_core::guides::GuideSet;
use hseg_core::network::{infer, SinUNet};
use hseg_core::{Image, LabelMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    /// Confidence of instance `k` at index `k - 1`.
    pub scores: Vec<f64>,
}

/// Segments `image` tile by tile. Tiles reaching past the border are
/// zero-padded; padded pixels are never foreground. When `fg_mask` is given
/// it replaces the predicted foreground.
pub fn segment(
    image: &Image,
    model: &SinUNet<f32>,
    guides: Option<&GuideSet>,
    tile: (usize, usize),
    fg_threshold: f32,
    fg_mask: Option<&LabelMap>,
    extract: &ExtractConfig,
) -> Result<Segmentation> {
    let (w, h) = (image.width(), image.height());
    let (tw, th) = tile;
    let m = 1usize << model.config().depth;
    if tw == 0 || th == 0 || tw % m != 0 || th % m != 0 {
        return Err(Error::Usage(format!("tile {tw}x{th} must be a positive multiple of {m}")));
    }
    if let Some(mask) = fg_mask {
        if (mask.width(), mask.height()) != (w, h) {
            return Err(Error::Data("foreground mask frame differs from the image".into()));
        }
    }
    let mut labels = LabelMap::new(w, h);
    let mut scores = Vec::new();
    for y0 in (0..h).step_by(th) {
        for x0 in (0..w).step_by(tw) {
            let crop = image.crop(x0 as isize, y0 as isize, tw, th);
            let out = infer(&crop, model, guides)?;
            let mut fg = vec![false; tw * th];
            for ty in 0..th.min(h - y0) {
                for tx in 0..tw.min(w - x0) {
                    let i = ty * tw + tx;
                    fg[i] = match fg_mask {
                        Some(mask) => mask.get(x0 + tx, y0 + ty) != 0,
                        None => out.fg_prob[i] > fg_threshold,
                    };
                }
            }
            let r = extract_instances(&out.embedding, tw, th, &fg, extract)?;
            let offset = scores.len() as u32;
            for ty in 0..th.min(h - y0) {
                for tx in 0..tw.min(w - x0) {
                    let id = r.labels.get(tx, ty);
                    if id != 0 {
                        labels.set(x0 + tx, y0 + ty, id + offset);
                    }
                }
            }
            scores.extend_from_slice(&r.scores);
        }
    }
    Ok(Segmentation { labels, scores })
}
