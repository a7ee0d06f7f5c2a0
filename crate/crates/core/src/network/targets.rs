use alloc::vec;
use alloc::vec::Vec;

use super::super::autodiff::{Real, Tensor};
use crate::guides::{guided_embedding, GuideSet, PixelSet};
use crate::label::LabelMap;

/// Guide values sampled on an `h`×`w` grid whose cells are `delta` input
/// pixels apart, in the coordinate frame `tile = (W, H)`:
/// channel `i` at `(x, y)` is `f_i(x·delta, y·delta)`.
pub fn guide_maps<T: Real>(guides: &GuideSet, layer: (usize, usize), delta: usize, tile: (usize, usize)) -> Tensor<T> {
    let (h, w) = layer;
    let (tw, th) = (tile.0 as f64, tile.1 as f64);
    let mut data = Vec::with_capacity(guides.n() * h * w);
    for g in guides.params() {
        for y in 0..h {
            let v = (y * delta) as f64 / th;
            for x in 0..w {
                let u = (x * delta) as f64 / tw;
                data.push(T::from_f64(num_traits::Float::sin(g.freq_x * u + g.freq_y * v + g.phase)));
            }
        }
    }
    Tensor::from_vec(&[guides.n(), h, w], data).expect("sized above")
}

/// CoordConv inputs `{x·Δ/W, y·Δ/H}` on an `h`×`w` grid.
pub fn coord_maps<T: Real>(layer: (usize, usize), delta: usize, tile: (usize, usize)) -> Tensor<T> {
    let (h, w) = layer;
    let mut data = vec![T::zero(); 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = T::from_f64((x * delta) as f64 / tile.0 as f64);
            data[h * w + y * w + x] = T::from_f64((y * delta) as f64 / tile.1 as f64);
        }
    }
    Tensor::from_vec(&[2, h, w], data).expect("sized above")
}

/// Regression target for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    pub width: usize,
    pub height: usize,
    /// `[N, H, W]`; zeros on background.
    pub embedding: Vec<f64>,
    pub fg: Vec<bool>,
}

impl TargetField {
    pub fn n(&self) -> usize {
        self.embedding.len() / (self.width * self.height).max(1)
    }

    pub fn has_foreground(&self) -> bool {
        self.fg.iter().any(|&f| f)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.n(), self.height, self.width],
            self.embedding.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("sized at construction")
    }

    /// N-vector at pixel `(x, y)`.
    pub fn vector(&self, x: usize, y: usize) -> Vec<f64> {
        let hw = self.width * self.height;
        (0..self.n())
            .map(|c| self.embedding[c * hw + y * self.width + x])
            .collect()
    }
}

/// Every pixel of an instance receives the guided embedding of the
/// instance's pixels visible in this label map (the tile is the frame).
pub fn build_targets(label: &LabelMap, guides: &GuideSet) -> TargetField {
    let (w, h) = (label.width(), label.height());
    let n = guides.n();
    let mut embedding = vec![0.0; n * w * h];
    for (_, pixels) in label.instances() {
        let set = PixelSet::new(pixels, w, h).expect("instance pixels are non-empty and in frame");
        let e = guided_embedding(&set, guides);
        for &(x, y) in set.pixels() {
            for (c, &v) in e.values.iter().enumerate() {
                embedding[c * w * h + y * w + x] = v;
            }
        }
    }
    TargetField {
        width: w,
        height: h,
        embedding,
        fg: label.foreground(),
    }
}
