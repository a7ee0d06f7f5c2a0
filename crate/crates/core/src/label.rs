//! Instance label rasters and intensity images.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// H×W raster of instance ids, row-major. Id 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(domain!(
                "label data has {} entries, frame {}x{} needs {}",
                data.len(),
                width,
                height,
                width * height
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.data[y * self.width + x] = id;
    }

    /// Sorted distinct non-zero ids.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.data.iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_count(&self) -> usize {
        self.ids().len()
    }

    pub fn max_id(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Pixel coordinates `(x, y)` of every instance, keyed by id, in raster order.
    pub fn instances(&self) -> BTreeMap<u32, Vec<(usize, usize)>> {
        let mut out: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, &id) in self.data.iter().enumerate() {
            if id != 0 {
                out.entry(id)
                    .or_default()
                    .push((i % self.width, i / self.width));
            }
        }
        out
    }

    /// Binary mask of pixels belonging to any instance.
    pub fn foreground(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0).collect()
    }

    /// Renumbers ids to 1..=K in order of first appearance in raster order.
    pub fn relabeled_sequential(&self) -> LabelMap {
        let mut map = BTreeMap::new();
        let mut next = 1u32;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v == 0 {
                    0
                } else {
                    *map.entry(v).or_insert_with(|| {
                        let id = next;
                        next += 1;
                        id
                    })
                }
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// True when both maps describe the same partition up to a bijective
    /// renaming of ids (background must coincide exactly).
    pub fn equal_up_to_relabeling(&self, other: &LabelMap) -> bool {
        if self.width != other.width || self.height != other.height {
            return false;
        }
        let mut fwd: BTreeMap<u32, u32> = BTreeMap::new();
        let mut bwd: BTreeMap<u32, u32> = BTreeMap::new();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            if (a == 0) != (b == 0) {
                return false;
            }
            if a == 0 {
                continue;
            }
            if *fwd.entry(a).or_insert(b) != b || *bwd.entry(b).or_insert(a) != a {
                return false;
            }
        }
        true
    }

    /// Copies the `w`×`h` window at `(x0, y0)`; pixels outside the frame are
    /// background.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> LabelMap {
        let mut out = LabelMap::new(w, h);
        for y in 0..h {
            let sy = y0 + y as isize;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..w {
                let sx = x0 + x as isize;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                out.data[y * w + x] = self.data[sy as usize * self.width + sx as usize];
            }
        }
        out
    }
}

/// Intensity image with values nominally in `[0, 1]`, stored channel-major
/// (`[C, H, W]`) to match the network's tensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(domain!(
                "image data has {} entries, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Window copy with zero fill outside the frame.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> Image {
        let mut out = Image::new(w, h, self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                let sy = y0 + y as isize;
                if sy < 0 || sy >= self.height as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x0 + x as isize;
                    if sx < 0 || sx >= self.width as isize {
                        continue;
                    }
                    out.set(c, x, y, self.get(c, sx as usize, sy as usize));
                }
            }
        }
        out
    }
}
