//! Color overlays of label maps.

use hseg_core::data::derive_seed;
use hseg_core::{Image, LabelMap};

use crate::error::{Error, Result};
use crate::png_io::to_u8;

/// Color of an instance id; fixed for a given id across runs and images.
pub fn palette(id: u32) -> [u8; 3] {
    let h = derive_seed(0x5EED, id as u64);
    // keep every channel away from black so small objects stay visible
    let c = |shift: u32| 64 + ((h >> shift) & 0xFF) as u8 % 192;
    [c(0), c(8), c(16)]
}

/// Blends instance colors over the image with opacity `alpha`; background
/// pixels show the image only. Returns interleaved RGB.
pub fn overlay(image: &Image, labels: &LabelMap, alpha: f32) -> Result<Vec<u8>> {
    let (w, h) = (image.width(), image.height());
    if (w, h) != (labels.width(), labels.height()) {
        return Err(Error::Data(format!(
            "image is {w}x{h} but labels are {}x{}",
            labels.width(),
            labels.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let plane = w * h;
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        let id = labels.data()[i];
        for c in 0..3 {
            let base = image.data()[(c % image.channels()) * plane + i];
            let v = if id == 0 {
                base
            } else {
                (1.0 - alpha) * base + alpha * palette(id)[c] as f32 / 255.0
            };
            out.push(to_u8(v));
        }
    }
    Ok(out)
}
