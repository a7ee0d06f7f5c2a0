//! PNG rasters: 16-bit instance label maps and 8-bit images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hseg_core::{Image, LabelMap};
use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};

struct Raw {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path, transform: Transformations) -> Result<Raw> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(transform);
    let mut reader = decoder.read_info().map_err(|e| Error::io(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::io(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| Error::io(path, e))?;
    data.truncate(info.buffer_size());
    Ok(Raw {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| Error::io(path, e))?;
    writer.write_image_data(data).map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))
}

/// Writes a single-channel 16-bit PNG; ids above 65535 do not fit.
pub fn save_labels(map: &LabelMap, path: &Path) -> Result<()> {
    if map.max_id() > u16::MAX as u32 {
        return Err(Error::Data(format!(
            "{}: label id {} exceeds the 16-bit label format",
            path.display(),
            map.max_id()
        )));
    }
    let bytes: Vec<u8> = map.data().iter().flat_map(|&v| (v as u16).to_be_bytes()).collect();
    encode(path, map.width(), map.height(), ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

/// Reads a single-channel 8- or 16-bit PNG label map.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let raw = decode(path, Transformations::IDENTITY)?;
    if raw.color != ColorType::Grayscale {
        return Err(Error::io(path, "label maps must be single-channel grayscale"));
    }
    let data: Vec<u32> = match raw.depth {
        BitDepth::Eight => raw.data.iter().map(|&v| v as u32).collect(),
        BitDepth::Sixteen => raw
            .data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect(),
        d => return Err(Error::io(path, format!("unsupported label bit depth {d:?}"))),
    };
    Ok(LabelMap::from_vec(raw.width, raw.height, data)?)
}

/// Reads a grayscale or RGB(A) PNG as an image in `[0, 1]`; alpha is dropped.
pub fn load_image(path: &Path) -> Result<Image> {
    let raw = decode(path, Transformations::EXPAND)?;
    let (w, h) = (raw.width, raw.height);
    let samples: Vec<f32> = match raw.depth {
        BitDepth::Sixteen => raw
            .data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        _ => raw.data.iter().map(|&v| v as f32 / 255.0).collect(),
    };
    let (stride, channels) = match raw.color {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        c => return Err(Error::io(path, format!("unsupported color type {c:?}"))),
    };
    let mut data = vec![0.0; channels * w * h];
    for (i, px) in samples.chunks_exact(stride).enumerate() {
        for c in 0..channels {
            data[c * w * h + i] = px[c];
        }
    }
    Ok(Image::from_vec(w, h, channels, data)?)
}

/// Writes a 1- or 3-channel image as 8-bit PNG, clamping to `[0, 1]`.
pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        _ => return Err(Error::Usage(format!("cannot write a {c}-channel image"))),
    };
    let plane = w * h;
    let mut bytes = Vec::with_capacity(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            bytes.push(to_u8(image.data()[ch * plane + i]));
        }
    }
    encode(path, w, h, color, BitDepth::Eight, &bytes)
}

/// Writes interleaved 8-bit RGB.
pub fn save_rgb(width: usize, height: usize, rgb: &[u8], path: &Path) -> Result<()> {
    encode(path, width, height, ColorType::Rgb, BitDepth::Eight, rgb)
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Averages RGB down to one channel; other images pass through.
pub fn to_grayscale(image: Image) -> Image {
    if image.channels() != 3 {
        return image;
    }
    let plane = image.width() * image.height();
    let d = image.data();
    let gray = (0..plane)
        .map(|i| (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0)
        .collect();
    Image::from_vec(image.width(), image.height(), 1, gray).expect("plane size matches")
}
