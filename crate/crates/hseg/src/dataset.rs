//! Dataset directories: `images/NNNN.png`, `labels/NNNN.png`, `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use hseg_core::data::{Sample, SynthConfig};
use hseg_core::LabelMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::png_io::{load_image, load_labels, save_image, save_labels};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

pub fn sample_name(index: usize) -> String {
    format!("{index:04}.png")
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e))
}

/// Writes samples in index order.
pub fn write_dataset(dir: &Path, samples: &[Sample], synth: Option<&SynthConfig>) -> Result<()> {
    let (images, labels) = (dir.join("images"), dir.join("labels"));
    create_dir(&images)?;
    create_dir(&labels)?;
    samples.par_iter().enumerate().try_for_each(|(i, s)| {
        save_image(&s.image, &images.join(sample_name(i)))?;
        save_labels(&s.label, &labels.join(sample_name(i)))
    })?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        images: samples.len(),
        synth: synth.cloned(),
    };
    write_json(&meta, &dir.join("meta.json"))
}

/// Sorted `*.png` files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `dir/labels` if present, else `dir` itself.
pub fn labels_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("labels");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Label maps of a directory keyed by file name.
pub fn load_label_dir(dir: &Path) -> Result<Vec<(String, LabelMap)>> {
    let dir = labels_dir(dir);
    list_pngs(&dir)?
        .par_iter()
        .map(|p| Ok((file_name(p), load_labels(p)?)))
        .collect()
}

/// Loads every labeled sample of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Sample)>> {
    let meta_path = dir.join("meta.json");
    if meta_path.exists() {
        let meta: Meta = read_json(&meta_path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported dataset format_version {}",
                meta_path.display(),
                meta.format_version
            )));
        }
    }
    let labels = dir.join("labels");
    let images = dir.join("images");
    if !labels.is_dir() || !images.is_dir() {
        return Err(Error::Data(format!(
            "{}: expected images/ and labels/ subdirectories",
            dir.display()
        )));
    }
    let files = list_pngs(&labels)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: dataset has no samples", dir.display())));
    }
    files
        .par_iter()
        .map(|p| {
            let name = file_name(p);
            let label = load_labels(p)?;
            let image = load_image(&images.join(&name))?;
            if (image.width(), image.height()) != (label.width(), label.height()) {
                return Err(Error::Data(format!("{name}: image and label frames differ")));
            }
            Ok((name, Sample { image, label }))
        })
        .collect()
}
