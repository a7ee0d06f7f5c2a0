//! Binary training checkpoints (little-endian).
//!
//! ```text
//! "HSEG" | u32 format_version | u32 len + JSON header | [u8; 32] guide digest
//! | u32 tensor count | tensors...
//! tensor: u32 len + UTF-8 name | u8 dtype | u32 rank | u64 extents[rank] | raw data
//! ```
//! Model parameters come first in layer order, followed by the Adam moments
//! named `adam.m.<param>` and `adam.v.<param>`.

use std::fs;
use std::path::Path;

use hseg_core::autodiff::{AdamState, DType, Tensor};
use hseg_core::network::{SinUNet, SinUNetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSEG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub network: SinUNetConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub adam_step: u64,
    pub seed: u64,
}

pub struct Checkpoint {
    pub header: Header,
    pub guide_digest: [u8; 32],
    pub model: SinUNet<f32>,
    pub adam: AdamState<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(DType::F32.tag());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.guide_digest);
        let named = self.model.named_params();
        put_u32(&mut out, (named.len() * 3) as u32);
        for (name, t) in &named {
            put_tensor(&mut out, name, t);
        }
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((name, _), t) in named.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported checkpoint format_version {version}"));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| e.to_string())?;
        let mut guide_digest = [0u8; 32];
        guide_digest.copy_from_slice(r.take(32)?);
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after the last tensor".into());
        }

        let skeleton = SinUNet::<f32>::new(header.network.clone(), 0).map_err(|e| e.to_string())?;
        let names: Vec<String> = skeleton.named_params().into_iter().map(|(n, _)| n).collect();
        if count != names.len() * 3 {
            return Err(format!("expected {} tensors, found {count}", names.len() * 3));
        }
        let mut it = tensors.into_iter();
        let mut section = |prefix: &str| -> std::result::Result<Vec<Tensor<f32>>, String> {
            names
                .iter()
                .map(|n| {
                    let (name, t) = it.next().expect("count checked");
                    if name != format!("{prefix}{n}") {
                        return Err(format!("expected tensor {prefix}{n}, found {name}"));
                    }
                    Ok(t)
                })
                .collect()
        };
        let params = section("")?;
        let m = section("adam.m.")?;
        let v = section("adam.v.")?;
        let model = SinUNet::from_params(header.network.clone(), params).map_err(|e| e.to_string())?;
        for (p, (a, b)) in model.params().iter().zip(m.iter().zip(&v)) {
            if a.shape() != p.shape() || b.shape() != p.shape() {
                return Err("optimizer moment shape differs from its parameter".into());
            }
        }
        let adam = AdamState {
            step: header.adam_step,
            m,
            v,
        };
        Ok(Self {
            header,
            guide_digest,
            model,
            adam,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or("checkpoint is truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor<f32>), String> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let tag = self.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("{name}: unknown dtype tag {tag}"))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64()?).map_err(|e| e.to_string())?);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match dtype {
            DType::F32 => self
                .take(n.checked_mul(4).ok_or("tensor too large")?)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
            DType::F64 => self
                .take(n.checked_mul(8).ok_or("tensor too large")?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as f32)
                .collect(),
        };
        let t = Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?;
        Ok((name, t))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| Error::io(path, e))
}
