//! TOML run configuration with `--set key=value` overrides.
//!
//! Precedence: command-line flags > `--set` > config file > defaults.

use std::path::Path;

use hseg_core::clustering::ExtractConfig;
use hseg_core::data::{SynthConfig, SynthKind};
use hseg_core::guides::GuideFitConfig;
use hseg_core::metrics::EvalOptions;
use hseg_core::network::{SinUNetConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};

/// Inference-time settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Processing tile `(W, H)`; defaults to the network's training tile.
    pub tile: Option<(usize, usize)>,
    /// Foreground probability threshold.
    pub fg_threshold: f32,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            tile: None,
            fg_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub guides: GuideFitConfig,
    pub network: SinUNetConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
    pub infer: InferConfig,
    pub eval: EvalOptions,
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `key.path=value`; the value is read as TOML and falls back to a
/// bare string.
fn parse_override(arg: &str) -> Result<Table> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {arg:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!("--set has an invalid key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut leaf = value;
    for part in key.rsplit('.') {
        let mut t = Table::new();
        t.insert(part.to_string(), leaf);
        leaf = Value::Table(t);
    }
    match leaf {
        Value::Table(t) => Ok(t),
        _ => unreachable!("wrapped at least once"),
    }
}

fn to_table<T: Serialize>(value: &T) -> Table {
    Table::try_from(value).expect("config types serialize to TOML tables")
}

impl RunConfig {
    /// Builds the configuration from an optional file plus overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
                toml::from_str::<Table>(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for arg in overrides {
            merge(&mut table, parse_override(arg)?);
        }
        Self::from_table(table)
    }

    fn from_table(mut table: Table) -> Result<Self> {
        // synth defaults depend on the selected kind
        let synth_top = match table.remove("synth") {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(Error::Usage("[synth] must be a table".into())),
            None => Table::new(),
        };
        let kind: SynthKind = match synth_top.get("kind") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Usage(format!("synth.kind: {e}")))?,
            None => SynthKind::Blobs,
        };
        let mut synth = to_table(&SynthConfig::preset(kind));
        merge(&mut synth, synth_top);
        table.insert("synth".into(), Value::Table(synth));
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| Error::Usage(format!("invalid configuration: {e}")))?;
        Ok(cfg)
    }
}
