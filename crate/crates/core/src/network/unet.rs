use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::targets::{coord_maps, guide_maps};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{config_err, domain, Result};
use crate::guides::GuideSet;

/// Architecture of the embedding network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinUNetConfig {
    /// Number of 2× downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    /// Embedding width; must equal the guide count.
    pub embedding_dim: usize,
    pub input_channels: usize,
    /// Concatenate guide maps into the first conv of every decoder level.
    pub sinconv_enabled: bool,
    /// Concatenate `{x/W, y/H}` instead of guide maps.
    pub coordconv_mode: bool,
    /// Processing size `(W, H)`.
    pub tile: (usize, usize),
}

impl Default for SinUNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            embedding_dim: 12,
            input_channels: 1,
            sinconv_enabled: true,
            coordconv_mode: false,
            tile: (128, 128),
        }
    }
}

/// What the decoder's first convolutions receive besides features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positional {
    None,
    Guides,
    Coords,
}

impl SinUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(config_err!("depth must be at least 1"));
        }
        if self.base_channels == 0 || self.embedding_dim == 0 || self.input_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        let m = 1usize << self.depth;
        if self.tile.0 == 0 || self.tile.1 == 0 || !self.tile.0.is_multiple_of(m) || !self.tile.1.is_multiple_of(m) {
            return Err(config_err!(
                "tile {}x{} is not divisible by 2^depth = {m}",
                self.tile.0,
                self.tile.1
            ));
        }
        Ok(())
    }

    pub fn positional(&self) -> Positional {
        if self.coordconv_mode {
            Positional::Coords
        } else if self.sinconv_enabled {
            Positional::Guides
        } else {
            Positional::None
        }
    }

    fn positional_channels(&self) -> usize {
        match self.positional() {
            Positional::None => 0,
            Positional::Guides => self.embedding_dim,
            Positional::Coords => 2,
        }
    }

    /// Feature width at `level`; doubles per level, the bottleneck keeps the
    /// width of the deepest encoder level.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level.min(self.depth - 1)
    }

    /// Number of output channels: embedding plus one foreground logit.
    pub fn out_channels(&self) -> usize {
        self.embedding_dim + 1
    }
}

/// One convolution of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

fn layer_plan(cfg: &SinUNetConfig) -> Vec<LayerSpec> {
    let layer = |name: String, c_in, c_out, k| LayerSpec {
        name,
        c_in,
        c_out,
        k,
    };
    let mut plan = Vec::new();
    let mut c_prev = cfg.input_channels;
    for l in 0..cfg.depth {
        let c = cfg.channels(l);
        plan.push(layer(format!("enc{l}.conv1"), c_prev, c, 3));
        plan.push(layer(format!("enc{l}.conv2"), c, c, 3));
        c_prev = c;
    }
    let cb = cfg.channels(cfg.depth);
    plan.push(layer("mid.conv1".into(), c_prev, cb, 3));
    plan.push(layer("mid.conv2".into(), cb, cb, 3));
    let mut c_below = cb;
    for l in (0..cfg.depth).rev() {
        let c = cfg.channels(l);
        plan.push(layer(format!("dec{l}.up"), c_below + cfg.positional_channels(), c, 3));
        plan.push(layer(format!("dec{l}.conv"), 2 * c, c, 3));
        c_below = c;
    }
    plan.push(layer("head".into(), c_below, cfg.out_channels(), 1));
    plan
}

/// Parameters and layout of the embedding U-Net.
///
/// Parameters are stored flat: for layer `i` of [`SinUNet::layers`], the
/// weight is `params[2i]` (`[c_out, c_in, k, k]`) and the bias `params[2i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinUNet<T> {
    config: SinUNetConfig,
    layers: Vec<LayerSpec>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> SinUNet<T> {
    /// He-normal weights, zero biases, and an all-zero output head.
    pub fn new(config: SinUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = layer_plan(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * layers.len());
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let shape = [l.c_out, l.c_in, l.k, l.k];
            let weight = if i == last {
                Tensor::zeros(&shape)
            } else {
                let std = (2.0 / (l.c_in * l.k * l.k) as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| domain!("{e}"))?;
                let n = shape.iter().product();
                Tensor::from_vec(
                    &shape,
                    (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect(),
                )?
            };
            params.push(weight);
            params.push(Tensor::zeros(&[l.c_out]));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_params(config: SinUNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layers = layer_plan(&config);
        if params.len() != 2 * layers.len() {
            return Err(config_err!(
                "expected {} parameter tensors, got {}",
                2 * layers.len(),
                params.len()
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if params[2 * i].shape() != [l.c_out, l.c_in, l.k, l.k] || params[2 * i + 1].shape() != [l.c_out] {
                return Err(config_err!(
                    "parameter shapes of {} do not match the configuration",
                    l.name
                ));
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &SinUNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// `(name, tensor)` pairs, weights named `<layer>.weight` and biases
    /// `<layer>.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{}.weight", l.name), &self.params[2 * i]),
                    (format!("{}.bias", l.name), &self.params[2 * i + 1]),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> SinUNet<U> {
        SinUNet {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Positional maps for every decoder level of an `w`×`h` input, index
    /// `l` holding the maps at stride `2^l`. Empty when the network has no
    /// positional input.
    pub fn positional_maps(&self, guides: Option<&GuideSet>, w: usize, h: usize) -> Result<Vec<Tensor<T>>> {
        let cfg = &self.config;
        match cfg.positional() {
            Positional::None => Ok(Vec::new()),
            Positional::Coords => Ok((0..cfg.depth)
                .map(|l| coord_maps((h >> l, w >> l), 1 << l, (w, h)))
                .collect()),
            Positional::Guides => {
                let g = guides.ok_or_else(|| config_err!("SinConv network needs a guide set"))?;
                if g.n() != cfg.embedding_dim {
                    return Err(config_err!(
                        "guide set has {} guides, network embeds {}",
                        g.n(),
                        cfg.embedding_dim
                    ));
                }
                Ok((0..cfg.depth)
                    .map(|l| guide_maps(g, (h >> l, w >> l), 1 << l, (w, h)))
                    .collect())
            }
        }
    }

    /// Records the forward pass of a `[C_in, H, W]` input on `tape` and
    /// returns `[N + 1, H, W]` outputs (embedding then foreground logit).
    /// `params` are the tape handles of [`SinUNet::params`], in order.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: Var, maps: &[Tensor<T>]) -> Result<Var> {
        let cfg = &self.config;
        let [c, h, w] = tape.value(input).chw()?;
        if c != cfg.input_channels {
            return Err(domain!(
                "input has {c} channels, network expects {}",
                cfg.input_channels
            ));
        }
        let m = 1usize << cfg.depth;
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(domain!("input {w}x{h} is not divisible by 2^depth = {m}"));
        }
        if params.len() != self.params.len() {
            return Err(domain!("expected {} parameter handles", self.params.len()));
        }
        let expected_maps = if cfg.positional() == Positional::None { 0 } else { cfg.depth };
        if maps.len() != expected_maps {
            return Err(domain!("expected {expected_maps} positional map levels, got {}", maps.len()));
        }

        let mut layer = 0;
        let mut conv = |tape: &mut Tape<T>, x: Var, relu: bool| -> Result<Var> {
            let k = self.layers[layer].k;
            let y = tape.conv2d(x, params[2 * layer], Some(params[2 * layer + 1]), 1, k / 2)?;
            layer += 1;
            Ok(if relu { tape.relu(y) } else { y })
        };

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut x = input;
        for _ in 0..cfg.depth {
            x = conv(tape, x, true)?;
            x = conv(tape, x, true)?;
            skips.push(x);
            x = tape.maxpool2x2(x)?;
        }
        x = conv(tape, x, true)?;
        x = conv(tape, x, true)?;
        for l in (0..cfg.depth).rev() {
            x = tape.upsample2x(x)?;
            if let Some(map) = maps.get(l) {
                let pos = tape.constant(map.clone());
                x = tape.concat(&[x, pos])?;
            }
            x = conv(tape, x, true)?;
            x = tape.concat(&[x, skips[l]])?;
            x = conv(tape, x, true)?;
        }
        conv(tape, x, false)
    }
}
