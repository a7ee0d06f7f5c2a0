use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::targets::build_targets;
use super::unet::{Positional, SinUNet, SinUNetConfig};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Real, Tape, Tensor, Var};
use crate::data::{augment, derive_seed, AugmentConfig, Sample};
use crate::error::{config_err, domain, Result};
use crate::guides::GuideSet;
use crate::label::Image;

/// Optimization settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the foreground logistic term.
    pub fg_weight: f64,
    /// Regress the embedding on every pixel (background target 0) instead of
    /// foreground only.
    pub full_image_mask: bool,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            adam: AdamConfig::default(),
            fg_weight: 1.0,
            full_image_mask: false,
            augment: AugmentConfig::default(),
        }
    }
}

/// Mean loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l1: f64,
    pub bce: f64,
    pub total: f64,
}

/// Training state: network, optimizer moments and epoch counter.
pub struct Trainer<'g> {
    pub model: SinUNet<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
    guides: &'g GuideSet,
    config: TrainConfig,
    seed: u64,
    maps: Vec<Tensor<f32>>,
}

impl<'g> Trainer<'g> {
    pub fn new(model: SinUNet<f32>, guides: &'g GuideSet, config: TrainConfig, seed: u64) -> Result<Self> {
        let adam = AdamState::new(model.params());
        Self::resume(model, adam, 0, guides, config, seed)
    }

    pub fn resume(
        model: SinUNet<f32>,
        adam: AdamState<f32>,
        epoch: usize,
        guides: &'g GuideSet,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let net = model.config();
        if guides.n() != net.embedding_dim {
            return Err(config_err!(
                "guide set has {} guides but the network embeds {}",
                guides.n(),
                net.embedding_dim
            ));
        }
        if config.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        let (tw, th) = net.tile;
        let maps = model.positional_maps(Some(guides), tw, th)?;
        Ok(Self {
            model,
            adam,
            epoch,
            guides,
            config,
            seed,
            maps,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over `dataset` in a seed-determined order.
    pub fn run_epoch(&mut self, dataset: &[Sample]) -> Result<EpochLoss> {
        if dataset.is_empty() {
            return Err(domain!("training dataset is empty"));
        }
        let epoch_seed = derive_seed(self.seed, self.epoch as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut aug = self.config.augment.clone();
        aug.crop = Some(self.model.config().tile);

        let (mut l1_sum, mut bce_sum, mut l1_count) = (0.0, 0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let mut acc: Vec<Tensor<f32>> = self.model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &idx in batch {
                let sample = augment(&dataset[idx], &aug, derive_seed(epoch_seed, idx as u64 + 1));
                let step = self.sample_gradients(&sample)?;
                if let Some(l1) = step.l1 {
                    l1_sum += l1;
                    l1_count += 1;
                }
                bce_sum += step.bce;
                for (a, g) in acc.iter_mut().zip(&step.grads) {
                    a.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(self.model.params_mut(), &acc, &mut self.adam, &self.config.adam)?;
        }
        self.epoch += 1;
        let l1 = if l1_count > 0 { l1_sum / l1_count as f64 } else { 0.0 };
        let bce = bce_sum / dataset.len() as f64;
        Ok(EpochLoss {
            epoch: self.epoch,
            l1,
            bce,
            total: l1 + self.config.fg_weight * bce,
        })
    }

    fn sample_gradients(&self, sample: &Sample) -> Result<SampleStep> {
        let targets = build_targets(&sample.label, self.guides);
        let maps = if (sample.image.width(), sample.image.height()) == self.model.config().tile {
            self.maps.clone()
        } else {
            self.model
                .positional_maps(Some(self.guides), sample.image.width(), sample.image.height())?
        };
        let (tape, params, losses) = loss_tape(&self.model, &sample.image, &targets, &maps, &self.config)?;
        let mut g = tape.backward(losses.total)?;
        let grads = params
            .iter()
            .map(|&p| g.take(p).expect("parameters are leaves"))
            .collect();
        Ok(SampleStep {
            l1: losses.l1.map(|v| tape.value(v).data()[0] as f64),
            bce: tape.value(losses.bce).data()[0] as f64,
            grads,
        })
    }
}

struct SampleStep {
    l1: Option<f64>,
    bce: f64,
    grads: Vec<Tensor<f32>>,
}

pub(crate) struct LossVars {
    pub l1: Option<Var>,
    pub bce: Var,
    pub total: Var,
}

/// Records the full training objective for one sample:
/// `l1_loss(embedding, target, fg) + fg_weight * bce(fg_logit, fg)`.
pub(crate) fn loss_tape<T: Real>(
    model: &SinUNet<T>,
    image: &Image,
    targets: &super::TargetField,
    maps: &[Tensor<T>],
    config: &TrainConfig,
) -> Result<(Tape<T>, Vec<Var>, LossVars)> {
    let n = model.config().embedding_dim;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().iter().map(|p| tape.param(p.clone())).collect();
    let input = tape.constant(image_tensor(image));
    let out = model.forward(&mut tape, &params, input, maps)?;
    let emb = tape.slice_channels(out, 0, n)?;
    let logit = tape.slice_channels(out, n, 1)?;
    let fg: Vec<T> = targets.fg.iter().map(|&f| if f { T::one() } else { T::zero() }).collect();
    let bce = tape.bce_loss(logit, &fg)?;
    let mask: Vec<bool> = if config.full_image_mask {
        vec![true; targets.fg.len()]
    } else {
        targets.fg.clone()
    };
    let l1 = if mask.iter().any(|&m| m) {
        let target = tape.constant(targets.to_tensor());
        Some(tape.l1_loss(emb, target, &mask)?)
    } else {
        None
    };
    let weighted = tape.scale(bce, T::from_f64(config.fg_weight));
    let total = match l1 {
        Some(l) => tape.add(l, weighted)?,
        None => weighted,
    };
    Ok((tape, params, LossVars { l1, bce, total }))
}

pub(crate) fn image_tensor<T: Real>(image: &Image) -> Tensor<T> {
    Tensor::from_vec(
        &[image.channels(), image.height(), image.width()],
        image.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
    .expect("image buffer matches its frame")
}

/// Trains a fresh network; returns the trainer (model, optimizer state) and
/// the per-epoch loss curve.
pub fn train<'g>(
    dataset: &[Sample],
    guides: &'g GuideSet,
    net: SinUNetConfig,
    config: TrainConfig,
    seed: u64,
) -> Result<(Trainer<'g>, Vec<EpochLoss>)> {
    let model = SinUNet::new(net, derive_seed(seed, u64::MAX))?;
    let mut trainer = Trainer::new(model, guides, config, seed)?;
    let mut curve = Vec::with_capacity(trainer.config.epochs);
    for _ in 0..trainer.config.epochs {
        curve.push(trainer.run_epoch(dataset)?);
    }
    Ok((trainer, curve))
}

/// Network output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub width: usize,
    pub height: usize,
    /// `[N, H, W]` embedding field.
    pub embedding: Vec<f32>,
    /// Sigmoid of the foreground logit, `H·W`.
    pub fg_prob: Vec<f32>,
}

impl Inference {
    pub fn n(&self) -> usize {
        self.embedding.len() / (self.width * self.height)
    }
}

/// Runs the network on an image whose sides are multiples of `2^depth`; the
/// image itself is the coordinate frame of the guide maps.
pub fn infer(image: &Image, model: &SinUNet<f32>, guides: Option<&GuideSet>) -> Result<Inference> {
    let cfg = model.config();
    if image.channels() != cfg.input_channels {
        return Err(config_err!(
            "image has {} channels, checkpoint expects {}",
            image.channels(),
            cfg.input_channels
        ));
    }
    if cfg.positional() == Positional::Guides && guides.is_none() {
        return Err(config_err!("SinConv network needs its guide set for inference"));
    }
    let (w, h) = (image.width(), image.height());
    let maps = model.positional_maps(guides, w, h)?;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().iter().map(|p| tape.constant(p.clone())).collect();
    let input = tape.constant(image_tensor(image));
    let out = model.forward(&mut tape, &params, input, &maps)?;
    let data = tape.value(out).data();
    let n = cfg.embedding_dim;
    let embedding = data[..n * w * h].to_vec();
    let fg_prob = data[n * w * h..]
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect();
    Ok(Inference {
        width: w,
        height: h,
        embedding,
        fg_prob,
    })
}
