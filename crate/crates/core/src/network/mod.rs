//! SinConv U-Net regressing per-pixel guided embeddings.
//!
//! The first convolution of every decoder level sees extra input channels
//! holding the guide functions sampled at that level's stride (`Δ`), so that
//! the network only has to learn how to average them over the object a pixel
//! belongs to. One extra output channel predicts foreground logits.

mod targets;
mod train;
mod unet;

pub use targets::{build_targets, coord_maps, guide_maps, TargetField};
pub use train::{infer, train, EpochLoss, Inference, TrainConfig, Trainer};
pub use unet::{LayerSpec, Positional, SinUNet, SinUNetConfig};
