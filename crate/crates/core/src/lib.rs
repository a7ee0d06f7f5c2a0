//! Harmonic instance embeddings for densely packed biological objects.
//!
//! The pipeline has three stages:
//!
//! 1. [`guides`] fits a set of 2-D sine guide functions so that the mean of
//!    each guide over an object separates every pair of objects in the same
//!    training image by at least a margin (L1).
//! 2. [`network`] trains a small U-Net whose decoder convolutions see the
//!    guide functions as extra input channels (SinConv) to regress, for every
//!    foreground pixel, the guided embedding of the object it belongs to.
//! 3. [`clustering`] recovers instances from a predicted embedding field with
//!    flat-kernel mean-shift.
//!
//! [`metrics`] scores labelings (Symmetric Best Dice, |DiC|, COCO-style AP)
//! and [`data`] produces deterministic synthetic datasets.
//!
//! The crate is `no_std` + `alloc`; the default `std` feature only enables
//! runtime CPU feature detection in the GEMM backend and std error impls.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod clustering;
pub mod data;
pub mod error;
pub mod guides;
pub mod label;
pub mod metrics;
pub mod network;

pub use error::{Error, Result};
pub use label::{Image, LabelMap};
