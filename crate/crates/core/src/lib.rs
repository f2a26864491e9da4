//! Self-supervised pretraining toolkit for ultrasound video data built around
//! intra-video positive pairs (IVPP).
//!
//! Positive pairs are drawn from the same B-mode video within a bounded
//! temporal separation, or as M-mode slices within a bounded horizontal
//! separation, and can be down-weighted by their distance. The weights feed
//! weighted variants of SimCLR, VICReg and Barlow Twins.
//!
//! Module map:
//! - [`datamodel`]: videos, manifests, patient splits, synthetic data.
//! - [`mmode`]: M-mode extraction and pleural-line column selection.
//! - [`sampler`]: positive-pair sampling and distance weights.
//! - [`augment`]: stochastic augmentation and preprocessing.
//! - [`objectives`]: weighted SSL objectives with analytic gradients.
//! - [`train`]: encoders, LARS, pretraining, linear probe and fine-tuning.
//! - [`evalstats`]: metrics, cross-validation, label efficiency, statistics.

pub mod augment;
pub mod datamodel;
mod error;
pub mod evalstats;
pub mod image;
pub mod mmode;
pub mod objectives;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
