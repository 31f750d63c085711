//! Adversarial inpainting attacks on audio classifiers.
//!
//! The pipeline locates the segments a classifier relies on (Grad-CAM in the
//! white-box setting, coarse-to-fine masking queries in the black-box
//! setting), re-synthesizes those segments with a latent-conditioned
//! inpainter steered towards misclassification (sign-gradient steps or
//! CMA-ES over the latent), and scores the outcome with attack success rate,
//! Fréchet distance over embeddings and log-spectral distance.

pub mod attack;
pub mod audio;
pub mod cmaes;
pub mod error;
pub mod eval;
pub mod importance;
pub mod inpaint;
pub mod model;

pub use error::{Error, Result};
