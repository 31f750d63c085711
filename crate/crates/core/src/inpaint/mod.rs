//! Gap filling. [`Inpainter`] is the generator seam; [`ReferenceInpainter`]
//! is a deterministic spectral-interpolation implementation whose output is
//! steered by a small latent vector.

mod reference;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{SegmentMask, Waveform};
use crate::error::{Error, Result};

pub use reference::ReferenceInpainter;

pub const DEFAULT_LATENT_DIM: usize = 16;
pub const DEFAULT_BLEND_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("latent entries must be finite and non-empty".into()));
        }
        Ok(Self(z))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A latent-conditioned gap filler.
///
/// Implementations must be pure: identical arguments give bit-identical audio,
/// and samples where the mask envelope is zero are copied from `x` unchanged.
pub trait Inpainter: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Fills the masked region of `x` from its unmasked context.
    fn inpaint(&self, x: &Waveform, mask: &SegmentMask, z: &Latent) -> Result<Waveform>;

    /// Pulls `current` towards a fresh inpainting of its masked region:
    /// masked samples become `beta * inpaint + (1 - beta) * current`.
    fn reinpaint(&self, current: &Waveform, x: &Waveform, mask: &SegmentMask, z: &Latent, beta: f64) -> Result<Waveform> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("blend beta must lie in [0, 1], got {beta}")));
        }
        x.ensure_same_shape(current)?;
        let fresh = self.inpaint(x, mask, z)?;
        let samples = x
            .samples
            .iter()
            .zip(&current.samples)
            .zip(&fresh.samples)
            .zip(&mask.envelope)
            .map(|(((x, c), f), m)| if *m == 0.0 { *x } else { beta * f + (1.0 - beta) * c })
            .collect();
        Ok(Waveform {
            samples,
            sample_rate: x.sample_rate,
        })
    }

    /// Standard-normal latent, deterministic per seed.
    fn sample_latent(&self, seed: u64) -> Latent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Latent((0..self.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// A shared generator together with its default blend factor.
#[derive(Clone)]
pub struct InpainterHandle {
    generator: Arc<dyn Inpainter>,
    blend_beta: f64,
}

impl std::fmt::Debug for InpainterHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InpainterHandle")
            .field("latent_dim", &self.latent_dim())
            .field("blend_beta", &self.blend_beta)
            .finish()
    }
}

impl InpainterHandle {
    pub fn new(generator: Arc<dyn Inpainter>) -> Self {
        Self {
            generator,
            blend_beta: DEFAULT_BLEND_BETA,
        }
    }

    /// Reference inpainter with the default latent size.
    pub fn reference() -> Self {
        Self::new(Arc::new(ReferenceInpainter::default()))
    }

    pub fn with_blend(&self, blend_beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&blend_beta) {
            return Err(Error::InvalidParameter(format!("blend beta must lie in [0, 1], got {blend_beta}")));
        }
        Ok(Self {
            generator: self.generator.clone(),
            blend_beta,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn blend_beta(&self) -> f64 {
        self.blend_beta
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        if z.dim() != self.latent_dim() {
            return Err(Error::InvalidParameter(format!(
                "latent has {} entries, generator expects {}",
                z.dim(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    pub fn inpaint(&self, x: &Waveform, mask: &SegmentMask, z: &Latent) -> Result<Waveform> {
        self.check_latent(z)?;
        self.generator.inpaint(x, mask, z)
    }

    pub fn reinpaint(&self, current: &Waveform, x: &Waveform, mask: &SegmentMask, z: &Latent) -> Result<Waveform> {
        self.check_latent(z)?;
        self.generator.reinpaint(current, x, mask, z, self.blend_beta)
    }

    pub fn sample_latent(&self, seed: u64) -> Latent {
        self.generator.sample_latent(seed)
    }
}
