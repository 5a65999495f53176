//! Resolution-adaptive convolutional β-VAE.
//!
//! Encoder: Gaussian low/high frequency split of the input, two multi-scale
//! stages (parallel dilated 3×3 convolutions fused by a 1×1 convolution), two
//! residual stages, BlurPool downsampling after every stage, global average
//! pooling and two dense heads for the diagonal-Gaussian posterior.
//! Decoder: dense projection to the coarsest feature map, then nearest-neighbour
//! upsampling + convolution stages and a linear output convolution.

mod augment;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use augment::{resample_bilinear, scale_augment, scale_augment_with};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use loss::{kl_divergence, vae_loss, LossParts};
pub use model::{
    freq_decompose, loss_grad_check, reparameterize, LatentPosterior, SampleForward, Vae,
    LOG_VAR_RANGE,
};
pub use train::{train, EpochLoss, TrainAbort, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LATENT_DIM: usize = 128;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_bands: usize,
    pub tile_size: usize,
    pub stage_channels: Vec<usize>,
    pub latent_dim: usize,
    pub dilation_rates: Vec<usize>,
    pub beta: f64,
    pub lowpass_sigma: f64,
    pub lowpass_kernel: usize,
    /// Residual blocks in each of the two deep stages.
    pub res_blocks: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_bands: 4,
            tile_size: 32,
            stage_channels: vec![32, 64, 128, 256],
            latent_dim: DEFAULT_LATENT_DIM,
            dilation_rates: vec![1, 2, 4],
            beta: 1.0,
            lowpass_sigma: 1.0,
            lowpass_kernel: 5,
            res_blocks: 1,
        }
    }
}

impl EncoderConfig {
    pub fn with_bands(bands: usize) -> Self {
        Self {
            input_bands: bands,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.input_bands == 0 {
            return bad("input_bands must be positive".into());
        }
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return bad(format!(
                "expected 4 positive stage widths, got {:?}",
                self.stage_channels
            ));
        }
        if self.tile_size < 16 || self.tile_size % 16 != 0 {
            return bad(format!(
                "tile size {} must be a positive multiple of 16",
                self.tile_size
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.dilation_rates.is_empty()
            || self.dilation_rates[0] == 0
            || self.dilation_rates.windows(2).any(|w| w[1] <= w[0])
        {
            return bad(format!(
                "dilation rates {:?} must be positive and strictly increasing",
                self.dilation_rates
            ));
        }
        if !(self.beta >= 0.0) || !(self.lowpass_sigma > 0.0) || self.lowpass_kernel % 2 == 0 {
            return bad(
                "beta ≥ 0, lowpass sigma > 0 and an odd lowpass kernel are required".into(),
            );
        }
        if self.res_blocks == 0 {
            return bad("at least one residual block per deep stage".into());
        }
        Ok(())
    }

    /// Spatial size of the coarsest feature map (after four halvings).
    pub fn bottleneck_size(&self) -> usize {
        self.tile_size / 16
    }
}
