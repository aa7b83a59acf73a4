//! The trajectory forecasting network: twin trajectory/edge encoders, a
//! gaussian prior head, a future (posterior) encoder, and an autoregressive
//! decoder, tied together by the CVAE training objective.

mod checkpoint;
mod layers;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use layers::{causal_mask, multi_head_attention, positional_encoding, posenc_matrix};
pub use net::{
    kl_divergence, sample_latent, ForwardOpts, InferMode, LatentGaussian, LossNodes, Model,
    TrainForward,
};
pub use params::{Graph, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("expected {what} of length {want}, got {got}")]
    BadInputLength {
        what: &'static str,
        want: usize,
        got: usize,
    },
}

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Latent dimension |Z|.
    pub latent: usize,
    /// Observed timesteps H.
    pub obs_len: usize,
    /// Predicted timesteps P.
    pub pred_len: usize,
    /// Feed-forward hidden width.
    pub ff: usize,
}

impl ModelConfig {
    /// Reference configuration: D=256, 8 heads, 3+3 layers, |Z|=32.
    pub fn full(obs_len: usize, pred_len: usize) -> Self {
        ModelConfig {
            d: 256,
            heads: 8,
            enc_layers: 3,
            dec_layers: 3,
            latent: 32,
            obs_len,
            pred_len,
            ff: 1024,
        }
    }

    /// Tiny configuration for fast experiments and gradient checks.
    pub fn desk() -> Self {
        ModelConfig {
            d: 16,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            latent: 4,
            obs_len: 4,
            pred_len: 3,
            ff: 32,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.heads == 0 || self.latent == 0 || self.ff == 0 {
            return Err(ModelError::InvalidConfig("all sizes must be positive".into()));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "embedding width {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if !self.d.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig(
                "embedding width must be even (trajectory/edge halves)".into(),
            ));
        }
        if self.obs_len < 2 || self.pred_len < 1 {
            return Err(ModelError::InvalidConfig(
                "need obs_len >= 2 and pred_len >= 1".into(),
            ));
        }
        Ok(())
    }
}
