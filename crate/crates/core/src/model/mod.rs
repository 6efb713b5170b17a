//! The estimation network and its objective.
//!
//! ```text
//! x (36×W) ─┬─ avg/max pool ─ shared MLP ─ sigmoid ─ s (36)
//!           └─ s ⊙ x ─ linear 36→D ─ FiLM(bio) ─ + pos ─ encoder ×L ─ head ─ sigmoid ─ ŷ (8×W)
//! ```
//!
//! Everything is written against [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient checking.

mod checkpoint;
mod config;
mod flops;
mod loss;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use config::{MaskFusion, ModelConfig};
pub use flops::forward_flops;
pub use loss::{batch_loss_and_grad, loss_mse, loss_smooth, loss_total};
pub use network::{
    backward, forward, forward_cached, gradients, region_importance_mask, Batch, ForwardCache,
    LN_EPS,
};
pub use params::{expected_shapes, LayerParams, ModelParams, Param, ParamKind};

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type accepted by the network.
pub trait Real: NdFloat + FromPrimitive + Default {}

impl Real for f32 {}
impl Real for f64 {}
