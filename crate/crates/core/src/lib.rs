//! Full-body muscle activation estimation from 36-channel insole pressure.
//!
//! * [`data`]: recordings, file formats, synchronization, normalization, windowing
//! * [`augment`]: pressure scaling and temporal shifting
//! * [`model`]: the estimation network, its losses, gradients and checkpoints
//! * [`train`]: data splits and the optimization loop
//! * [`eval`]: RMSE, Pearson correlation, reports and the imbalance score
//! * [`synth`]: a biomechanical generator of labelled synthetic recordings
//! * [`pipeline`]: split, train and evaluate in one call
//! * [`stream`]: frame-by-frame inference over a sliding window

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod stream;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
