//! Frame-by-frame inference over a sliding window.
//!
//! The stream keeps the last `W` normalized frames. Nothing is emitted until
//! the buffer is full; from then on every frame yields the last time step of
//! the network output over the current window, which is the same value the
//! batch evaluation assigns to that frame.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};

use crate::data::{check_range, normalize_pressure, pressure_column_name, PressureFrame, BIO_DIM, MAX_PRESSURE_KG, N_CHANNELS, N_MUSCLES};
use crate::error::Result;
use crate::model::{forward, Batch, ModelConfig, ModelParams};

#[derive(Debug, Clone)]
pub struct StreamState {
    config: ModelConfig,
    params: ModelParams<f32>,
    bio_norm: [f64; BIO_DIM],
    buffer: VecDeque<[f32; N_CHANNELS]>,
    frames_seen: usize,
}

impl StreamState {
    pub fn new(config: ModelConfig, params: ModelParams<f32>, bio_norm: [f64; BIO_DIM]) -> Self {
        let w = config.window;
        Self {
            config,
            params,
            bio_norm,
            buffer: VecDeque::with_capacity(w),
            frames_seen: 0,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Push one raw frame (kg). Returns an estimate once `W` frames have been
    /// seen.
    pub fn push(&mut self, frame: &PressureFrame) -> Result<Option<[f64; N_MUSCLES]>> {
        let kg = frame.channels();
        let mut norm = [0f32; N_CHANNELS];
        for (c, (&v, slot)) in kg.iter().zip(norm.iter_mut()).enumerate() {
            check_range(v, 0.0, MAX_PRESSURE_KG, self.frames_seen + 1, || pressure_column_name(c))?;
            *slot = normalize_pressure(v) as f32;
        }
        self.push_normalized(norm)
    }

    /// Push one frame that is already on the `[-1, 1]` scale.
    pub fn push_normalized(&mut self, frame: [f32; N_CHANNELS]) -> Result<Option<[f64; N_MUSCLES]>> {
        let w = self.config.window;
        if self.buffer.len() == w {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.frames_seen += 1;
        if self.buffer.len() < w {
            return Ok(None);
        }
        let batch = Batch {
            x: Array3::from_shape_fn((1, N_CHANNELS, w), |(_, c, t)| self.buffer[t][c]),
            bio: Array2::from_shape_fn((1, BIO_DIM), |(_, k)| self.bio_norm[k] as f32),
        };
        let yhat = forward(&self.params, &self.config, &batch)?;
        Ok(Some(std::array::from_fn(|m| f64::from(yhat[[0, m, w - 1]]))))
    }
}

/// Replay a whole pressure stream, returning `(t_ms, estimate)` for every
/// frame that produced one.
pub fn streaming_infer(state: &mut StreamState, frames: &[PressureFrame]) -> Result<Vec<(i64, [f64; N_MUSCLES])>> {
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        if let Some(v) = state.push(f)? {
            out.push((f.t_ms, v));
        }
    }
    Ok(out)
}
