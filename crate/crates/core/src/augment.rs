//! Pressure scaling and temporal shifting augmentations.
//!
//! Both operate per channel on a normalized `36 × W` window. Scaling works in
//! kg so the magnitude test and the clamp refer to physical load; shifting
//! replicates the edge sample into the vacated positions.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    denormalize_pressure, normalize_pressure, TrainingWindow, MAX_PRESSURE_KG,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionOrder {
    ShiftThenScale,
    ScaleThenShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Peak-to-peak threshold separating "active" from "near-zero" channels.
    pub magnitude_threshold_kg: f64,
    pub p_high: f64,
    pub p_low: f64,
    pub shift_prob: f64,
    pub max_shift: usize,
    pub copies: usize,
    pub rng_seed: u64,
    pub scale_enabled: bool,
    pub shift_enabled: bool,
    pub order: CompositionOrder,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.8,
            alpha_max: 1.2,
            magnitude_threshold_kg: 0.3,
            p_high: 0.8,
            p_low: 0.2,
            shift_prob: 0.5,
            max_shift: 5,
            copies: 2,
            rng_seed: 0,
            scale_enabled: true,
            shift_enabled: true,
            order: CompositionOrder::ShiftThenScale,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max) {
            return Err(Error::config(format!(
                "need 0 < alpha_min <= alpha_max, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        for (name, p) in [
            ("p_high", self.p_high),
            ("p_low", self.p_low),
            ("shift_prob", self.shift_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.shift_enabled && (self.max_shift < 1 || self.max_shift >= width) {
            return Err(Error::config(format!(
                "max_shift {} must lie in [1, {width})",
                self.max_shift
            )));
        }
        Ok(())
    }
}

/// Per-channel scaling factor, `None` where the channel was left untouched.
pub type ScaleTrace = Vec<Option<f64>>;
/// Per-channel signed shift (positive = forward/delayed), `None` if unshifted.
pub type ShiftTrace = Vec<Option<i64>>;

/// Pressure scaling; see [`scale_augment_traced`].
pub fn scale_augment<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Array2<f64> {
    scale_augment_traced(x, cfg, rng).0
}

/// Each channel whose kg peak-to-peak exceeds the threshold is scaled with
/// probability `p_high`, other channels with `p_low`. A scaled channel is
/// multiplied by `α ~ U[alpha_min, alpha_max]` in kg, clamped to
/// `[0, 20]` kg and renormalized. Unscaled channels are copied unchanged.
pub fn scale_augment_traced<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Array2<f64>, ScaleTrace) {
    let mut out = x.to_owned();
    let mut trace = Vec::with_capacity(x.nrows());
    for mut row in out.axis_iter_mut(Axis(0)) {
        let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let ptp_kg = denormalize_pressure(hi) - denormalize_pressure(lo);
        let p = if ptp_kg > cfg.magnitude_threshold_kg {
            cfg.p_high
        } else {
            cfg.p_low
        };
        if rng.random::<f64>() < p {
            let alpha = if cfg.alpha_max > cfg.alpha_min {
                rng.random_range(cfg.alpha_min..=cfg.alpha_max)
            } else {
                cfg.alpha_min
            };
            row.mapv_inplace(|v| {
                let kg = (denormalize_pressure(v) * alpha).clamp(0.0, MAX_PRESSURE_KG);
                normalize_pressure(kg).clamp(-1.0, 1.0)
            });
            trace.push(Some(alpha));
        } else {
            trace.push(None);
        }
    }
    (out, trace)
}

/// Temporal shifting; see [`shift_augment_traced`].
pub fn shift_augment<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Array2<f64> {
    shift_augment_traced(x, cfg, rng).0
}

/// Shift one channel by `k` steps; positive `k` delays the signal. Vacated
/// positions take the nearest edge sample.
pub fn shift_series(series: &[f64], k: i64) -> Vec<f64> {
    let n = series.len() as i64;
    (0..n)
        .map(|t| series[(t - k).clamp(0, n - 1) as usize])
        .collect()
}

/// Each channel independently is shifted with probability `shift_prob` by
/// `k ~ U{1..max_shift}` steps in a uniformly chosen direction.
pub fn shift_augment_traced<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Array2<f64>, ShiftTrace) {
    let mut out = x.to_owned();
    let mut trace = Vec::with_capacity(x.nrows());
    for mut row in out.axis_iter_mut(Axis(0)) {
        if rng.random::<f64>() < cfg.shift_prob {
            let k = rng.random_range(1..=cfg.max_shift) as i64;
            let k = if rng.random::<bool>() { k } else { -k };
            let original: Vec<f64> = row.to_vec();
            for (o, v) in row.iter_mut().zip(shift_series(&original, k)) {
                *o = v;
            }
            trace.push(Some(k));
        } else {
            trace.push(None);
        }
    }
    (out, trace)
}

fn augment_x<R: Rng + ?Sized>(x: ArrayView2<f64>, cfg: &AugmentConfig, rng: &mut R) -> Array2<f64> {
    let shift = |a: ArrayView2<f64>, rng: &mut R| {
        if cfg.shift_enabled {
            shift_augment(a, cfg, rng)
        } else {
            a.to_owned()
        }
    };
    let scale = |a: ArrayView2<f64>, rng: &mut R| {
        if cfg.scale_enabled {
            scale_augment(a, cfg, rng)
        } else {
            a.to_owned()
        }
    };
    match cfg.order {
        CompositionOrder::ShiftThenScale => {
            let a = shift(x, rng);
            scale(a.view(), rng)
        }
        CompositionOrder::ScaleThenShift => {
            let a = scale(x, rng);
            shift(a.view(), rng)
        }
    }
}

/// Originals followed by `copies` augmented passes over the input.
///
/// Output window `i` of the augmented part draws from its own stream seeded
/// with `base ^ i`, where `base` is taken from `rng`.
pub fn augment_dataset<R: RngCore + ?Sized>(
    windows: &[TrainingWindow],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<TrainingWindow>> {
    if let Some(w) = windows.first() {
        cfg.validate(w.len())?;
    }
    let base = rng.next_u64();
    let n = windows.len();
    let mut out = Vec::with_capacity(n * (cfg.copies + 1));
    out.extend_from_slice(windows);
    for copy in 0..cfg.copies {
        for (i, w) in windows.iter().enumerate() {
            let idx = (copy * n + i) as u64;
            let mut sub = ChaCha8Rng::seed_from_u64(base ^ idx);
            let mut aug = w.clone();
            aug.x = augment_x(w.x.view(), cfg, &mut sub);
            out.push(aug);
        }
    }
    Ok(out)
}
