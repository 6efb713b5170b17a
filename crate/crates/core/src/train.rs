//! Data splits and the optimization loop.
//!
//! Training runs in `f32` with Adam and decoupled weight decay: each step
//! applies `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)` to the weight matrices, while
//! biases, normalization gains and the positional table get the plain Adam
//! update.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::data::{Labeled, Origin, TrainingWindow};
use crate::error::{Error, Result};
use crate::model::{
    batch_loss_and_grad, forward, gradients, Batch, ModelConfig, ModelParams, ParamKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub l2_coeff: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of training recordings held in for checkpoint selection.
    pub val_fraction: f64,
    pub no_mask: bool,
    pub no_film: bool,
    pub no_scale_aug: bool,
    pub no_shift_aug: bool,
    pub no_smooth_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 512,
            l2_coeff: 0.01,
            epochs: 50,
            seed: 0,
            val_fraction: 0.1,
            no_mask: false,
            no_film: false,
            no_scale_aug: false,
            no_shift_aug: false,
            no_smooth_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(Error::config("l2_coeff must be non-negative"));
        }
        Ok(())
    }

    /// Apply the ablation flags to the model and augmentation settings.
    pub fn ablate(&self, model: &ModelConfig, augment: &AugmentConfig) -> (ModelConfig, AugmentConfig) {
        let mut model = model.clone();
        let mut augment = augment.clone();
        model.use_mask &= !self.no_mask;
        model.use_film &= !self.no_film;
        if self.no_smooth_loss {
            model.lambda_smooth = 0.0;
        }
        augment.scale_enabled &= !self.no_scale_aug;
        augment.shift_enabled &= !self.no_shift_aug;
        (model, augment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    LeaveOneUserOut,
    LeaveOneMotionOut,
    Random,
}

/// Which items form the test set. For `Random`, `held_out` is the test
/// fraction and `seed` drives the draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub held_out: String,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn louo(user: impl Into<String>) -> Self {
        Self {
            mode: SplitMode::LeaveOneUserOut,
            held_out: user.into(),
            seed: 0,
        }
    }

    pub fn lomo(motion: impl Into<String>) -> Self {
        Self {
            mode: SplitMode::LeaveOneMotionOut,
            held_out: motion.into(),
            seed: 0,
        }
    }

    /// Parse `louo:<user>`, `lomo:<motion>` or `random:<fraction>`.
    pub fn parse(text: &str) -> Result<Self> {
        let (mode, id) = text
            .split_once(':')
            .ok_or_else(|| Error::config(format!("split `{text}` is not <mode>:<id>")))?;
        let mode = match mode {
            "louo" => SplitMode::LeaveOneUserOut,
            "lomo" => SplitMode::LeaveOneMotionOut,
            "random" => SplitMode::Random,
            other => return Err(Error::config(format!("unknown split mode `{other}`"))),
        };
        Ok(Self {
            mode,
            held_out: id.to_string(),
            seed: 0,
        })
    }
}

/// Partition items into `(train, test)`. The two parts are disjoint and
/// together hold every item, in input order.
pub fn split<T: Labeled + Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let test_mask: Vec<bool> = match spec.mode {
        SplitMode::LeaveOneUserOut | SplitMode::LeaveOneMotionOut => {
            let key = |t: &T| -> String {
                if spec.mode == SplitMode::LeaveOneUserOut {
                    t.user_id().to_string()
                } else {
                    t.motion_label().to_string()
                }
            };
            let mask: Vec<bool> = items.iter().map(|t| key(t) == spec.held_out).collect();
            if !mask.iter().any(|&m| m) {
                return Err(Error::config(format!("held-out id `{}` not in dataset", spec.held_out)));
            }
            mask
        }
        SplitMode::Random => {
            let frac: f64 = spec
                .held_out
                .parse()
                .map_err(|_| Error::config(format!("random split needs a fraction, got `{}`", spec.held_out)))?;
            if !(frac > 0.0 && frac < 1.0) {
                return Err(Error::config("random split fraction must lie in (0, 1)"));
            }
            let n_test = ((items.len() as f64 * frac).round() as usize).clamp(1, items.len().max(1));
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let mut mask = vec![false; items.len()];
            for &i in &order[..n_test.min(items.len())] {
                mask[i] = true;
            }
            mask
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (item, is_test) in items.iter().zip(test_mask) {
        if is_test {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

/// Tag every window with `origin`.
pub fn assign_origin(windows: &mut [TrainingWindow], origin: Origin) {
    for w in windows {
        w.origin = origin;
    }
}

/// Adam state for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams<f32>,
    v: ModelParams<f32>,
    step: i32,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One update of `params` from raw loss gradients `grads`.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr = cfg.lr as f32;
        let eps = cfg.eps as f32;
        let l2 = cfg.l2_coeff as f32;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        let gs = grads.tensors();
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(&gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            let decay = if p.kind == ParamKind::Weight { l2 } else { 0.0 };
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(&mut m.value)
                .and(&mut v.value)
                .for_each(|theta, &grad, mom, vel| {
                    *mom = b1 * *mom + (1.0 - b1) * grad;
                    *vel = b2 * *vel + (1.0 - b2) * grad * grad;
                    let m_hat = *mom / c1;
                    let v_hat = *vel / c2;
                    *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * *theta);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the best epoch.
    pub params: ModelParams<f32>,
    /// Effective model configuration after ablation flags.
    pub model: ModelConfig,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
}

/// Split training windows into (train, validation) by whole recordings so
/// overlapping windows never straddle the two.
pub fn holdout_by_recording(windows: &[TrainingWindow], fraction: f64, seed: u64) -> (Vec<TrainingWindow>, Vec<TrainingWindow>) {
    let recordings: Vec<usize> = windows.iter().map(|w| w.recording).collect::<BTreeSet<_>>().into_iter().collect();
    let n_val = (recordings.len() as f64 * fraction).round() as usize;
    if fraction <= 0.0 || recordings.len() < 2 || n_val == 0 {
        return (windows.to_vec(), Vec::new());
    }
    let mut shuffled = recordings;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a1));
    let held: BTreeSet<usize> = shuffled[..n_val.min(shuffled.len() - 1)].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for w in windows {
        let mut w = w.clone();
        if held.contains(&w.recording) {
            w.origin = Origin::Validation;
            val.push(w);
        } else {
            train.push(w);
        }
    }
    (train, val)
}

/// Mean loss over `windows` in evaluation mode.
pub fn evaluate_loss(params: &ModelParams<f32>, cfg: &ModelConfig, windows: &[TrainingWindow], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = Batch::<f32>::from_windows(chunk);
        let targets = Batch::<f32>::targets(chunk);
        let yhat = forward(params, cfg, &batch)?;
        let (loss, _) = batch_loss_and_grad(&yhat, &targets, cfg.lambda_smooth as f32)?;
        total += f64::from(loss) * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Train on `windows`, all of which must be tagged [`Origin::Train`].
///
/// A `val_fraction` slice of recordings is held in for checkpoint
/// selection; augmentation applies to the rest only. Parameters are
/// initialized from `train.seed`, which also drives shuffling, dropout and
/// augmentation.
pub fn fit(
    windows: &[TrainingWindow],
    model: &ModelConfig,
    augment: &AugmentConfig,
    train: &TrainConfig,
) -> Result<FitOutcome> {
    train.validate()?;
    if windows.is_empty() {
        return Err(Error::config("empty training set"));
    }
    if let Some(w) = windows.iter().find(|w| w.origin != Origin::Train) {
        return Err(Error::config(format!(
            "window from recording {} is tagged {:?} and cannot be trained on",
            w.recording, w.origin
        )));
    }
    let (mut model, augment) = train.ablate(model, augment);
    model.init_seed = train.seed;
    model.validate()?;
    if windows[0].len() != model.window {
        return Err(Error::config(format!(
            "windows have {} steps, model expects {}",
            windows[0].len(),
            model.window
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let (fit_windows, val_windows) = holdout_by_recording(windows, train.val_fraction, train.seed);
    let fit_windows = augment_dataset(&fit_windows, &augment, &mut rng)?;

    let mut params = ModelParams::<f32>::init(&model);
    let mut adam = Adam::new(&params);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut trace = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..fit_windows.len()).collect();
    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(train.batch_size) {
            let chunk: Vec<&TrainingWindow> = idx.iter().map(|&i| &fit_windows[i]).collect();
            debug_assert!(chunk.iter().all(|w| w.origin == Origin::Train));
            let batch = Batch::<f32>::from_windows(chunk.iter().copied());
            let targets: Array3<f32> = Batch::<f32>::targets(chunk.iter().copied());
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let (loss, grads) = match gradients(&params, &model, &batch, &targets, Some(&mut dropout_rng)) {
                Ok(v) => v,
                Err(Error::Numeric { .. }) => {
                    return Err(Error::Training {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            sum += f64::from(loss) * chunk.len() as f64;
            adam.step(&mut params, &grads, train);
        }
        let train_loss = sum / fit_windows.len() as f64;
        if !train_loss.is_finite() || params.first_non_finite().is_some() {
            return Err(Error::Training { epoch, loss: train_loss });
        }
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, &model, &val_windows, train.batch_size)?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Training { epoch, loss: score });
        }
        if score < best.0 {
            best = (score, params.clone(), epoch);
        }
        trace.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
    }
    if train.epochs == 0 {
        best.1 = params;
    }
    Ok(FitOutcome {
        params: best.1,
        model,
        trace,
        best_epoch: best.2,
        n_train_windows: fit_windows.len(),
        n_val_windows: val_windows.len(),
    })
}

/// Write the loss trace as `epoch,train_loss,val_loss`.
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for s in trace {
        let val = s.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
        out += &format!("{},{:.9},{}\n", s.epoch, s.train_loss, val);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Element-wise copy of every tensor, for trajectory comparisons.
pub fn snapshot(params: &ModelParams<f32>) -> Vec<ArrayD<f32>> {
    params.tensors().iter().map(|p| p.value.to_owned()).collect()
}
