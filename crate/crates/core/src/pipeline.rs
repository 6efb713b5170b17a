//! End-to-end experiment steps shared by the command line and the tests:
//! normalize recordings, split them, window the training part, fit, and
//! evaluate the held-out part.

use crate::config::{DataConfig, ExperimentConfig};
use crate::data::{normalize, window, Origin, SyncedRecording, TrainingWindow};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_predictor_rmse, EvalReport, ModelPredictor, RecordingPrediction};
use crate::train::{fit, split, FitOutcome, SplitSpec};

/// Normalize every recording.
pub fn normalize_all(recordings: &[SyncedRecording]) -> Result<Vec<SyncedRecording>> {
    recordings.iter().map(normalize).collect()
}

/// Training windows from normalized recordings, tagged with `origin`. The
/// recording index stored on each window is its position in `recordings`.
pub fn windows_for(recordings: &[SyncedRecording], data: &DataConfig, origin: Origin) -> Result<Vec<TrainingWindow>> {
    let mut out = Vec::new();
    for (i, rec) in recordings.iter().enumerate() {
        let mut ws = window(rec, data.window, data.train_stride, &data.bio_bounds, i)?;
        for w in &mut ws {
            w.origin = origin;
        }
        out.extend(ws);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub fit: FitOutcome,
    pub report: EvalReport,
    pub predictions: Vec<RecordingPrediction>,
    /// Mean-over-muscles RMSE of always predicting the training mean.
    pub baseline_rmse: f64,
}

/// Split normalized recordings, train on one side and evaluate on the other.
pub fn run_split(recordings: &[SyncedRecording], spec: &SplitSpec, cfg: &ExperimentConfig) -> Result<Experiment> {
    let (train_recs, test_recs) = split(recordings, spec)?;
    if train_recs.is_empty() {
        return Err(Error::config("split leaves no training recordings"));
    }
    let windows = windows_for(&train_recs, &cfg.data, Origin::Train)?;
    let fit = fit(&windows, &cfg.model, &cfg.augment, &cfg.train)?;
    let predictor = ModelPredictor::new(fit.model.clone(), fit.params.clone());
    let (report, predictions) = evaluate(&predictor, &test_recs, &cfg.data.bio_bounds)?;
    let baseline_rmse = mean_predictor_rmse(&train_recs, &test_recs)?;
    Ok(Experiment {
        fit,
        report,
        predictions,
        baseline_rmse,
    })
}
