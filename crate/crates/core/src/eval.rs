//! Error metrics, per-frame prediction assembly, evaluation reports and the
//! left/right imbalance score.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{SyncedRecording, Units, MUSCLE_PAIRS, N_CHANNELS, N_MUSCLES};
use crate::error::{Error, Result};
use crate::model::{forward, Batch, ModelConfig, ModelParams};

/// Pair sums at or below this level count as relaxed and score 0.
pub const IMBALANCE_EPS: f64 = 1e-3;

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::config(format!(
            "series lengths differ: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::config("empty series"));
    }
    Ok(())
}

/// Root mean squared error of two equal-length series.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Sample Pearson correlation; `None` when either series has zero variance.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<Option<f64>> {
    check_lengths(y, yhat)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Mean over time steps and the 4 left/right pairs of `|L − R| / (L + R)`,
/// with relaxed pairs (`L + R ≤ ε`) contributing 0. Input is `8 × T`.
pub fn imbalance_score(a: ArrayView2<f64>) -> Result<f64> {
    let (m, t_len) = a.dim();
    if m != N_MUSCLES || t_len == 0 {
        return Err(Error::config(format!("imbalance needs 8 × T with T >= 1, got {m} × {t_len}")));
    }
    let mut total = 0.0;
    for t in 0..t_len {
        for &(l, r) in &MUSCLE_PAIRS {
            let (lv, rv) = (a[[l, t]], a[[r, t]]);
            for (idx, v) in [(l, lv), (r, rv)] {
                if !(v >= 0.0) {
                    return Err(Error::Range {
                        row: t + 1,
                        column: crate::data::emg_column_name(idx),
                        value: v,
                        min: 0.0,
                        max: f64::INFINITY,
                    });
                }
            }
            let sum = lv + rv;
            if sum > IMBALANCE_EPS {
                total += (lv - rv).abs() / sum;
            }
        }
    }
    Ok(total / (t_len * MUSCLE_PAIRS.len()) as f64)
}

/// Produces per-frame activation estimates for a normalized recording.
pub trait Predictor {
    /// Window length the predictor consumes.
    fn window(&self) -> usize;

    /// `8 × T` estimates for a recording of at least [`Predictor::window`]
    /// frames.
    fn predict(&self, rec: &SyncedRecording, bio_norm: [f64; crate::data::BIO_DIM]) -> Result<Array2<f64>>;
}

/// Returns the recording's own targets.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth {
    pub window: usize,
}

impl Predictor for GroundTruth {
    fn window(&self) -> usize {
        self.window
    }

    fn predict(&self, rec: &SyncedRecording, _bio: [f64; crate::data::BIO_DIM]) -> Result<Array2<f64>> {
        Ok(rec.activation_matrix())
    }
}

/// A trained network evaluated in `f32`.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    /// Windows per forward call.
    pub batch_size: usize,
}

impl ModelPredictor {
    pub fn new(config: ModelConfig, params: ModelParams<f32>) -> Self {
        Self {
            config,
            params,
            batch_size: 256,
        }
    }

    /// Forward pass over the stride-1 windows starting at `starts`.
    pub fn forward_windows(
        &self,
        x: &Array2<f64>,
        bio_norm: [f64; crate::data::BIO_DIM],
        starts: &[usize],
    ) -> Result<Array3<f32>> {
        let w = self.config.window;
        let batch = Batch {
            x: Array3::from_shape_fn((starts.len(), N_CHANNELS, w), |(b, c, t)| x[[c, starts[b] + t]] as f32),
            bio: Array2::from_shape_fn((starts.len(), bio_norm.len()), |(_, k)| bio_norm[k] as f32),
        };
        forward(&self.params, &self.config, &batch)
    }
}

/// Lay out window outputs on the frame clock: frame `t ≥ W−1` takes the last
/// step of the window ending at `t`; frames `0..W−1` take the leading steps of
/// the first window. `last_steps[j]` is the final step of window `j`.
pub fn assemble_frames(first_window: ArrayView2<f64>, last_steps: ArrayView2<f64>) -> Array2<f64> {
    let (m, w) = first_window.dim();
    let n_windows = last_steps.ncols();
    let mut out = Array2::zeros((m, w - 1 + n_windows));
    out.slice_mut(ndarray::s![.., ..w - 1])
        .assign(&first_window.slice(ndarray::s![.., ..w - 1]));
    out.slice_mut(ndarray::s![.., w - 1..]).assign(&last_steps);
    out
}

impl Predictor for ModelPredictor {
    fn window(&self) -> usize {
        self.config.window
    }

    fn predict(&self, rec: &SyncedRecording, bio_norm: [f64; crate::data::BIO_DIM]) -> Result<Array2<f64>> {
        let w = self.config.window;
        let t_len = rec.len();
        if t_len < w {
            return Err(Error::config(format!("recording has {t_len} frames, window is {w}")));
        }
        let x = rec.pressure_matrix();
        let n_windows = t_len - w + 1;
        let mut last = Array2::zeros((N_MUSCLES, n_windows));
        let mut first = Array2::zeros((N_MUSCLES, w));
        let starts: Vec<usize> = (0..n_windows).collect();
        for chunk in starts.chunks(self.batch_size.max(1)) {
            let yhat = self.forward_windows(&x, bio_norm, chunk)?;
            for (b, &start) in chunk.iter().enumerate() {
                if start == 0 {
                    first.assign(&yhat.index_axis(Axis(0), 0).mapv(f64::from));
                }
                for m in 0..N_MUSCLES {
                    last[[m, start]] = f64::from(yhat[[b, m, w - 1]]);
                }
            }
        }
        Ok(assemble_frames(first.view(), last.view()))
    }
}

/// Metrics of one group of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub rmse_per_muscle: Vec<f64>,
    pub rmse_mean: f64,
    pub pearson_per_muscle: Vec<Option<f64>>,
    /// Mean over the muscles whose correlation is defined.
    pub pearson_mean: Option<f64>,
    pub n_frames: usize,
}

impl GroupMetrics {
    /// Metrics over concatenated `8 × T` series.
    pub fn compute(y: ArrayView2<f64>, yhat: ArrayView2<f64>) -> Result<Self> {
        if y.dim() != yhat.dim() {
            return Err(Error::config(format!("{:?} targets vs {:?} predictions", y.dim(), yhat.dim())));
        }
        let mut rmse_per_muscle = Vec::with_capacity(y.nrows());
        let mut pearson_per_muscle = Vec::with_capacity(y.nrows());
        for (yr, pr) in y.rows().into_iter().zip(yhat.rows()) {
            let (yr, pr) = (yr.to_vec(), pr.to_vec());
            rmse_per_muscle.push(rmse(&yr, &pr)?);
            pearson_per_muscle.push(pearson(&yr, &pr)?);
        }
        let rmse_mean = rmse_per_muscle.iter().sum::<f64>() / rmse_per_muscle.len() as f64;
        let defined: Vec<f64> = pearson_per_muscle.iter().flatten().copied().collect();
        let pearson_mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(Self {
            rmse_per_muscle,
            rmse_mean,
            pearson_per_muscle,
            pearson_mean,
            n_frames: y.ncols(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_per_muscle: Vec<f64>,
    pub rmse_mean: f64,
    pub pearson_per_muscle: Vec<Option<f64>>,
    pub pearson_mean: Option<f64>,
    pub per_motion: BTreeMap<String, GroupMetrics>,
    pub per_user: BTreeMap<String, GroupMetrics>,
    /// Stride-1 windows evaluated.
    pub n_windows: usize,
    pub n_frames: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Targets and estimates for one recording, `8 × T` each.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPrediction {
    pub user_id: String,
    pub motion_label: String,
    pub t_ms: Vec<i64>,
    pub truth: Array2<f64>,
    pub estimate: Array2<f64>,
}

fn concat(parts: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("all parts are 8 rows")
}

/// Evaluate `predictor` on normalized test recordings. Recordings shorter
/// than the window are skipped.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    recordings: &[SyncedRecording],
    bio_bounds: &crate::data::BioBounds,
) -> Result<(EvalReport, Vec<RecordingPrediction>)> {
    let w = predictor.window();
    let mut preds = Vec::new();
    let mut n_windows = 0;
    for rec in recordings {
        if rec.units != Units::Normalized {
            return Err(Error::config("evaluate needs normalized recordings"));
        }
        if rec.len() < w {
            continue;
        }
        n_windows += rec.len() - w + 1;
        let estimate = predictor.predict(rec, rec.meta.bio.normalized(bio_bounds))?;
        preds.push(RecordingPrediction {
            user_id: rec.meta.user_id.clone(),
            motion_label: rec.meta.motion_label.clone(),
            t_ms: rec.frames.iter().map(|f| f.t_ms).collect(),
            truth: rec.activation_matrix(),
            estimate,
        });
    }
    if preds.is_empty() {
        return Err(Error::config("empty test set"));
    }
    let group = |keep: &dyn Fn(&RecordingPrediction) -> bool| -> Result<GroupMetrics> {
        let sel: Vec<_> = preds.iter().filter(|p| keep(p)).collect();
        let y = concat(&sel.iter().map(|p| &p.truth).collect::<Vec<_>>());
        let yhat = concat(&sel.iter().map(|p| &p.estimate).collect::<Vec<_>>());
        GroupMetrics::compute(y.view(), yhat.view())
    };
    let all = group(&|_| true)?;
    let mut per_motion = BTreeMap::new();
    let mut per_user = BTreeMap::new();
    for p in &preds {
        if !per_motion.contains_key(&p.motion_label) {
            let label = p.motion_label.clone();
            per_motion.insert(label.clone(), group(&|q| q.motion_label == label)?);
        }
        if !per_user.contains_key(&p.user_id) {
            let user = p.user_id.clone();
            per_user.insert(user.clone(), group(&|q| q.user_id == user)?);
        }
    }
    let report = EvalReport {
        rmse_per_muscle: all.rmse_per_muscle,
        rmse_mean: all.rmse_mean,
        pearson_per_muscle: all.pearson_per_muscle,
        pearson_mean: all.pearson_mean,
        per_motion,
        per_user,
        n_windows,
        n_frames: all.n_frames,
    };
    Ok((report, preds))
}

/// Mean RMSE over muscles of the predictor that always outputs the training
/// mean, in closed form: `sqrt(var_test + (mean_test − mean_train)²)` per
/// muscle with population variance.
pub fn mean_predictor_rmse(train: &[SyncedRecording], test: &[SyncedRecording]) -> Result<f64> {
    let stats = |recs: &[SyncedRecording]| -> Result<(Vec<f64>, Vec<f64>)> {
        let n: usize = recs.iter().map(|r| r.len()).sum();
        if n == 0 {
            return Err(Error::config("no frames"));
        }
        let mut mean = vec![0.0; N_MUSCLES];
        for f in recs.iter().flat_map(|r| &r.frames) {
            for m in 0..N_MUSCLES {
                mean[m] += f.activation[m];
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; N_MUSCLES];
        for f in recs.iter().flat_map(|r| &r.frames) {
            for m in 0..N_MUSCLES {
                var[m] += (f.activation[m] - mean[m]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        Ok((mean, var))
    };
    let (train_mean, _) = stats(train)?;
    let (test_mean, test_var) = stats(test)?;
    let total: f64 = (0..N_MUSCLES)
        .map(|m| (test_var[m] + (test_mean[m] - train_mean[m]).powi(2)).sqrt())
        .sum();
    Ok(total / N_MUSCLES as f64)
}

/// Write `t_ms,gt0..gt7,pred0..pred7` rows for the given recordings.
pub fn write_prediction_dump(path: impl AsRef<Path>, preds: &[RecordingPrediction]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("t_ms");
    for m in 0..N_MUSCLES {
        out += &format!(",gt{m}");
    }
    for m in 0..N_MUSCLES {
        out += &format!(",pred{m}");
    }
    out.push('\n');
    for p in preds {
        for (t, &t_ms) in p.t_ms.iter().enumerate() {
            out += &t_ms.to_string();
            for m in 0..N_MUSCLES {
                out += &format!(",{:.6}", p.truth[[m, t]]);
            }
            for m in 0..N_MUSCLES {
                out += &format!(",{:.6}", p.estimate[[m, t]]);
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write estimates as `t_ms,pred0..pred7`.
pub fn write_predictions(path: impl AsRef<Path>, rows: &[(i64, [f64; N_MUSCLES])]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("t_ms");
    for m in 0..N_MUSCLES {
        out += &format!(",pred{m}");
    }
    out.push('\n');
    for (t_ms, v) in rows {
        out += &t_ms.to_string();
        for x in v {
            out += &format!(",{x:.6}");
        }
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read the `pred0..pred7` columns of a prediction file (other columns are
/// ignored) as an `8 × T` matrix.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let cols: Vec<usize> = (0..N_MUSCLES)
        .map(|m| {
            let name = format!("pred{m}");
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Format(format!("missing column {name}")))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        for (m, &c) in cols.iter().enumerate() {
            let v: f64 = rec
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("row {}: unreadable pred{m}", row + 1)))?;
            values.push(v);
        }
    }
    let t_len = values.len() / N_MUSCLES;
    let by_row = Array2::from_shape_vec((t_len, N_MUSCLES), values).expect("whole rows");
    Ok(by_row.reversed_axes().as_standard_layout().to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 0.0], &[0.025, 0.025]).unwrap() - 0.025).abs() < 1e-15);
        assert!(rmse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0];
        let lin: Vec<f64> = y.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&y, &lin).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&y, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), None);
    }

    #[test]
    fn imbalance_examples() {
        let sym = Array2::from_shape_fn((8, 5), |(m, t)| 0.1 * (m / 2 + t) as f64);
        assert_eq!(imbalance_score(sym.view()).unwrap(), 0.0);
        let mut one = Array2::zeros((8, 1));
        one[[0, 0]] = 1.0;
        assert_eq!(imbalance_score(one.view()).unwrap(), 0.25);
        one[[3, 0]] = -0.1;
        assert!(matches!(imbalance_score(one.view()), Err(Error::Range { .. })));
    }

    #[test]
    fn frame_assembly_uses_leading_steps_then_last_steps() {
        let first = array![[1.0, 2.0, 3.0]];
        let last = array![[3.0, 4.0, 5.0]];
        assert_eq!(assemble_frames(first.view(), last.view()), array![[1.0, 2.0, 3.0, 4.0, 5.0]]);
    }

    #[test]
    fn report_means_are_muscle_averages() {
        let y = Array2::from_shape_fn((8, 30), |(m, t)| ((m * 7 + t * 3) % 11) as f64 / 11.0);
        let p = Array2::from_shape_fn((8, 30), |(m, t)| ((m * 5 + t * 2) % 13) as f64 / 13.0);
        let g = GroupMetrics::compute(y.view(), p.view()).unwrap();
        let mean = g.rmse_per_muscle.iter().sum::<f64>() / 8.0;
        assert!((g.rmse_mean - mean).abs() < 1e-12);
        let pm = g.pearson_per_muscle.iter().map(|v| v.unwrap()).sum::<f64>() / 8.0;
        assert!((g.pearson_mean.unwrap() - pm).abs() < 1e-12);
        assert!(g.pearson_per_muscle.iter().all(|v| (-1.0..=1.0).contains(&v.unwrap())));
    }

    #[test]
    fn prediction_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let rows = vec![(0, [0.5; 8]), (50, [0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.125])];
        write_predictions(&path, &rows).unwrap();
        let a = read_predictions(&path).unwrap();
        assert_eq!(a.dim(), (8, 2));
        assert_eq!(a[[7, 1]], 0.125);
        assert_eq!(a[[0, 0]], 0.5);
    }

    proptest! {
        #[test]
        fn rmse_is_permutation_invariant(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40),
            rot in 0usize..40,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let k = rot % y.len();
            let (mut yr, mut pr) = (y.clone(), p.clone());
            yr.rotate_left(k);
            pr.rotate_left(k);
            prop_assert!((rmse(&y, &p).unwrap() - rmse(&yr, &pr).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn imbalance_is_scale_invariant_and_bounded(
            vals in proptest::collection::vec(0.0f64..1.0, 8 * 6),
            k in 0.1f64..10.0,
        ) {
            let a = Array2::from_shape_vec((8, 6), vals).unwrap();
            let s = imbalance_score(a.view()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            // the relaxed floor is absolute, so compare only when no pair
            // sum sits near it under either scale
            let near_floor = a.columns().into_iter().any(|c| {
                MUSCLE_PAIRS.iter().any(|&(l, r)| {
                    let sum = c[l] + c[r];
                    sum <= IMBALANCE_EPS * 10.0 || sum * k <= IMBALANCE_EPS * 10.0
                })
            });
            if !near_floor {
                let scaled = a.mapv(|v| v * k);
                prop_assert!((imbalance_score(scaled.view()).unwrap() - s).abs() < 1e-12);
            }
        }

        #[test]
        fn fully_one_sided_pairs_score_one(
            vals in proptest::collection::vec(0.01f64..1.0, 4 * 5),
            sides in proptest::collection::vec(any::<bool>(), 4 * 5),
        ) {
            let mut a = Array2::zeros((8, 5));
            for t in 0..5 {
                for p in 0..4 {
                    let idx = if sides[p * 5 + t] { 2 * p } else { 2 * p + 1 };
                    a[[idx, t]] = vals[p * 5 + t];
                }
            }
            prop_assert!((imbalance_score(a.view()).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
