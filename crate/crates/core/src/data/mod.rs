//! Recording and window types, synchronization, normalization and windowing.
//!
//! Pressure arrives at 20 Hz as 36 channels (18 per foot) in kilograms; sEMG
//! arrives at 500 Hz as 8 channels in microvolts. [`synchronize`] reduces the
//! sEMG stream onto the pressure clock, [`normalize`] maps both onto fixed
//! physical-range scales, and [`window`] cuts the result into model inputs.

mod io;

pub use io::{
    load_bio_json, load_emg_csv, load_manifest, load_pressure_csv, load_recording,
    read_emg_csv, read_pressure_csv, write_bio_json, write_emg_csv, write_manifest,
    write_pressure_csv, ManifestEntry,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS_PER_FOOT: usize = 18;
pub const N_CHANNELS: usize = 2 * CHANNELS_PER_FOOT;
pub const N_MUSCLES: usize = 8;
pub const BIO_DIM: usize = 5;

pub const MAX_PRESSURE_KG: f64 = 20.0;
pub const MAX_EMG_UV: f64 = 1000.0;

/// Nominal pressure frame spacing (20 Hz).
pub const FRAME_MS: i64 = 50;
/// sEMG sample spacing (500 Hz).
pub const EMG_SAMPLE_MS: i64 = 2;

/// Canonical muscle order used by every tensor, file and report.
pub const MUSCLE_NAMES: [&str; N_MUSCLES] = [
    "L-bicep", "R-bicep", "L-back", "R-back", "L-quad", "R-quad", "L-ham", "R-ham",
];

/// Left/right index pairs into [`MUSCLE_NAMES`].
pub const MUSCLE_PAIRS: [(usize, usize); 4] = [(0, 1), (2, 3), (4, 5), (6, 7)];

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_TRAIN_STRIDE: usize = 10;

/// One insole sample: 18 cells per foot, in kg.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFrame {
    pub t_ms: i64,
    pub left: [f64; CHANNELS_PER_FOOT],
    pub right: [f64; CHANNELS_PER_FOOT],
}

impl PressureFrame {
    pub fn from_channels(t_ms: i64, channels: &[f64; N_CHANNELS]) -> Self {
        let mut left = [0.0; CHANNELS_PER_FOOT];
        let mut right = [0.0; CHANNELS_PER_FOOT];
        left.copy_from_slice(&channels[..CHANNELS_PER_FOOT]);
        right.copy_from_slice(&channels[CHANNELS_PER_FOOT..]);
        Self { t_ms, left, right }
    }

    /// Left cells followed by right cells.
    pub fn channels(&self) -> [f64; N_CHANNELS] {
        let mut out = [0.0; N_CHANNELS];
        out[..CHANNELS_PER_FOOT].copy_from_slice(&self.left);
        out[CHANNELS_PER_FOOT..].copy_from_slice(&self.right);
        out
    }
}

/// One sEMG sample in µV, channels in [`MUSCLE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgSample {
    pub t_ms: i64,
    pub channels: [f64; N_MUSCLES],
}

/// The five user attributes fed to the conditioning network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BioProfile {
    pub weight_kg: f64,
    pub height_cm: f64,
    pub age_years: f64,
    pub shoe_size_eu: f64,
    pub gender_code: f64,
}

/// Min-max bounds used to map a [`BioProfile`] onto `[0, 1]^5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BioBounds {
    pub weight_kg: (f64, f64),
    pub height_cm: (f64, f64),
    pub age_years: (f64, f64),
    pub shoe_size_eu: (f64, f64),
}

impl Default for BioBounds {
    fn default() -> Self {
        Self {
            weight_kg: (39.0, 83.0),
            height_cm: (150.0, 186.0),
            age_years: (22.0, 37.0),
            shoe_size_eu: (35.0, 47.0),
        }
    }
}

fn unit_interval(v: f64, (lo, hi): (f64, f64)) -> f64 {
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

impl BioProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("weight_kg", self.weight_kg),
            ("height_cm", self.height_cm),
            ("age_years", self.age_years),
            ("shoe_size_eu", self.shoe_size_eu),
            ("gender_code", self.gender_code),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Format(format!("bio field {name} is not finite")));
            }
        }
        if self.gender_code != 0.0 && self.gender_code != 1.0 {
            return Err(Error::Format(format!(
                "gender_code must be 0 or 1, got {}",
                self.gender_code
            )));
        }
        Ok(())
    }

    /// Clamped min-max normalization; gender passes through as 0/1.
    pub fn normalized(&self, bounds: &BioBounds) -> [f64; BIO_DIM] {
        [
            unit_interval(self.weight_kg, bounds.weight_kg),
            unit_interval(self.height_cm, bounds.height_cm),
            unit_interval(self.age_years, bounds.age_years),
            unit_interval(self.shoe_size_eu, bounds.shoe_size_eu),
            self.gender_code.clamp(0.0, 1.0),
        ]
    }
}

/// Identifies one recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub user_id: String,
    pub motion_label: String,
    pub bio: BioProfile,
}

/// One synchronized 20 Hz step.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t_ms: i64,
    pub pressure: [f64; N_CHANNELS],
    pub activation: [f64; N_MUSCLES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// kg and µV.
    Physical,
    /// pressure in [-1, 1], activation in [0, 1].
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedRecording {
    pub frames: Vec<Frame>,
    pub meta: RecordingMeta,
    pub units: Units,
}

impl SyncedRecording {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Activations as an `8 × T` matrix.
    pub fn activation_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((N_MUSCLES, self.frames.len()), |(m, t)| {
            self.frames[t].activation[m]
        })
    }

    /// Pressure as a `36 × T` matrix.
    pub fn pressure_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((N_CHANNELS, self.frames.len()), |(c, t)| {
            self.frames[t].pressure[c]
        })
    }
}

/// Where a window is allowed to flow. Only `Train` windows may reach a
/// gradient computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Unassigned,
    Train,
    Validation,
    Test,
}

/// Model input/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    /// `36 × W` normalized pressure.
    pub x: Array2<f64>,
    /// `8 × W` normalized activation.
    pub y: Array2<f64>,
    pub user_id: String,
    pub motion_label: String,
    pub bio_norm: [f64; BIO_DIM],
    /// Index of the source recording within its dataset.
    pub recording: usize,
    /// Frame index of the first step in the source recording.
    pub start: usize,
    pub origin: Origin,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// Anything that can be partitioned by user or by motion.
pub trait Labeled {
    fn user_id(&self) -> &str;
    fn motion_label(&self) -> &str;
}

impl Labeled for TrainingWindow {
    fn user_id(&self) -> &str {
        &self.user_id
    }
    fn motion_label(&self) -> &str {
        &self.motion_label
    }
}

impl Labeled for SyncedRecording {
    fn user_id(&self) -> &str {
        &self.meta.user_id
    }
    fn motion_label(&self) -> &str {
        &self.meta.motion_label
    }
}

pub fn normalize_pressure(kg: f64) -> f64 {
    2.0 * (kg / MAX_PRESSURE_KG) - 1.0
}

pub fn denormalize_pressure(v: f64) -> f64 {
    (v + 1.0) * 0.5 * MAX_PRESSURE_KG
}

pub fn normalize_activation(uv: f64) -> f64 {
    uv / MAX_EMG_UV
}

pub fn denormalize_activation(v: f64) -> f64 {
    v * MAX_EMG_UV
}

pub(crate) fn check_range(
    value: f64,
    min: f64,
    max: f64,
    row: usize,
    column: impl FnOnce() -> String,
) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::Range {
            row,
            column: column(),
            value,
            min,
            max,
        })
    }
}

pub fn pressure_column_name(c: usize) -> String {
    if c < CHANNELS_PER_FOOT {
        format!("L{c:02}")
    } else {
        format!("R{:02}", c - CHANNELS_PER_FOOT)
    }
}

pub fn emg_column_name(m: usize) -> String {
    format!("m{m}")
}

/// Reduce a 500 Hz sEMG stream onto the pressure clock.
///
/// Each pressure frame at `t` takes the mean of all sEMG samples with
/// `t_ms ∈ [t − 25, t + 25)`. Frames with no sEMG sample in that interval are
/// dropped, which also restricts the output to the overlap of both streams.
pub fn synchronize(
    pressure: &[PressureFrame],
    emg: &[EmgSample],
    meta: RecordingMeta,
) -> Result<SyncedRecording> {
    if pressure.is_empty() || emg.is_empty() {
        return Err(Error::Alignment("empty input stream".into()));
    }
    for (i, pair) in emg.windows(2).enumerate() {
        if pair[1].t_ms <= pair[0].t_ms {
            return Err(Error::Sequencing {
                row: i + 2,
                t_ms: pair[1].t_ms,
            });
        }
    }
    for (i, pair) in pressure.windows(2).enumerate() {
        if pair[1].t_ms <= pair[0].t_ms {
            return Err(Error::Sequencing {
                row: i + 2,
                t_ms: pair[1].t_ms,
            });
        }
    }

    let half = FRAME_MS / 2;
    let mut frames = Vec::with_capacity(pressure.len());
    let mut lo = 0usize;
    for p in pressure {
        let start = p.t_ms - half;
        let end = p.t_ms + half;
        while lo < emg.len() && emg[lo].t_ms < start {
            lo += 1;
        }
        let mut hi = lo;
        let mut sum = [0.0; N_MUSCLES];
        while hi < emg.len() && emg[hi].t_ms < end {
            for (s, v) in sum.iter_mut().zip(emg[hi].channels.iter()) {
                *s += v;
            }
            hi += 1;
        }
        let n = hi - lo;
        if n == 0 {
            continue;
        }
        let activation = sum.map(|s| s / n as f64);
        frames.push(Frame {
            t_ms: p.t_ms,
            pressure: p.channels(),
            activation,
        });
    }
    if frames.is_empty() {
        return Err(Error::Alignment(
            "pressure and sEMG streams do not overlap".into(),
        ));
    }
    Ok(SyncedRecording {
        frames,
        meta,
        units: Units::Physical,
    })
}

/// Map physical units onto the model scales: pressure `kg → 2·kg/20 − 1`,
/// activation `µV → µV/1000`.
pub fn normalize(rec: &SyncedRecording) -> Result<SyncedRecording> {
    if rec.units == Units::Normalized {
        return Err(Error::config("recording is already normalized"));
    }
    let mut frames = Vec::with_capacity(rec.frames.len());
    // rows are 1-based, matching the CSV readers
    for (row, f) in rec.frames.iter().enumerate() {
        let mut pressure = [0.0; N_CHANNELS];
        for (c, (&kg, out)) in f.pressure.iter().zip(pressure.iter_mut()).enumerate() {
            check_range(kg, 0.0, MAX_PRESSURE_KG, row + 1, || pressure_column_name(c))?;
            *out = normalize_pressure(kg);
        }
        let mut activation = [0.0; N_MUSCLES];
        for (m, (&uv, out)) in f.activation.iter().zip(activation.iter_mut()).enumerate() {
            check_range(uv, 0.0, MAX_EMG_UV, row + 1, || emg_column_name(m))?;
            *out = normalize_activation(uv);
        }
        frames.push(Frame {
            t_ms: f.t_ms,
            pressure,
            activation,
        });
    }
    Ok(SyncedRecording {
        frames,
        meta: rec.meta.clone(),
        units: Units::Normalized,
    })
}

/// Inverse of [`normalize`].
pub fn denormalize(rec: &SyncedRecording) -> Result<SyncedRecording> {
    if rec.units == Units::Physical {
        return Err(Error::config("recording is already in physical units"));
    }
    let frames = rec
        .frames
        .iter()
        .map(|f| Frame {
            t_ms: f.t_ms,
            pressure: f.pressure.map(denormalize_pressure),
            activation: f.activation.map(denormalize_activation),
        })
        .collect();
    Ok(SyncedRecording {
        frames,
        meta: rec.meta.clone(),
        units: Units::Physical,
    })
}

/// Cut a normalized recording into full windows starting at `0, stride, …`.
///
/// A recording shorter than `width` yields no windows.
pub fn window(
    rec: &SyncedRecording,
    width: usize,
    stride: usize,
    bio_bounds: &BioBounds,
    recording: usize,
) -> Result<Vec<TrainingWindow>> {
    if width < 2 {
        return Err(Error::config(format!("window width {width} < 2")));
    }
    if stride < 1 {
        return Err(Error::config("window stride must be at least 1"));
    }
    if rec.units != Units::Normalized {
        return Err(Error::config("window() needs a normalized recording"));
    }
    let n = rec.frames.len();
    if n < width {
        return Ok(Vec::new());
    }
    let bio_norm = rec.meta.bio.normalized(bio_bounds);
    let out = (0..=n - width)
        .step_by(stride)
        .map(|start| {
            let span = &rec.frames[start..start + width];
            TrainingWindow {
                x: Array2::from_shape_fn((N_CHANNELS, width), |(c, t)| span[t].pressure[c]),
                y: Array2::from_shape_fn((N_MUSCLES, width), |(m, t)| span[t].activation[m]),
                user_id: rec.meta.user_id.clone(),
                motion_label: rec.meta.motion_label.clone(),
                bio_norm,
                recording,
                start,
                origin: Origin::Unassigned,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> RecordingMeta {
        RecordingMeta {
            user_id: "u0".into(),
            motion_label: "Squat".into(),
            bio: BioProfile {
                weight_kg: 60.0,
                height_cm: 170.0,
                age_years: 30.0,
                shoe_size_eu: 41.0,
                gender_code: 1.0,
            },
        }
    }

    fn pframe(t_ms: i64, v: f64) -> PressureFrame {
        PressureFrame {
            t_ms,
            left: [v; CHANNELS_PER_FOOT],
            right: [v; CHANNELS_PER_FOOT],
        }
    }

    fn emg_const(from: i64, to: i64, v: f64) -> Vec<EmgSample> {
        (from..to)
            .step_by(EMG_SAMPLE_MS as usize)
            .map(|t_ms| EmgSample {
                t_ms,
                channels: [v; N_MUSCLES],
            })
            .collect()
    }

    fn synthetic_recording(n: usize) -> SyncedRecording {
        SyncedRecording {
            frames: (0..n)
                .map(|i| Frame {
                    t_ms: i as i64 * FRAME_MS,
                    pressure: [(i % 20) as f64; N_CHANNELS],
                    activation: [(i * 10 % 1000) as f64; N_MUSCLES],
                })
                .collect(),
            meta: meta(),
            units: Units::Physical,
        }
    }

    #[test]
    fn constant_emg_gives_constant_activation() {
        let pressure: Vec<_> = (0..20).map(|i| pframe(i * FRAME_MS, 1.0)).collect();
        let emg = emg_const(0, 1000, 100.0);
        let rec = synchronize(&pressure, &emg, meta()).unwrap();
        assert_eq!(rec.len(), 20);
        for f in &rec.frames {
            assert_eq!(f.activation, [100.0; N_MUSCLES]);
        }
    }

    #[test]
    fn block_mean_of_ramp() {
        // 25 samples inside [0, 50) valued 0..24 on channel 0; the frame at
        // t=0 sees [-25, 25), so place them so that exactly these fall in.
        let emg: Vec<_> = (0..25)
            .map(|i| {
                let mut channels = [0.0; N_MUSCLES];
                channels[0] = i as f64;
                EmgSample {
                    t_ms: -24 + 2 * i,
                    channels,
                }
            })
            .collect();
        let rec = synchronize(&[pframe(0, 0.0)], &emg, meta()).unwrap();
        assert_eq!(rec.frames[0].activation[0], 12.0);
    }

    #[test]
    fn output_restricted_to_overlap() {
        let pressure: Vec<_> = (0..=20).map(|i| pframe(i * FRAME_MS, 0.0)).collect();
        let emg = emg_const(500, 2001, 5.0);
        let rec = synchronize(&pressure, &emg, meta()).unwrap();
        assert_eq!(rec.frames.first().unwrap().t_ms, 500);
        assert_eq!(rec.frames.last().unwrap().t_ms, 1000);
        assert!(rec.frames.iter().all(|f| pressure.iter().any(|p| p.t_ms == f.t_ms)));
    }

    #[test]
    fn disjoint_streams_fail_alignment() {
        let pressure: Vec<_> = (0..5).map(|i| pframe(i * FRAME_MS, 0.0)).collect();
        let emg = emg_const(5000, 6000, 5.0);
        assert!(matches!(
            synchronize(&pressure, &emg, meta()),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            synchronize(&[], &emg, meta()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_pressure(0.0), -1.0);
        assert_eq!(normalize_pressure(20.0), 1.0);
        assert_eq!(normalize_pressure(10.0), 0.0);
        assert_eq!(normalize_activation(500.0), 0.5);
    }

    #[test]
    fn normalize_round_trip() {
        let rec = synthetic_recording(40);
        let back = denormalize(&normalize(&rec).unwrap()).unwrap();
        for (a, b) in rec.frames.iter().zip(&back.frames) {
            for (p, q) in a.pressure.iter().zip(&b.pressure) {
                assert!((p - q).abs() < 1e-9);
            }
            for (p, q) in a.activation.iter().zip(&b.activation) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let mut rec = synthetic_recording(3);
        rec.frames[1].pressure[21] = 20.5;
        match normalize(&rec) {
            Err(Error::Range { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "R03");
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn window_counts() {
        let bounds = BioBounds::default();
        let rec = |n| normalize(&synthetic_recording(n)).unwrap();
        assert_eq!(window(&rec(60), 20, 20, &bounds, 0).unwrap().len(), 3);
        assert_eq!(window(&rec(60), 20, 10, &bounds, 0).unwrap().len(), 5);
        assert_eq!(window(&rec(19), 20, 1, &bounds, 0).unwrap().len(), 0);
        assert!(window(&rec(19), 1, 1, &bounds, 0).is_err());
        assert!(window(&rec(19), 2, 0, &bounds, 0).is_err());
    }

    #[test]
    fn window_contents_and_metadata() {
        let rec = normalize(&synthetic_recording(30)).unwrap();
        let ws = window(&rec, 20, 10, &BioBounds::default(), 7).unwrap();
        let w = &ws[1];
        assert_eq!(w.start, 10);
        assert_eq!(w.recording, 7);
        assert_eq!(w.x.dim(), (N_CHANNELS, 20));
        assert_eq!(w.y.dim(), (N_MUSCLES, 20));
        assert_eq!(w.x[[5, 3]], rec.frames[13].pressure[5]);
        assert_eq!(w.y[[2, 0]], rec.frames[10].activation[2]);
        assert_eq!(w.user_id, "u0");
        assert_eq!(w.motion_label, "Squat");
        assert_eq!(w.origin, Origin::Unassigned);
    }

    #[test]
    fn bio_normalization_clamps() {
        let b = BioProfile {
            weight_kg: 100.0,
            height_cm: 150.0,
            age_years: 29.5,
            shoe_size_eu: 30.0,
            gender_code: 0.0,
        };
        let n = b.normalized(&BioBounds::default());
        assert_eq!(n, [1.0, 0.0, 0.5, 0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn window_count_formula(n in 0usize..200, w in 2usize..30, stride in 1usize..25) {
            let rec = normalize(&synthetic_recording(n)).unwrap();
            let got = window(&rec, w, stride, &BioBounds::default(), 0).unwrap().len();
            let expected = if n >= w { (n - w) / stride + 1 } else { 0 };
            proptest::prop_assert_eq!(got, expected);
        }

        #[test]
        fn pressure_map_is_bijective(kg in 0.0f64..=20.0) {
            let v = normalize_pressure(kg);
            proptest::prop_assert!((-1.0..=1.0).contains(&v));
            proptest::prop_assert!((denormalize_pressure(v) - kg).abs() < 1e-9);
        }
    }
}
