//! Biomechanical generator of labelled synthetic recordings.
//!
//! The chain runs activation → effector displacement → centre of mass → centre
//! of pressure → per-sensor load. Each of the 8 muscle groups drives one
//! effector mass along a fixed direction, linearly in its activation. The
//! centre of pressure follows the inverted-pendulum relation
//! `CoP = CoM − M·h·ẍ / F_z` with the quasi-static vertical load `F_z = M·g`,
//! and the load is split between the feet by lateral CoP position and spread
//! over each foot's sensors by a Gaussian kernel.
//!
//! Joint torques are not modelled: activation moves the effectors directly.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    synchronize, write_bio_json, write_emg_csv, write_manifest, write_pressure_csv, BioProfile,
    EmgSample, ManifestEntry, PressureFrame, RecordingMeta, SyncedRecording, CHANNELS_PER_FOOT,
    EMG_SAMPLE_MS, FRAME_MS, MAX_EMG_UV, MAX_PRESSURE_KG, N_CHANNELS, N_MUSCLES,
};
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;
/// Pressure frame rate.
pub const FS_HZ: f64 = 20.0;

/// Body-mass fraction carried by each effector, in muscle order. Sums to 1.
pub const MASS_FRACTIONS: [f64; N_MUSCLES] = [0.05, 0.05, 0.25, 0.25, 0.10, 0.10, 0.10, 0.10];

/// One moving body segment. Coordinates are (anteroposterior, lateral,
/// vertical) in metres; negative lateral is the left side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effector {
    pub mass: f64,
    pub rest: [f64; 3],
    /// Displacement per unit activation, metres.
    pub gain: f64,
    /// Unit direction of displacement.
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub total_mass: f64,
    pub com_height: f64,
    pub effectors: Vec<Effector>,
    pub gravity: f64,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl BodyModel {
    /// Standard 8-effector body scaled to `bio`, with the centre-of-mass
    /// height at `com_height_ratio · height`.
    pub fn from_bio(bio: &BioProfile, com_height_ratio: f64) -> Self {
        let m = bio.weight_kg;
        // (rest, gain, direction) for the left-side member of each pair;
        // the right side mirrors the lateral coordinates
        let left: [([f64; 3], f64, [f64; 3]); 4] = [
            ([0.00, -0.20, 1.20], 0.30, [0.8, -0.3, 0.5]),
            ([0.00, -0.10, 1.10], 0.10, [-0.7, -0.4, 0.1]),
            ([0.03, -0.10, 0.50], 0.15, [0.7, -0.4, -0.5]),
            ([-0.03, -0.10, 0.50], 0.15, [-0.7, -0.4, 0.3]),
        ];
        let mut effectors = Vec::with_capacity(N_MUSCLES);
        for (pair, (rest, gain, dir)) in left.iter().enumerate() {
            for side in [1.0, -1.0] {
                let idx = effectors.len();
                debug_assert_eq!(idx / 2, pair);
                effectors.push(Effector {
                    mass: MASS_FRACTIONS[idx] * m,
                    rest: [rest[0], side * rest[1], rest[2]],
                    gain: *gain,
                    direction: unit([dir[0], side * dir[1], dir[2]]),
                });
            }
        }
        Self {
            total_mass: m,
            com_height: com_height_ratio * bio.height_cm / 100.0,
            effectors,
            gravity: GRAVITY,
        }
    }

    /// Multiply the gains of each left/right pair by `scale[pair]`.
    pub fn with_pair_gain_scale(mut self, scale: &[f64; 4]) -> Self {
        for (i, e) in self.effectors.iter_mut().enumerate() {
            e.gain *= scale[i / 2];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.effectors.iter().map(|e| e.mass).sum();
        if !(self.total_mass > 0.0) || (sum - self.total_mass).abs() > 1e-9 * self.total_mass {
            return Err(Error::config(format!(
                "effector masses sum to {sum}, body mass is {}",
                self.total_mass
            )));
        }
        if !(self.com_height > 0.0) {
            return Err(Error::config("centre-of-mass height must be positive"));
        }
        if self.effectors.iter().any(|e| !(e.gain >= 0.0) || !(e.mass >= 0.0)) {
            return Err(Error::config("effector masses and gains must be non-negative"));
        }
        Ok(())
    }
}

/// Sensor coordinates in each foot's local frame, metres, as
/// (anteroposterior, lateral) offsets from the foot centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub left: Vec<[f64; 2]>,
    pub right: Vec<[f64; 2]>,
    /// Centre-to-centre distance between the feet.
    pub foot_separation: f64,
    /// Kernel width of the load spread.
    pub sigma: f64,
    /// Footprint length and width.
    pub footprint: [f64; 2],
}

impl Default for SensorLayout {
    /// 3 columns × 6 rows per foot over a 0.30 × 0.11 m footprint.
    fn default() -> Self {
        let mut grid = Vec::with_capacity(CHANNELS_PER_FOOT);
        for row in 0..6 {
            for col in 0..3 {
                grid.push([0.125 - 0.05 * row as f64, -0.035 + 0.035 * col as f64]);
            }
        }
        Self {
            left: grid.clone(),
            right: grid,
            foot_separation: 0.20,
            sigma: 0.06,
            footprint: [0.30, 0.11],
        }
    }
}

impl SensorLayout {
    pub fn validate(&self) -> Result<()> {
        if self.left.len() != CHANNELS_PER_FOOT || self.right.len() != CHANNELS_PER_FOOT {
            return Err(Error::config(format!(
                "layout needs {CHANNELS_PER_FOOT} sensors per foot"
            )));
        }
        if !(self.sigma > 0.0) || !(self.foot_separation > 0.0) {
            return Err(Error::config("sigma and foot_separation must be positive"));
        }
        let [len, wid] = self.footprint;
        for c in self.left.iter().chain(&self.right) {
            if c[0].abs() > len / 2.0 || c[1].abs() > wid / 2.0 {
                return Err(Error::config(format!("sensor {c:?} lies outside the footprint")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layout: Self = serde_json::from_str(&text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Whether a CoP lies in the convex hull of the two footprints.
    pub fn supports(&self, cop: [f64; 2]) -> bool {
        let [len, wid] = self.footprint;
        cop[0].abs() <= len / 2.0 && cop[1].abs() <= self.foot_separation / 2.0 + wid / 2.0
    }
}

/// Sinusoidal activation pattern for one motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub name: String,
    pub amplitude: [f64; N_MUSCLES],
    pub frequency_hz: [f64; N_MUSCLES],
    pub phase: [f64; N_MUSCLES],
    pub duration_s: f64,
    /// Standard deviation of additive activation noise.
    pub noise_sigma: f64,
    /// Factor applied to right-side channels; `None` means symmetric.
    pub asymmetry: Option<f64>,
}

impl MotionSpec {
    fn paired(name: &str, amp: [f64; 4], freq: f64, phase_l: [f64; 4], phase_r: [f64; 4]) -> Self {
        let mut amplitude = [0.0; N_MUSCLES];
        let mut phase = [0.0; N_MUSCLES];
        for p in 0..4 {
            amplitude[2 * p] = amp[p];
            amplitude[2 * p + 1] = amp[p];
            phase[2 * p] = phase_l[p];
            phase[2 * p + 1] = phase_r[p];
        }
        Self {
            name: name.into(),
            amplitude,
            frequency_hz: [freq; N_MUSCLES],
            phase,
            duration_s: 60.0,
            noise_sigma: 0.01,
            asymmetry: None,
        }
    }

    /// Six motions covering upper-body, trunk, lower-body, whole-body and rest.
    pub fn library() -> Vec<Self> {
        vec![
            Self::paired("squat", [0.1, 0.5, 0.8, 0.5], 0.5, [0.0, 0.8, 0.0, 0.4], [0.0, 0.8, 0.0, 0.4]),
            Self::paired("bicep_curl", [0.9, 0.2, 0.1, 0.1], 0.8, [0.0, 1.5, 0.0, 0.0], [0.0, 1.5, 0.0, 0.0]),
            Self::paired("twist", [0.3, 0.7, 0.2, 0.2], 0.6, [0.0, 0.0, 1.0, 1.0], [PI, PI, 1.0 + PI, 1.0 + PI]),
            Self::paired("leg_push", [0.2, 0.3, 0.8, 0.5], 0.4, [0.0, 0.0, 0.0, PI], [0.0, 0.0, 0.0, PI]),
            Self::paired("jumping_jack", [0.7, 0.6, 0.9, 0.7], 1.2, [0.0, 0.3, 0.6, 0.9], [0.0, 0.3, 0.6, 0.9]),
            Self::paired("stand", [0.05, 0.1, 0.08, 0.06], 0.3, [0.0, 0.5, 1.0, 1.5], [0.0, 0.5, 1.0, 1.5]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 1.0) {
            return Err(Error::config(format!("{}: duration below 1 s", self.name)));
        }
        if self.amplitude.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config(format!("{}: amplitude outside [0, 1]", self.name)));
        }
        if self.frequency_hz.iter().any(|f| !(0.0..=5.0).contains(f)) {
            return Err(Error::config(format!("{}: frequency outside [0, 5] Hz", self.name)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config(format!("{}: negative noise", self.name)));
        }
        if let Some(f) = self.asymmetry {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("{}: asymmetry outside [0, 1]", self.name)));
            }
        }
        Ok(())
    }
}

/// Width, in frames, of the Gaussian kernel that smooths activation noise.
pub const NOISE_SMOOTHING_FRAMES: f64 = 3.0;

/// Zero-mean noise of marginal standard deviation `sigma`, smoothed in time.
///
/// White noise would be differentiated twice on its way to the centre of
/// pressure and swamp the motion itself; smoothing keeps the fluctuations
/// physically slow.
fn smooth_noise<R: Rng + ?Sized>(len: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let radius = (3.0 * NOISE_SMOOTHING_FRAMES).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * NOISE_SMOOTHING_FRAMES * NOISE_SMOOTHING_FRAMES)).exp()
        })
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let white: Vec<f64> = (0..len + 2 * radius).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    (0..len)
        .map(|t| sigma * kernel.iter().zip(&white[t..]).map(|(k, w)| k * w).sum::<f64>() / norm)
        .collect()
}

/// `a_i(t) = clamp(A_i·(0.5 + 0.5·sin(2π f_i t + φ_i)) + n_i(t), 0, 1)` with
/// slowly varying noise `n_i` of standard deviation `σ_a`; right-side
/// channels are then multiplied by the asymmetry factor. Returns `8 × T`
/// for `T = round(duration · fs)`.
pub fn gen_activation<R: Rng + ?Sized>(spec: &MotionSpec, fs: f64, rng: &mut R) -> Result<Array2<f64>> {
    spec.validate()?;
    let t_len = (spec.duration_s * fs).round() as usize;
    let right = spec.asymmetry.unwrap_or(1.0);
    let mut a = Array2::zeros((N_MUSCLES, t_len));
    for m in 0..N_MUSCLES {
        let noise = smooth_noise(t_len, spec.noise_sigma, rng);
        for t in 0..t_len {
            let time = t as f64 / fs;
            let base = spec.amplitude[m]
                * (0.5 + 0.5 * (2.0 * PI * spec.frequency_hz[m] * time + spec.phase[m]).sin());
            let mut v = (base + noise[t]).clamp(0.0, 1.0);
            if m % 2 == 1 {
                v *= right;
            }
            a[[m, t]] = v;
        }
    }
    Ok(a)
}

/// Centre-of-mass trajectory `(T, 3)` and horizontal acceleration `(T, 2)`
/// for an `effectors × T` activation matrix sampled at `fs`.
///
/// Acceleration uses central second differences, one-sided at both ends.
pub fn com_from_activation(
    a: ArrayView2<f64>,
    body: &BodyModel,
    fs: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    body.validate()?;
    let (n_eff, t_len) = a.dim();
    if n_eff != body.effectors.len() {
        return Err(Error::config(format!(
            "{n_eff} activation rows for {} effectors",
            body.effectors.len()
        )));
    }
    let mut com = Array2::zeros((t_len, 3));
    for t in 0..t_len {
        for (i, e) in body.effectors.iter().enumerate() {
            for d in 0..3 {
                let x = e.rest[d] + e.gain * a[[i, t]] * e.direction[d];
                com[[t, d]] += e.mass * x;
            }
        }
    }
    com.mapv_inplace(|v| v / body.total_mass);

    let mut acc = Array2::zeros((t_len, 2));
    if t_len >= 3 {
        let inv_dt2 = fs * fs;
        let second = |c: usize, d: usize| (com[[c - 1, d]] - 2.0 * com[[c, d]] + com[[c + 1, d]]) * inv_dt2;
        for d in 0..2 {
            for t in 1..t_len - 1 {
                acc[[t, d]] = second(t, d);
            }
            acc[[0, d]] = second(1, d);
            acc[[t_len - 1, d]] = second(t_len - 2, d);
        }
    }
    Ok((com, acc))
}

/// `CoP = CoM_horizontal − M·h·ẍ / F_z` with `F_z = M·g`, per axis.
pub fn cop_from_com(com: ArrayView2<f64>, acc: ArrayView2<f64>, body: &BodyModel) -> Result<Array2<f64>> {
    if com.nrows() != acc.nrows() || com.ncols() < 2 || acc.ncols() != 2 {
        return Err(Error::config(format!(
            "CoM {:?} and acceleration {:?} do not line up",
            com.dim(),
            acc.dim()
        )));
    }
    let f_z = body.total_mass * body.gravity;
    let k = body.total_mass * body.com_height / f_z;
    Ok(Array2::from_shape_fn((com.nrows(), 2), |(t, d)| com[[t, d]] - k * acc[[t, d]]))
}

fn foot_share(cop_local: [f64; 2], sensors: &[[f64; 2]], sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = sensors
        .iter()
        .map(|c| {
            let d2 = (c[0] - cop_local[0]).powi(2) + (c[1] - cop_local[1]).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Noise-free per-sensor load in kg for one CoP, channel order `L00..R17`.
/// The channels always sum to `total_mass`.
pub fn foot_loads(cop: [f64; 2], total_mass: f64, layout: &SensorLayout) -> [f64; N_CHANNELS] {
    let sep = layout.foot_separation;
    let w_left = (0.5 - cop[1] / sep).clamp(0.0, 1.0);
    let [len, wid] = layout.footprint;
    let local = |centre: f64| {
        [
            cop[0].clamp(-len / 2.0, len / 2.0),
            (cop[1] - centre).clamp(-wid / 2.0, wid / 2.0),
        ]
    };
    let mut out = [0.0; N_CHANNELS];
    let feet = [
        (w_left, -sep / 2.0, &layout.left, 0),
        (1.0 - w_left, sep / 2.0, &layout.right, CHANNELS_PER_FOOT),
    ];
    for (w, centre, sensors, offset) in feet {
        // F_foot = w·M·g newtons, reported in kg-force
        let load = w * total_mass;
        for (i, share) in foot_share(local(centre), sensors, layout.sigma).into_iter().enumerate() {
            out[offset + i] = load * share;
        }
    }
    out
}

/// Render a `(T, 2)` CoP trajectory as 20 Hz pressure frames with Gaussian
/// sensor noise, clamped to the sensor range.
pub fn pressure_from_cop<R: Rng + ?Sized>(
    cop: ArrayView2<f64>,
    body: &BodyModel,
    layout: &SensorLayout,
    noise_kg: f64,
    rng: &mut R,
) -> Result<Vec<PressureFrame>> {
    layout.validate()?;
    let noise = Normal::new(0.0, noise_kg.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
    let frames = (0..cop.nrows())
        .map(|t| {
            let mut ch = foot_loads([cop[[t, 0]], cop[[t, 1]]], body.total_mass, layout);
            for v in ch.iter_mut() {
                let eps = if noise_kg > 0.0 { noise.sample(rng) } else { 0.0 };
                *v = round6((*v + eps).clamp(0.0, MAX_PRESSURE_KG));
            }
            PressureFrame::from_channels(t as i64 * FRAME_MS, &ch)
        })
        .collect();
    Ok(frames)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Upsample a 20 Hz activation matrix to 500 Hz sEMG in µV by linear
/// interpolation between frame centres.
pub fn emg_from_activation(a: ArrayView2<f64>) -> Vec<EmgSample> {
    let t_len = a.ncols();
    if t_len == 0 {
        return Vec::new();
    }
    let last_ms = (t_len as i64 - 1) * FRAME_MS;
    (0..=last_ms / EMG_SAMPLE_MS)
        .map(|i| {
            let t_ms = i * EMG_SAMPLE_MS;
            let k = (t_ms / FRAME_MS) as usize;
            let frac = (t_ms % FRAME_MS) as f64 / FRAME_MS as f64;
            let mut channels = [0.0; N_MUSCLES];
            for (m, c) in channels.iter_mut().enumerate() {
                let lo = a[[m, k]];
                let hi = if k + 1 < t_len { a[[m, k + 1]] } else { lo };
                *c = round6(((lo + frac * (hi - lo)) * MAX_EMG_UV).clamp(0.0, MAX_EMG_UV));
            }
            EmgSample { t_ms, channels }
        })
        .collect()
}

/// Generator settings for a multi-user dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub motions: Vec<MotionSpec>,
    /// Overrides every motion's duration when set.
    pub duration_s: Option<f64>,
    pub seed: u64,
    pub com_height_ratio: f64,
    pub layout: SensorLayout,
    pub pressure_noise_kg: f64,
    /// Per-user relative spread of the pair gains.
    pub gain_jitter: f64,
    /// Per-user relative spread of activation amplitudes.
    pub amplitude_jitter: f64,
    /// Per-user phase offset range in radians, shared by all muscles.
    pub phase_jitter: f64,
    /// Range from which a per-recording asymmetry factor is drawn; `[1, 1]`
    /// keeps every recording symmetric.
    pub asymmetry_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 10,
            motions: MotionSpec::library(),
            duration_s: None,
            seed: 0,
            com_height_ratio: 0.55,
            layout: SensorLayout::default(),
            pressure_noise_kg: 0.05,
            gain_jitter: 0.2,
            amplitude_jitter: 0.1,
            phase_jitter: PI,
            asymmetry_range: [1.0, 1.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::config("need at least 2 synthetic users"));
        }
        if self.motions.is_empty() {
            return Err(Error::config("need at least one motion"));
        }
        let [lo, hi] = self.asymmetry_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("asymmetry_range must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(self.gain_jitter >= 0.0 && self.gain_jitter < 1.0) || !(self.amplitude_jitter >= 0.0) {
            return Err(Error::config("jitter values must lie in [0, 1)"));
        }
        self.layout.validate()?;
        for m in &self.motions {
            m.validate()?;
        }
        Ok(())
    }
}

/// Per-user traits that make users distinguishable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: String,
    pub bio: BioProfile,
    pub gain_scale: [f64; 4],
    pub amplitude_scale: f64,
    pub phase_offset: f64,
}

/// Draw a user from the cohort ranges: weight 39–83 kg, height 150–186 cm,
/// age 22–37, shoe size tracking height.
pub fn sample_user<R: Rng + ?Sized>(index: usize, cfg: &SynthConfig, rng: &mut R) -> SynthUser {
    let height: f64 = rng.random_range(150.0..186.0);
    let shoe = (35.0 + (height - 150.0) / 36.0 * 12.0 + rng.random_range(-1.0..1.0)).round();
    let bio = BioProfile {
        weight_kg: rng.random_range(39.0..83.0_f64).round(),
        height_cm: height.round(),
        age_years: rng.random_range(22..=37) as f64,
        shoe_size_eu: shoe.clamp(35.0, 47.0),
        gender_code: rng.random_range(0..=1) as f64,
    };
    let g = cfg.gain_jitter;
    let gain_scale = std::array::from_fn(|_| rng.random_range(1.0 - g..=1.0 + g));
    let a = cfg.amplitude_jitter;
    SynthUser {
        user_id: format!("u{index:02}"),
        bio,
        gain_scale,
        amplitude_scale: rng.random_range(1.0 - a..=1.0 + a),
        phase_offset: rng.random_range(-cfg.phase_jitter..=cfg.phase_jitter),
    }
}

/// Raw sensor streams of one generated recording plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub meta: RecordingMeta,
    pub pressure: Vec<PressureFrame>,
    pub emg: Vec<EmgSample>,
    /// `8 × T` activation at the pressure rate, in `[0, 1]`.
    pub activation: Array2<f64>,
    /// `(T, 2)` centre of pressure in metres.
    pub cop: Array2<f64>,
    pub asymmetry: f64,
}

impl RawRecording {
    /// Run the raw streams through [`synchronize`], exactly as a reload from
    /// disk would.
    pub fn synchronized(&self) -> Result<SyncedRecording> {
        synchronize(&self.pressure, &self.emg, self.meta.clone())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate one recording of `user` performing `spec`.
pub fn gen_recording<R: Rng + ?Sized>(
    user: &SynthUser,
    spec: &MotionSpec,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<RawRecording> {
    let [lo, hi] = cfg.asymmetry_range;
    let asymmetry = spec.asymmetry.unwrap_or_else(|| if lo < hi { rng.random_range(lo..=hi) } else { lo });
    let mut personal = spec.clone();
    personal.asymmetry = Some(asymmetry);
    if let Some(d) = cfg.duration_s {
        personal.duration_s = d;
    }
    for m in 0..N_MUSCLES {
        personal.amplitude[m] = (spec.amplitude[m] * user.amplitude_scale).min(1.0);
        personal.phase[m] += user.phase_offset;
    }
    let activation = gen_activation(&personal, FS_HZ, rng)?;
    let body = BodyModel::from_bio(&user.bio, cfg.com_height_ratio).with_pair_gain_scale(&user.gain_scale);
    let (com, acc) = com_from_activation(activation.view(), &body, FS_HZ)?;
    let cop = cop_from_com(com.view(), acc.view(), &body)?;
    let pressure = pressure_from_cop(cop.view(), &body, &cfg.layout, cfg.pressure_noise_kg, rng)?;
    let emg = emg_from_activation(activation.view());
    Ok(RawRecording {
        meta: RecordingMeta {
            user_id: user.user_id.clone(),
            motion_label: spec.name.clone(),
            bio: user.bio,
        },
        pressure,
        emg,
        activation,
        cop,
        asymmetry,
    })
}

/// The user with index `u` of the dataset [`gen_dataset`] builds from `cfg`.
pub fn dataset_user(cfg: &SynthConfig, u: usize) -> SynthUser {
    let n_motions = cfg.motions.len() as u64;
    sample_user(u, cfg, &mut stream_rng(cfg.seed, u as u64 * (n_motions + 1)))
}

/// All users × all motions. Every (user, motion) pair draws from its own
/// stream of the configured seed, so recordings do not depend on each other.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    let n_motions = cfg.motions.len() as u64;
    let mut out = Vec::with_capacity(cfg.n_users * cfg.motions.len());
    for u in 0..cfg.n_users {
        let user = dataset_user(cfg, u);
        for (j, spec) in cfg.motions.iter().enumerate() {
            let mut rng = stream_rng(cfg.seed, u as u64 * (n_motions + 1) + 1 + j as u64);
            out.push(gen_recording(&user, spec, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

/// Write recordings as CSV/JSON files with `layout.json` and
/// `manifest.json` under `dir`. Returns the manifest path.
pub fn write_dataset(recordings: &[RawRecording], layout: &SensorLayout, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    layout.save(dir.join("layout.json"))?;
    let mut entries = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let stem = format!("{}_{}", rec.meta.user_id, rec.meta.motion_label);
        let entry = ManifestEntry {
            pressure_csv: PathBuf::from(format!("{stem}_pressure.csv")),
            emg_csv: PathBuf::from(format!("{stem}_emg.csv")),
            bio_json: PathBuf::from(format!("{}_bio.json", rec.meta.user_id)),
            user_id: rec.meta.user_id.clone(),
            motion_label: rec.meta.motion_label.clone(),
        };
        write_pressure_csv(dir.join(&entry.pressure_csv), &rec.pressure)?;
        write_emg_csv(dir.join(&entry.emg_csv), &rec.emg)?;
        write_bio_json(dir.join(&entry.bio_json), &rec.meta.bio)?;
        entries.push(entry);
    }
    let manifest = dir.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::imbalance_score;
    use ndarray::{s, Array1};

    fn bio() -> BioProfile {
        BioProfile {
            weight_kg: 60.0,
            height_cm: 170.0,
            age_years: 30.0,
            shoe_size_eu: 41.0,
            gender_code: 0.0,
        }
    }

    fn point_body(masses: &[f64], rests: &[f64]) -> BodyModel {
        BodyModel {
            total_mass: masses.iter().sum(),
            com_height: 1.0,
            effectors: masses
                .iter()
                .zip(rests)
                .map(|(&mass, &x)| Effector {
                    mass,
                    rest: [x, 0.0, 0.0],
                    gain: 0.1,
                    direction: [1.0, 0.0, 0.0],
                })
                .collect(),
            gravity: GRAVITY,
        }
    }

    #[test]
    fn standard_body_is_valid() {
        let b = BodyModel::from_bio(&bio(), 0.55);
        b.validate().unwrap();
        assert!((b.com_height - 0.935).abs() < 1e-12);
        assert_eq!(b.effectors.len(), N_MUSCLES);
        assert!((MASS_FRACTIONS.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silent_motion_is_zero() {
        let mut spec = MotionSpec::library()[0].clone();
        spec.amplitude = [0.0; N_MUSCLES];
        spec.noise_sigma = 0.0;
        let a = gen_activation(&spec, FS_HZ, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.ncols(), 1200);
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_sided_activation_scores_one() {
        let mut spec = MotionSpec::library()[4].clone();
        spec.asymmetry = Some(0.0);
        spec.duration_s = 5.0;
        let a = gen_activation(&spec, FS_HZ, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        // every active pair is fully one-sided
        for t in 0..a.ncols() {
            for p in 0..4 {
                assert_eq!(a[[2 * p + 1, t]], 0.0);
                let single = a.slice(s![2 * p..2 * p + 2, t..t + 1]);
                let mut padded = Array2::zeros((N_MUSCLES, 1));
                padded.slice_mut(s![0..2, ..]).assign(&single);
                let expected = if a[[2 * p, t]] > 1e-3 { 0.25 } else { 0.0 };
                assert_eq!(imbalance_score(padded.view()).unwrap(), expected);
            }
        }
        let score = imbalance_score(a.view()).unwrap();
        assert!(score > 0.95, "{score}");
    }

    #[test]
    fn activation_is_deterministic() {
        let spec = MotionSpec::library()[1].clone();
        let a = gen_activation(&spec, FS_HZ, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = gen_activation(&spec, FS_HZ, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_two_mass_com() {
        let body = point_body(&[5.0, 5.0], &[0.0, 2.0]);
        let a = Array2::zeros((2, 4));
        let (com, acc) = com_from_activation(a.view(), &body, FS_HZ).unwrap();
        assert!(com.column(0).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(acc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_activation_has_no_acceleration() {
        let body = BodyModel::from_bio(&bio(), 0.55);
        let a = Array2::from_elem((N_MUSCLES, 30), 0.4);
        let (_, acc) = com_from_activation(a.view(), &body, FS_HZ).unwrap();
        assert!(acc.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn central_difference_tracks_analytic_acceleration() {
        // x(t) = gain·sin(ωt): ẍ = −ω²·x, and the central difference carries
        // a relative error of about (ω·dt)²/12
        let body = point_body(&[1.0], &[0.0]);
        let omega = 2.0 * PI * 0.7;
        let dt = 1.0 / FS_HZ;
        let t_len = 100;
        let a = Array2::from_shape_fn((1, t_len), |(_, t)| (omega * t as f64 * dt).sin());
        let (_, acc) = com_from_activation(a.view(), &body, FS_HZ).unwrap();
        let bound = 0.1 * omega * omega * (omega * dt).powi(2) / 12.0 * 1.01;
        for t in 1..t_len - 1 {
            let exact = -omega * omega * 0.1 * (omega * t as f64 * dt).sin();
            assert!((acc[[t, 0]] - exact).abs() <= bound + 1e-12, "t={t}");
        }
    }

    #[test]
    fn static_cop_is_com_projection() {
        let body = BodyModel::from_bio(&bio(), 0.55);
        let com = Array2::from_shape_fn((5, 3), |(t, d)| 0.01 * (t + d) as f64);
        let acc = Array2::zeros((5, 2));
        let cop = cop_from_com(com.view(), acc.view(), &body).unwrap();
        assert_eq!(cop, com.slice(s![.., 0..2]));
    }

    #[test]
    fn doubling_mass_leaves_cop_unchanged() {
        let light = BodyModel::from_bio(&bio(), 0.55);
        let mut heavy = light.clone();
        heavy.total_mass *= 2.0;
        for e in &mut heavy.effectors {
            e.mass *= 2.0;
        }
        let a = gen_activation(&MotionSpec::library()[4], FS_HZ, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (c1, x1) = com_from_activation(a.view(), &light, FS_HZ).unwrap();
        let (c2, x2) = com_from_activation(a.view(), &heavy, FS_HZ).unwrap();
        let p1 = cop_from_com(c1.view(), x1.view(), &light).unwrap();
        let p2 = cop_from_com(c2.view(), x2.view(), &heavy).unwrap();
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoidal_com_matches_closed_form() {
        let body = point_body(&[1.0], &[0.0]);
        let (amp, omega) = (0.1, 2.0 * PI * 0.5);
        let t_len = 200;
        let a = Array2::from_shape_fn((1, t_len), |(_, t)| (omega * t as f64 / FS_HZ).sin());
        let (com, acc) = com_from_activation(a.view(), &body, FS_HZ).unwrap();
        let cop = cop_from_com(com.view(), acc.view(), &body).unwrap();
        let gain = 1.0 + body.com_height * omega * omega / GRAVITY;
        let peak = amp * gain;
        for t in 1..t_len - 1 {
            let exact = peak * (omega * t as f64 / FS_HZ).sin();
            assert!((cop[[t, 0]] - exact).abs() <= 0.01 * peak);
        }
    }

    #[test]
    fn loads_conserve_mass_and_split_by_lateral_cop() {
        let layout = SensorLayout::default();
        for cop in [[0.0, 0.0], [0.05, -0.03], [-0.1, 0.2], [0.2, -0.4]] {
            let ch = foot_loads(cop, 61.5, &layout);
            assert!((ch.iter().sum::<f64>() - 61.5).abs() < 1e-9);
        }
        let centred = foot_loads([0.0, 0.0], 60.0, &layout);
        let left: f64 = centred[..CHANNELS_PER_FOOT].iter().sum();
        let right: f64 = centred[CHANNELS_PER_FOOT..].iter().sum();
        assert!((left - 30.0).abs() < 1e-12 && (right - 30.0).abs() < 1e-12);
        let far_left = foot_loads([0.0, -0.3], 60.0, &layout);
        assert!(far_left[CHANNELS_PER_FOOT..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noisy_loads_stay_close_to_body_mass() {
        let body = BodyModel::from_bio(&bio(), 0.55);
        let cop = Array2::zeros((50, 2));
        let frames = pressure_from_cop(cop.view(), &body, &SensorLayout::default(), 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for f in &frames {
            let total: f64 = f.channels().iter().sum();
            // 36 independent N(0, 0.05) terms: 6 sigma is 1.8 kg
            assert!((total - 60.0).abs() < 1.8);
            let left: f64 = f.left.iter().sum();
            assert!((left - 30.0).abs() < 1.5);
        }
    }

    #[test]
    fn zero_activation_gives_static_pressure() {
        let mut cfg = SynthConfig::default();
        cfg.motions = vec![MotionSpec {
            amplitude: [0.0; N_MUSCLES],
            noise_sigma: 0.0,
            duration_s: 2.0,
            ..MotionSpec::library()[0].clone()
        }];
        cfg.n_users = 2;
        cfg.pressure_noise_kg = 0.0;
        let rec = &gen_dataset(&cfg).unwrap()[0];
        let first = rec.pressure[0].channels();
        assert!(rec.pressure.iter().all(|f| f.channels() == first));
    }

    #[test]
    fn default_motions_keep_cop_over_the_feet() {
        let cfg = SynthConfig {
            n_users: 4,
            duration_s: Some(20.0),
            asymmetry_range: [0.0, 1.0],
            ..Default::default()
        };
        let layout = &cfg.layout;
        for rec in gen_dataset(&cfg).unwrap() {
            for t in 0..rec.cop.nrows() {
                let c = [rec.cop[[t, 0]], rec.cop[[t, 1]]];
                assert!(layout.supports(c), "{} {}: CoP {c:?} at frame {t}", rec.meta.user_id, rec.meta.motion_label);
            }
        }
    }

    #[test]
    fn distinct_activations_give_distinct_pressure() {
        let body = BodyModel::from_bio(&bio(), 0.55);
        let layout = SensorLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let render = |a: &Array2<f64>| {
            let (com, acc) = com_from_activation(a.view(), &body, FS_HZ).unwrap();
            let cop = cop_from_com(com.view(), acc.view(), &body).unwrap();
            (0..cop.nrows())
                .flat_map(|t| foot_loads([cop[[t, 0]], cop[[t, 1]]], body.total_mass, &layout))
                .collect::<Array1<f64>>()
        };
        for _ in 0..20 {
            let a: Array2<f64> = Array2::from_shape_fn((N_MUSCLES, 20), |_| rng.random_range(0.0..1.0));
            let b = Array2::from_shape_fn((N_MUSCLES, 20), |_| rng.random_range(0.0..1.0));
            let da: f64 = (&a - &b).mapv(|v| v * v).sum().sqrt();
            let dp = (render(&a) - render(&b)).mapv(|v| v * v).sum().sqrt();
            assert!(da > 0.5 && dp > 1e-3, "activation distance {da}, pressure distance {dp}");
        }
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips_through_files() {
        let cfg = SynthConfig {
            n_users: 2,
            duration_s: Some(3.0),
            motions: MotionSpec::library()[..2].to_vec(),
            seed: 7,
            ..Default::default()
        };
        let a = gen_dataset(&cfg).unwrap();
        let b = gen_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_ne!(a[0].meta.bio, a[2].meta.bio);

        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&a, &cfg.layout, dir.path()).unwrap();
        let entries = crate::data::load_manifest(&manifest).unwrap();
        for (entry, rec) in entries.iter().zip(&a) {
            let loaded = crate::data::load_recording(entry).unwrap();
            assert_eq!(loaded, rec.synchronized().unwrap());
        }
        assert_eq!(SensorLayout::load(dir.path().join("layout.json")).unwrap(), cfg.layout);
    }

    #[test]
    fn synchronized_activation_tracks_generated_truth() {
        let cfg = SynthConfig {
            n_users: 2,
            duration_s: Some(4.0),
            ..Default::default()
        };
        let rec = &gen_dataset(&cfg).unwrap()[0];
        let synced = rec.synchronized().unwrap();
        let a = &rec.activation;
        assert_eq!(synced.len(), a.ncols());
        // interior frames average 25 linearly interpolated samples at offsets
        // −24..=24 ms; the offsets' weights sum to 2·(2+4+…+24)/50 = 6.24
        let c = 3.12 / 25.0;
        for t in 1..a.ncols() - 1 {
            for m in 0..N_MUSCLES {
                let expected = a[[m, t]] + c * (a[[m, t - 1]] + a[[m, t + 1]] - 2.0 * a[[m, t]]);
                let got = synced.frames[t].activation[m] / MAX_EMG_UV;
                assert!((got - expected).abs() < 1e-8, "frame {t}, muscle {m}");
            }
        }
    }
}
