//! CSV and JSON file formats.
//!
//! Pressure CSV: header `t_ms,L00,…,L17,R00,…,R17`, decimal kg.
//! sEMG CSV: header `t_ms,m0,…,m7`, decimal µV.
//! Values are written with fixed 6-decimal formatting so write→read is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    check_range, emg_column_name, pressure_column_name, synchronize, BioProfile, EmgSample,
    PressureFrame, RecordingMeta, SyncedRecording, MAX_EMG_UV, MAX_PRESSURE_KG, N_CHANNELS,
    N_MUSCLES,
};
use crate::error::{Error, Result};

fn pressure_header() -> Vec<String> {
    std::iter::once("t_ms".to_string())
        .chain((0..N_CHANNELS).map(pressure_column_name))
        .collect()
}

fn emg_header() -> Vec<String> {
    std::iter::once("t_ms".to_string())
        .chain((0..N_MUSCLES).map(emg_column_name))
        .collect()
}

/// Parse rows of `t_ms` followed by `N` bounded decimals.
fn read_rows<const N: usize>(
    reader: impl Read,
    header: &[String],
    max: f64,
    column_name: fn(usize) -> String,
) -> Result<Vec<(i64, [f64; N])>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let got = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if got.len() != header.len() || got.iter().zip(header).any(|(a, b)| a != b) {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            header.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut last_t: Option<i64> = None;
    for (i, record) in rdr.records().enumerate() {
        // data rows are numbered from 1
        let row = i + 1;
        let record = record.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        if record.len() != N + 1 {
            return Err(Error::Format(format!(
                "row {row}: expected {} fields, found {}",
                N + 1,
                record.len()
            )));
        }
        let t_ms: i64 = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: bad t_ms `{}`", &record[0])))?;
        if let Some(prev) = last_t {
            if t_ms <= prev {
                return Err(Error::Sequencing { row, t_ms });
            }
        }
        last_t = Some(t_ms);
        let mut values = [0.0; N];
        for (c, v) in values.iter_mut().enumerate() {
            let field = &record[c + 1];
            *v = field.parse().map_err(|_| {
                Error::Format(format!("row {row}, column {}: bad number `{field}`", column_name(c)))
            })?;
            check_range(*v, 0.0, max, row, || column_name(c))?;
        }
        rows.push((t_ms, values));
    }
    Ok(rows)
}

pub fn read_pressure_csv(reader: impl Read) -> Result<Vec<PressureFrame>> {
    let rows = read_rows::<N_CHANNELS>(
        reader,
        &pressure_header(),
        MAX_PRESSURE_KG,
        pressure_column_name,
    )?;
    Ok(rows
        .into_iter()
        .map(|(t, v)| PressureFrame::from_channels(t, &v))
        .collect())
}

pub fn read_emg_csv(reader: impl Read) -> Result<Vec<EmgSample>> {
    let rows = read_rows::<N_MUSCLES>(reader, &emg_header(), MAX_EMG_UV, emg_column_name)?;
    Ok(rows
        .into_iter()
        .map(|(t_ms, channels)| EmgSample { t_ms, channels })
        .collect())
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_pressure_csv(path: impl AsRef<Path>) -> Result<Vec<PressureFrame>> {
    read_pressure_csv(open(path.as_ref())?)
}

pub fn load_emg_csv(path: impl AsRef<Path>) -> Result<Vec<EmgSample>> {
    read_emg_csv(open(path.as_ref())?)
}

fn write_rows<'a>(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = (i64, &'a [f64])>,
) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for (t, values) in rows {
        write!(out, "{t}").unwrap();
        for v in values {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_pressure_csv(path: impl AsRef<Path>, frames: &[PressureFrame]) -> Result<()> {
    let channels: Vec<_> = frames.iter().map(|f| (f.t_ms, f.channels())).collect();
    write_rows(
        path.as_ref(),
        &pressure_header(),
        channels.iter().map(|(t, c)| (*t, &c[..])),
    )
}

pub fn write_emg_csv(path: impl AsRef<Path>, samples: &[EmgSample]) -> Result<()> {
    write_rows(
        path.as_ref(),
        &emg_header(),
        samples.iter().map(|s| (s.t_ms, &s.channels[..])),
    )
}

pub fn load_bio_json(path: impl AsRef<Path>) -> Result<BioProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bio: BioProfile = serde_json::from_str(&text)?;
    bio.validate()?;
    Ok(bio)
}

pub fn write_bio_json(path: impl AsRef<Path>, bio: &BioProfile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(bio)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One recording in a dataset manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pressure_csv: PathBuf,
    pub emg_csv: PathBuf,
    pub bio_json: PathBuf,
    pub user_id: String,
    pub motion_label: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for e in &mut entries {
        for p in [&mut e.pressure_csv, &mut e.emg_csv, &mut e.bio_json] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load and synchronize one manifest entry (physical units).
pub fn load_recording(entry: &ManifestEntry) -> Result<SyncedRecording> {
    let pressure = load_pressure_csv(&entry.pressure_csv)?;
    let emg = load_emg_csv(&entry.emg_csv)?;
    let bio = load_bio_json(&entry.bio_json)?;
    synchronize(
        &pressure,
        &emg,
        RecordingMeta {
            user_id: entry.user_id.clone(),
            motion_label: entry.motion_label.clone(),
            bio,
        },
    )
}
