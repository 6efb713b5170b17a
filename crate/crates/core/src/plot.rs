//! Static SVG plots of estimated against measured activation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{MUSCLE_NAMES, N_MUSCLES};
use crate::error::{Error, Result};
use crate::eval::RecordingPrediction;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 90.0;
const MARGIN: f64 = 40.0;

fn polyline(values: impl Iterator<Item = f64>, n: usize, top: f64, color: &str) -> String {
    let dx = if n > 1 { PANEL_W / (n - 1) as f64 } else { 0.0 };
    let mut pts = String::new();
    for (i, v) in values.enumerate() {
        let y = top + PANEL_H * (1.0 - v.clamp(0.0, 1.0));
        let _ = write!(pts, "{:.1},{:.1} ", MARGIN + i as f64 * dx, y);
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>\n", pts.trim_end())
}

/// One panel per muscle: measured activation in black, estimate in red.
pub fn activation_svg(pred: &RecordingPrediction) -> String {
    let n = pred.t_ms.len();
    let height = MARGIN * 2.0 + N_MUSCLES as f64 * (PANEL_H + 20.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        PANEL_W + 2.0 * MARGIN
    );
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN}\" y=\"20\">{} / {}</text>",
        pred.user_id, pred.motion_label
    );
    for m in 0..N_MUSCLES {
        let top = MARGIN + m as f64 * (PANEL_H + 20.0);
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#ccc\"/>"
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{}</text>", MARGIN + 4.0, top + 12.0, MUSCLE_NAMES[m]);
        svg += &polyline(pred.truth.row(m).iter().copied(), n, top, "black");
        svg += &polyline(pred.estimate.row(m).iter().copied(), n, top, "#d62728");
    }
    svg += "</svg>\n";
    svg
}

/// Write one SVG per recording into `dir`, named `<user>_<motion>.svg`.
pub fn write_activation_plots(dir: impl AsRef<Path>, preds: &[RecordingPrediction]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in preds {
        let path = dir.join(format!("{}_{}.svg", p.user_id, p.motion_label));
        fs::write(&path, activation_svg(p)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
