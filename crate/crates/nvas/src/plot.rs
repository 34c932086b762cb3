//! Waveform plots: ground truth, model prediction and the Mono-Mono
//! baseline for each ear, as SVG plus the raw samples as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nvas_core::dsp::BinauralClip;
use nvas_core::generator::baseline_mono_mono;
use nvas_core::model::PhysModel;

use crate::config::TrainConfig;
use crate::dataset::Dataset;
use crate::error::{Error, IoContext, Result};
use crate::train::prepare_eval;

const WIDTH: f64 = 960.0;
const PANEL: f64 = 220.0;
const MARGIN: f64 = 30.0;
const MAX_POINTS: usize = 1200;

pub struct Traces<'a> {
    pub gt: &'a BinauralClip,
    pub pred: &'a BinauralClip,
    pub base: &'a BinauralClip,
}

pub fn traces_csv(t: &Traces<'_>) -> String {
    let sr = t.gt.sample_rate() as f64;
    let cols = [t.gt.left(), t.gt.right(), t.pred.left(), t.pred.right(), t.base.left(), t.base.right()].map(|c| c.samples());
    let mut s = String::from("t,gt_l,gt_r,pred_l,pred_r,base_l,base_r\n");
    for i in 0..t.gt.len() {
        write!(s, "{}", i as f64 / sr).unwrap();
        for c in &cols {
            write!(s, ",{}", c[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

fn polyline(samples: &[f64], top: f64, scale: f64, color: &str) -> String {
    let step = samples.len().div_ceil(MAX_POINTS).max(1);
    let dx = (WIDTH - 2.0 * MARGIN) / samples.len().max(1) as f64;
    let mid = top + PANEL / 2.0;
    let mut pts = String::new();
    for (i, v) in samples.iter().enumerate().step_by(step) {
        write!(pts, "{:.2},{:.2} ", MARGIN + i as f64 * dx, mid - v * scale).unwrap();
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" stroke-opacity=\"0.8\" points=\"{}\"/>\n", pts.trim_end())
}

pub fn traces_svg(title: &str, t: &Traces<'_>) -> String {
    let peak = [t.gt, t.pred, t.base]
        .iter()
        .flat_map(|c| c.channels())
        .flat_map(|c| c.samples().iter())
        .fold(1e-9f64, |m, v| m.max(v.abs()));
    let scale = (PANEL / 2.0 - 5.0) / peak;
    let height = 2.0 * PANEL + 3.0 * MARGIN;
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    writeln!(s, "<text x=\"{MARGIN}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{}</text>", escape(title)).unwrap();
    for (k, (name, idx)) in [("left", 0usize), ("right", 1)].into_iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL + MARGIN);
        writeln!(
            s,
            "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>",
            WIDTH - 2.0 * MARGIN
        )
        .unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>", MARGIN + 4.0, top + 14.0).unwrap();
        for (clip, color) in [(t.base, "#3b6fd4"), (t.gt, "#000000"), (t.pred, "#d43b3b")] {
            s.push_str(&polyline(clip.channels()[idx].samples(), top, scale, color));
        }
    }
    let ly = height - 8.0;
    for (i, (label, color)) in [("ground truth", "#000000"), ("prediction", "#d43b3b"), ("mono-mono", "#3b6fd4")].iter().enumerate() {
        let x = MARGIN + 160.0 * i as f64;
        writeln!(s, "<text x=\"{x}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<clip_id>.svg` and `<clip_id>.csv` for each clip into `out`.
pub fn plot_waveforms(model: &PhysModel, cfg: &TrainConfig, ds: &Dataset, clip_ids: &[String], out: &Path) -> Result<Vec<PathBuf>> {
    for id in clip_ids {
        if !ds.manifest.clips.iter().any(|c| &c.clip_id == id) {
            return Err(Error::UnknownClip(id.clone()));
        }
    }
    fs::create_dir_all(out).at(out)?;
    let clips = prepare_eval(ds, clip_ids, cfg)?;
    let mut written = Vec::new();
    for c in &clips {
        let pred = model.synthesize(&c.inputs, cfg.features, &c.mono_spec, &c.mono, &cfg.stft)?;
        let base = baseline_mono_mono(&c.mono);
        let traces = Traces { gt: &c.gt, pred: &pred, base: &base };
        let csv_path = out.join(format!("{}.csv", c.clip_id));
        let svg_path = out.join(format!("{}.svg", c.clip_id));
        fs::write(&csv_path, traces_csv(&traces)).at(&csv_path)?;
        fs::write(&svg_path, traces_svg(&c.clip_id, &traces)).at(&svg_path)?;
        written.push(svg_path);
        written.push(csv_path);
    }
    Ok(written)
}
