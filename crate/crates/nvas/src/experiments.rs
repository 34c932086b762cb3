//! Baseline evaluation, the feature ablation, and result tables.

use std::fs;
use std::path::Path;

use log::info;
use nvas_core::dsp::StftConfig;
use nvas_core::generator::{baseline_mono_energy, baseline_mono_mono, baseline_stereo_energy};
use nvas_core::metrics::{compensated_mean, env_distance, mag_distance, ClipScore, MetricsReport};
use nvas_core::model::FeatureSet;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, IoContext, Result};
use crate::train::{evaluate, prepare, prepare_eval, train_prepared, EvalClip};

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub scene: String,
    pub mag: f64,
    pub env: f64,
    pub n_clips: usize,
}

impl ReportRow {
    pub fn new(system: &str, scene: &str, report: &MetricsReport) -> Self {
        ReportRow { system: system.to_string(), scene: scene.to_string(), mag: report.mag, env: report.env, n_clips: report.n_clips }
    }
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn write_scores_csv(path: &Path, scores: &[ClipScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().at(path)
}

pub const BASELINES: [&str; 3] = ["mono-mono", "mono-energy", "stereo-energy"];

/// The three signal-only baselines on `clips`, one report each, in
/// [`BASELINES`] order.
pub fn baseline_reports(clips: &[EvalClip], stft: &StftConfig) -> Result<Vec<MetricsReport>> {
    if clips.is_empty() {
        return Err(Error::EmptySplit("baseline".into()));
    }
    let mut scores: [Vec<ClipScore>; 3] = Default::default();
    for c in clips {
        let preds = [
            baseline_mono_mono(&c.mono),
            baseline_mono_energy(&c.mono, &c.gt)?,
            baseline_stereo_energy(&c.mono, &c.gt)?,
        ];
        for (acc, pred) in scores.iter_mut().zip(&preds) {
            acc.push(ClipScore { clip_id: c.clip_id.clone(), mag: mag_distance(pred, &c.gt, stft)?, env: env_distance(pred, &c.gt)? });
        }
    }
    scores.into_iter().map(|s| Ok(MetricsReport::from_scores(s)?)).collect()
}

/// Baselines on the validation split.
pub fn run_baselines(ds: &Dataset, stft: &StftConfig) -> Result<Vec<ReportRow>> {
    let cfg = TrainConfig { stft: *stft, ..train_config_for(ds) };
    let clips = prepare_eval(ds, ds.split(Split::Val), &cfg)?;
    let reports = baseline_reports(&clips, stft)?;
    Ok(BASELINES.iter().zip(&reports).map(|(name, r)| ReportRow::new(name, "all", r)).collect())
}

/// Default training config with the model geometry matched to `ds`.
pub fn train_config_for(ds: &Dataset) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.n_views = ds.gen.n_views;
    cfg.model.rays_per_view = ds.gen.rays_per_view;
    cfg.stft.sample_rate = ds.gen.sim.sample_rate;
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub rows: Vec<FeatureSet>,
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    pub fn all_subsets(seeds: Vec<u64>) -> Self {
        AblationSpec { rows: FeatureSet::all_subsets().to_vec(), seeds }
    }

    pub fn validate(&self) -> Result<()> {
        let covered = FeatureSet::all_subsets().iter().all(|s| self.rows.iter().filter(|r| *r == s).count() == 1);
        if self.rows.len() != 8 || !covered {
            return Err(Error::Config("ablation must cover each of the 8 feature subsets exactly once".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rgb: bool,
    pub dep: bool,
    pub sem: bool,
    pub mag: f64,
    pub env: f64,
    pub seed_mag: Vec<f64>,
    pub seed_env: Vec<f64>,
}

impl AblationRow {
    pub fn features(&self) -> FeatureSet {
        FeatureSet { rgb: self.rgb, dep: self.dep, sem: self.sem }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, features: FeatureSet) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.features() == features)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["rgb", "dep", "sem", "mag", "env"].map(String::from).to_vec();
        header.extend(self.seeds.iter().map(|s| format!("mag_seed{s}")));
        header.extend(self.seeds.iter().map(|s| format!("env_seed{s}")));
        w.write_record(&header)?;
        let mark = |b: bool| if b { "x" } else { "" }.to_string();
        for r in &self.rows {
            let mut rec = vec![mark(r.rgb), mark(r.dep), mark(r.sem), r.mag.to_string(), r.env.to_string()];
            rec.extend(r.seed_mag.iter().map(|v| v.to_string()));
            rec.extend(r.seed_env.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Trains one model per (subset, seed) from `base` and scores the
/// best-validation parameters on the validation split.
pub fn ablate(ds: &Dataset, spec: &AblationSpec, base: &TrainConfig) -> Result<AblationTable> {
    spec.validate()?;
    let train = prepare(ds, Split::Train, base)?;
    let val = prepare_eval(ds, ds.split(Split::Val), base)?;
    let mut rows = Vec::with_capacity(spec.rows.len());
    for &features in &spec.rows {
        let (mut seed_mag, mut seed_env) = (Vec::new(), Vec::new());
        for &seed in &spec.seeds {
            let cfg = TrainConfig { features, seed, ..base.clone() };
            let outcome = train_prepared(&train, &val, &cfg)?;
            if let Some(step) = outcome.diverged_at {
                return Err(Error::Diverged { step });
            }
            let report = evaluate(&outcome.best, features, &val, &cfg.stft)?;
            info!("ablation {features} seed {seed}: MAG {:.6} ENV {:.6}", report.mag, report.env);
            seed_mag.push(report.mag);
            seed_env.push(report.env);
        }
        rows.push(AblationRow {
            rgb: features.rgb,
            dep: features.dep,
            sem: features.sem,
            mag: compensated_mean(&seed_mag),
            env: compensated_mean(&seed_env),
            seed_mag,
            seed_env,
        });
    }
    Ok(AblationTable { seeds: spec.seeds.clone(), steps: base.steps, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_must_cover_all_subsets() {
        assert!(AblationSpec::all_subsets(vec![0]).validate().is_ok());
        let mut dup = AblationSpec::all_subsets(vec![0]);
        dup.rows[1] = dup.rows[2];
        assert!(dup.validate().is_err());
        assert!(AblationSpec::all_subsets(vec![]).validate().is_err());
    }

    #[test]
    fn table_csv_layout() {
        let rows = FeatureSet::all_subsets()
            .iter()
            .enumerate()
            .map(|(i, f)| AblationRow {
                rgb: f.rgb,
                dep: f.dep,
                sem: f.sem,
                mag: i as f64,
                env: 0.5,
                seed_mag: vec![i as f64, i as f64],
                seed_env: vec![0.5, 0.5],
            })
            .collect();
        let t = AblationTable { seeds: vec![3, 4], steps: 0, rows };
        let csv = t.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "rgb,dep,sem,mag,env,mag_seed3,mag_seed4,env_seed3,env_seed4");
        assert_eq!(lines[1], ",,,0,0.5,0,0,0.5,0.5");
        assert_eq!(lines[8], "x,x,x,7,0.5,7,7,0.5,0.5");
    }
}
