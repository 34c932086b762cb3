//! Key-value configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Lists are comma
//! separated. Every key has a default, so an empty file is valid, and
//! `to_text` writes a complete snapshot that parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use nvas_core::dsp::{StftConfig, Window};
use nvas_core::model::{FeatureSet, ModelConfig};
use nvas_core::nn::AdamHyper;
use nvas_core::room::SimConfig;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", n + 1, k.trim())));
        }
    }
    Ok(map)
}

/// Typed reader that consumes keys and rejects leftovers.
struct Reader(BTreeMap<String, String>);

impl Reader {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Config(format!("`{key}`: {e}"))),
        }
    }

    fn list(&mut self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Config(format!("`{key}`: {e}"))))
                .collect(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn window_name(w: Window) -> &'static str {
    match w {
        Window::Hann => "hann",
        Window::Rect => "rect",
    }
}

fn parse_window(s: &str) -> Result<Window> {
    match s {
        "hann" => Ok(Window::Hann),
        "rect" => Ok(Window::Rect),
        _ => Err(Error::Config(format!("unknown window `{s}`"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub clip_seconds: f64,
    /// Poses closer than this to the source are redrawn.
    pub min_source_distance: f64,
    pub sim: SimConfig,
    pub n_views: usize,
    pub rays_per_view: usize,
    pub val_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { clip_seconds: 1.0, min_source_distance: 0.5, sim: SimConfig::default(), n_views: 4, rays_per_view: 16, val_fraction: 0.2 }
    }
}

impl GenConfig {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sim.sample_rate as f64).round() as usize
    }

    pub fn to_text(&self) -> String {
        let s = &self.sim;
        let pairs: [(&str, String); 12] = [
            ("data.clip_seconds", self.clip_seconds.to_string()),
            ("data.min_source_distance", self.min_source_distance.to_string()),
            ("data.val_fraction", self.val_fraction.to_string()),
            ("render.n_views", self.n_views.to_string()),
            ("render.rays_per_view", self.rays_per_view.to_string()),
            ("sim.sample_rate", s.sample_rate.to_string()),
            ("sim.speed_of_sound", s.speed_of_sound.to_string()),
            ("sim.max_order", s.max_order.to_string()),
            ("sim.ear_offset", s.ear_offset.to_string()),
            ("sim.ir_length", s.ir_length.to_string()),
            ("sim.min_distance", s.min_distance.to_string()),
            ("format.version", "1".to_string()),
        ];
        render(&pairs)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader(parse_kv(text)?);
        let d = GenConfig::default();
        let cfg = GenConfig {
            clip_seconds: r.get("data.clip_seconds", d.clip_seconds)?,
            min_source_distance: r.get("data.min_source_distance", d.min_source_distance)?,
            val_fraction: r.get("data.val_fraction", d.val_fraction)?,
            n_views: r.get("render.n_views", d.n_views)?,
            rays_per_view: r.get("render.rays_per_view", d.rays_per_view)?,
            sim: SimConfig {
                sample_rate: r.get("sim.sample_rate", d.sim.sample_rate)?,
                speed_of_sound: r.get("sim.speed_of_sound", d.sim.speed_of_sound)?,
                max_order: r.get("sim.max_order", d.sim.max_order)?,
                ear_offset: r.get("sim.ear_offset", d.sim.ear_offset)?,
                ir_length: r.get("sim.ir_length", d.sim.ir_length)?,
                min_distance: r.get("sim.min_distance", d.sim.min_distance)?,
            },
        };
        let _: u32 = r.get("format.version", 1)?;
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0) || self.n_views == 0 || self.rays_per_view == 0 {
            return Err(Error::Config("clip length, views and rays must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Training settings, including the model shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub features: FeatureSet,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamHyper,
    pub eval_every: usize,
    pub stft: StftConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            features: FeatureSet::ALL,
            seed: 0,
            steps: 2000,
            batch: 8,
            adam: AdamHyper::default(),
            eval_every: 500,
            stft: StftConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let pairs: [(&str, String); 19] = [
            ("model.feature_dim", m.feature_dim.to_string()),
            ("model.adapter_hidden", m.adapter_hidden.to_string()),
            ("model.trunk_hidden", join(&m.trunk_hidden)),
            ("model.bands", m.bands.to_string()),
            ("model.n_views", m.n_views.to_string()),
            ("model.rays_per_view", m.rays_per_view.to_string()),
            ("train.features", self.features.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.lr", self.adam.lr.to_string()),
            ("train.beta1", self.adam.beta1.to_string()),
            ("train.beta2", self.adam.beta2.to_string()),
            ("train.eps", self.adam.eps.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("stft.sample_rate", self.stft.sample_rate.to_string()),
            ("stft.n_fft", self.stft.n_fft.to_string()),
            ("stft.hop", self.stft.hop.to_string()),
            ("stft.window", window_name(self.stft.window).to_string()),
        ];
        render(&pairs)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader(parse_kv(text)?);
        let d = TrainConfig::default();
        let features = match r.raw("train.features") {
            Some(s) => FeatureSet::parse(&s)?,
            None => d.features,
        };
        let window = match r.raw("stft.window") {
            Some(s) => parse_window(&s)?,
            None => d.stft.window,
        };
        let cfg = TrainConfig {
            model: ModelConfig {
                feature_dim: r.get("model.feature_dim", d.model.feature_dim)?,
                adapter_hidden: r.get("model.adapter_hidden", d.model.adapter_hidden)?,
                trunk_hidden: r.list("model.trunk_hidden", d.model.trunk_hidden.clone())?,
                bands: r.get("model.bands", d.model.bands)?,
                n_views: r.get("model.n_views", d.model.n_views)?,
                rays_per_view: r.get("model.rays_per_view", d.model.rays_per_view)?,
            },
            features,
            seed: r.get("train.seed", d.seed)?,
            steps: r.get("train.steps", d.steps)?,
            batch: r.get("train.batch", d.batch)?,
            adam: AdamHyper {
                lr: r.get("train.lr", d.adam.lr)?,
                beta1: r.get("train.beta1", d.adam.beta1)?,
                beta2: r.get("train.beta2", d.adam.beta2)?,
                eps: r.get("train.eps", d.adam.eps)?,
            },
            eval_every: r.get("train.eval_every", d.eval_every)?,
            stft: StftConfig {
                sample_rate: r.get("stft.sample_rate", d.stft.sample_rate)?,
                n_fft: r.get("stft.n_fft", d.stft.n_fft)?,
                hop: r.get("stft.hop", d.stft.hop)?,
                window,
            },
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stft.validate()?;
        if self.batch == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch and eval_every must be positive".into()));
        }
        Ok(())
    }
}

fn render(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}
