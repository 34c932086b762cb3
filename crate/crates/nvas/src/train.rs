//! Training and evaluation loops.

use std::fmt::Write as _;

use log::info;
use nvas_core::dsp::{stft_clip, AudioClip, BinauralClip, Spectrogram, StftConfig};
use nvas_core::generator::MagnitudeTarget;
use nvas_core::metrics::{env_distance, mag_distance, ClipScore, MetricsReport};
use nvas_core::model::{ClipInputs, FeatureSet, PhysModel};
use nvas_core::nn::{adam_step, AdamState, Parameters};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{ClipRecord, Dataset, Split};
use crate::error::{Error, Result};

/// A clip ready for the model: precomputed features and loss statistics.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip_id: String,
    pub inputs: ClipInputs,
}

/// A clip ready for waveform-level evaluation.
#[derive(Debug, Clone)]
pub struct EvalClip {
    pub clip_id: String,
    pub inputs: ClipInputs,
    pub mono: AudioClip,
    pub mono_spec: Spectrogram,
    pub gt: BinauralClip,
}

fn check_geometry(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let m = &cfg.model;
    if m.n_views != ds.gen.n_views || m.rays_per_view != ds.gen.rays_per_view {
        return Err(Error::Config(format!(
            "model expects {}x{} rays but the dataset has {}x{}",
            m.n_views, m.rays_per_view, ds.gen.n_views, ds.gen.rays_per_view
        )));
    }
    if cfg.stft.sample_rate != ds.gen.sim.sample_rate {
        return Err(nvas_core::Error::SampleRateMismatch(cfg.stft.sample_rate, ds.gen.sim.sample_rate).into());
    }
    Ok(())
}

fn inputs_for(ds: &Dataset, rec: &ClipRecord, cfg: &TrainConfig) -> Result<(ClipInputs, Spectrogram)> {
    let scene = ds.scene(&rec.scene_ref)?;
    let mono_spec = stft_clip(&rec.mono, &cfg.stft)?;
    let gl = stft_clip(rec.gt.left(), &cfg.stft)?;
    let gr = stft_clip(rec.gt.right(), &cfg.stft)?;
    let target = MagnitudeTarget::new(&mono_spec, &gl, &gr)?;
    let inputs = ClipInputs::new(&rec.render, &rec.desc, &rec.pose, scene.dims, cfg.model.bands, target)?;
    Ok((inputs, mono_spec))
}

pub fn prepare(ds: &Dataset, split: Split, cfg: &TrainConfig) -> Result<Vec<PreparedClip>> {
    check_geometry(ds, cfg)?;
    ds.split(split)
        .iter()
        .map(|id| {
            let rec = ds.load_clip(id)?;
            Ok(PreparedClip { clip_id: id.clone(), inputs: inputs_for(ds, &rec, cfg)?.0 })
        })
        .collect()
}

pub fn prepare_eval(ds: &Dataset, ids: &[String], cfg: &TrainConfig) -> Result<Vec<EvalClip>> {
    check_geometry(ds, cfg)?;
    ids.iter()
        .map(|id| {
            let rec = ds.load_clip(id)?;
            let (inputs, mono_spec) = inputs_for(ds, &rec, cfg)?;
            Ok(EvalClip { clip_id: id.clone(), inputs, mono: rec.mono, mono_spec, gt: rec.gt })
        })
        .collect()
}

/// Mean magnitude-MSE training loss over `clips`.
pub fn mean_loss(model: &PhysModel, features: FeatureSet, clips: &[PreparedClip]) -> Result<f64> {
    let losses = clips.iter().map(|c| model.loss(&c.inputs, features)).collect::<nvas_core::Result<Vec<_>>>()?;
    Ok(nvas_core::metrics::compensated_mean(&losses))
}

pub fn evaluate(model: &PhysModel, features: FeatureSet, clips: &[EvalClip], stft: &StftConfig) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Err(Error::EmptySplit("evaluation".into()));
    }
    let scores = clips
        .iter()
        .map(|c| {
            let pred = model.synthesize(&c.inputs, features, &c.mono_spec, &c.mono, stft)?;
            Ok(ClipScore { clip_id: c.clip_id.clone(), mag: mag_distance(&pred, &c.gt, stft)?, env: env_distance(&pred, &c.gt)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_scores(scores)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean loss over the whole training split at this step.
    pub train_loss: f64,
    pub val_mag: f64,
    pub val_env: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,train_loss,val_mag,val_env\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.step, r.epoch, r.train_loss, r.val_mag, r.val_env).unwrap();
        }
        s
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.train_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MAG seen at a log point.
    pub best: PhysModel,
    pub best_step: usize,
    pub last: PhysModel,
    pub log: TrainLog,
    /// Step whose update would have produced non-finite values.
    pub diverged_at: Option<usize>,
}

/// Cycles through seeded permutations of the training clips.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Sampler { order, pos: 0, epoch: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

pub fn train_prepared(train: &[PreparedClip], val: &[EvalClip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut model = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut adam = AdamState::new(&model, cfg.adam);
    let mut sampler = Sampler::new(train.len(), cfg.seed);
    let mut log = TrainLog::default();

    let record = |model: &PhysModel, step: usize, epoch: usize, log: &mut TrainLog| -> Result<f64> {
        let train_loss = mean_loss(model, cfg.features, train)?;
        let (val_mag, val_env) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(model, cfg.features, val, &cfg.stft)?;
            (r.mag, r.env)
        };
        info!("step {step} epoch {epoch}: train loss {train_loss:.6}, val MAG {val_mag:.6}, val ENV {val_env:.6}");
        log.rows.push(LogRow { step, epoch, train_loss, val_mag, val_env });
        Ok(if val.is_empty() { train_loss } else { val_mag })
    };

    let mut best_score = record(&model, 0, 0, &mut log)?;
    let mut best = model.clone();
    let mut best_step = 0;
    let scale = 1.0 / cfg.batch as f64;
    for step in 1..=cfg.steps {
        let mut grads = model.zeroed();
        let mut diverged = false;
        for _ in 0..cfg.batch {
            match model.loss_and_grad(&train[sampler.next()].inputs, cfg.features, &mut grads) {
                Ok(_) => {}
                Err(nvas_core::Error::Diverged) => diverged = true,
                Err(e) => return Err(e.into()),
            }
        }
        grads.scale(scale);
        if diverged || adam_step(&mut model, &grads, &mut adam).is_err() {
            log::error!("non-finite gradient at step {step}; keeping the best parameters so far");
            return Ok(TrainOutcome { best, best_step, last: model, log, diverged_at: Some(step) });
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let score = record(&model, step, sampler.epoch, &mut log)?;
            if score < best_score {
                best_score = score;
                best = model.clone();
                best_step = step;
            }
        }
    }
    Ok(TrainOutcome { best, best_step, last: model, log, diverged_at: None })
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train = prepare(ds, Split::Train, cfg)?;
    let val = prepare_eval(ds, ds.split(Split::Val), cfg)?;
    train_prepared(&train, &val, cfg)
}
