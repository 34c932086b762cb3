//! Synthetic dataset generation and loading.
//!
//! ```text
//! <out>/manifest.json
//! <out>/clips/<clip_id>/{mono.wav, gt.wav, pose.json, render.pftb, desc.json}
//! ```
//! `render.pftb` holds a `[views, rays, 2]` tensor of (distance, material id).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nvas_core::dsp::{AudioClip, BinauralClip};
use nvas_core::room::{
    binaural_ir, depth_render, describe_scene, render_binaural, sample_pose, view_yaw_offset, ListenerPose, MultiViewRender,
    PhysDescription, Ray, Scene, View,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GenConfig;
use crate::error::{Error, IoContext, Result};
use crate::pftb::{self, Tensor};
use crate::wav;

pub const MANIFEST_VERSION: u32 = 1;
/// Peak level of every generated source signal.
pub const SOURCE_PEAK: f64 = 0.25;
const MAX_POSE_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub file: String,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub scene: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub master_seed: u64,
    pub scenes: Vec<SceneEntry>,
    pub clips: Vec<ClipMeta>,
    pub split: SplitLists,
    /// Snapshot of the generation config in key-value form.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub scene_ref: String,
    pub pose: ListenerPose,
    pub mono: AudioClip,
    pub gt: BinauralClip,
    pub render: MultiViewRender,
    pub desc: PhysDescription,
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).at(path)?;
    let scene: Scene = serde_json::from_str(&text)?;
    scene.validate()?;
    Ok(scene)
}

/// Every `*.json` file in `dir`, sorted by file name.
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneEntry>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| Ok(SceneEntry { file: p.file_name().unwrap().to_string_lossy().into_owned(), scene: load_scene(p)? }))
        .collect()
}

fn clip_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

/// Three tones plus band-limited noise bursts, normalized to
/// [`SOURCE_PEAK`].
pub fn synth_source<R: Rng + ?Sized>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut x = vec![0.0; len];
    for _ in 0..3 {
        let f = (rng.gen_range(150f64.ln()..4000f64.ln())).exp();
        let a = rng.gen_range(0.3..1.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += a * (2.0 * PI * f * i as f64 / sr + phase).sin();
        }
    }
    let bursts = rng.gen_range(3..=6);
    for _ in 0..bursts {
        let dur = ((rng.gen_range(0.05..0.25) * sr) as usize).clamp(2, len.max(2));
        let start = rng.gen_range(0..len.saturating_sub(dur).max(1));
        let amp = rng.gen_range(0.5..1.5);
        // Difference of two one-pole lowpasses gives a crude band-pass.
        let fast = rng.gen_range(0.2..0.9);
        let slow = fast * rng.gen_range(0.05..0.5);
        let (mut lp_fast, mut lp_slow) = (0.0, 0.0);
        for j in 0..dur.min(len - start) {
            let w: f64 = rng.gen_range(-1.0..1.0);
            lp_fast += fast * (w - lp_fast);
            lp_slow += slow * (w - lp_slow);
            let env = 0.5 - 0.5 * (2.0 * PI * j as f64 / dur as f64).cos();
            x[start + j] += amp * 3.0 * env * (lp_fast - lp_slow);
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= SOURCE_PEAK / peak);
    }
    x
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Listener pose for clip `index`, redrawn while it sits too close to the
/// source.
fn draw_pose<R: Rng + ?Sized>(scene: &Scene, cfg: &GenConfig, rng: &mut R) -> Result<ListenerPose> {
    for _ in 0..MAX_POSE_DRAWS {
        let pose = sample_pose(scene, rng)?;
        if distance(pose.position, scene.source.position) >= cfg.min_source_distance {
            return Ok(pose);
        }
    }
    Err(nvas_core::Error::InvalidScene(format!("no valid listener pose in `{}`", scene.name)).into())
}

/// Everything stored for one clip, computed in memory.
pub fn synthesize_clip(scene: &Scene, cfg: &GenConfig, master_seed: u64, index: usize, clip_id: String) -> Result<ClipRecord> {
    let mut rng = clip_rng(master_seed, index);
    let pose = draw_pose(scene, cfg, &mut rng)?;
    let sr = cfg.sim.sample_rate;
    let mono = AudioClip::new(wav::quantize(&synth_source(&mut rng, cfg.clip_samples(), sr)), sr)?;
    let gt = oracle_render(scene, &pose, &mono, cfg)?;
    let render = quantize_render(&depth_render(scene, &pose, cfg.n_views, cfg.rays_per_view)?);
    let desc = describe_scene(scene, &pose);
    Ok(ClipRecord { clip_id, scene_ref: scene.name.clone(), pose, mono, gt, render, desc })
}

/// Ground-truth binaural audio at file precision.
pub fn oracle_render(scene: &Scene, pose: &ListenerPose, mono: &AudioClip, cfg: &GenConfig) -> Result<BinauralClip> {
    let ir = binaural_ir(scene, pose, &cfg.sim)?;
    let gt = render_binaural(mono, &ir)?;
    let q = |c: &AudioClip| AudioClip::new(wav::quantize(c.samples()), c.sample_rate());
    Ok(BinauralClip::new(q(gt.left())?, q(gt.right())?)?)
}

fn quantize_render(r: &MultiViewRender) -> MultiViewRender {
    let mut out = r.clone();
    for v in &mut out.views {
        for ray in &mut v.rays {
            ray.distance = ray.distance as f32 as f64;
        }
    }
    out
}

pub fn render_tensor(r: &MultiViewRender) -> Result<Tensor> {
    let rays = r.rays_per_view();
    let mut data = Vec::with_capacity(r.views.len() * rays * 2);
    for v in &r.views {
        for ray in &v.rays {
            data.push(ray.distance);
            data.push(ray.material_id as f64);
        }
    }
    Tensor::from_f64(vec![r.views.len(), rays, 2], &data)
}

pub fn render_from_tensor(t: &Tensor, scene: &Scene) -> Result<MultiViewRender> {
    if t.rank() != 3 || t.dims[2] != 2 {
        return Err(Error::Format(format!("render tensor must be [views, rays, 2], got {:?}", t.dims)));
    }
    let (nv, nr) = (t.dims[0], t.dims[1]);
    let views = (0..nv)
        .map(|v| View {
            yaw_offset: view_yaw_offset(v, nv),
            rays: (0..nr)
                .map(|r| {
                    let i = 2 * (v * nr + r);
                    Ray { distance: t.data[i] as f64, material_id: t.data[i + 1] as usize }
                })
                .collect(),
        })
        .collect();
    Ok(MultiViewRender { views, room_diagonal: scene.diagonal() })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
}

fn write_clip(dir: &Path, clip: &ClipRecord) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    wav::write_mono(&dir.join("mono.wav"), &clip.mono)?;
    wav::write_binaural(&dir.join("gt.wav"), &clip.gt)?;
    write_json(&dir.join("pose.json"), &clip.pose)?;
    pftb::write(&dir.join("render.pftb"), &render_tensor(&clip.render)?)?;
    write_json(&dir.join("desc.json"), &clip.desc)
}

/// Clips are assigned to scenes round-robin; the split is a seeded shuffle
/// with `round(n · val_fraction)` validation clips.
pub fn gen_dataset(scenes: &[SceneEntry], out: &Path, cfg: &GenConfig, master_seed: u64, n_clips: usize) -> Result<DatasetManifest> {
    if scenes.is_empty() {
        return Err(Error::Config("at least one scene is required".into()));
    }
    cfg.validate()?;
    for s in scenes {
        s.scene.validate()?;
    }
    let clips_dir = out.join("clips");
    fs::create_dir_all(&clips_dir).at(&clips_dir)?;
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let scene = &scenes[i % scenes.len()].scene;
        let clip_id = format!("{}-{i:04}", scene.name);
        let record = synthesize_clip(scene, cfg, master_seed, i, clip_id.clone())?;
        write_clip(&clips_dir.join(&clip_id), &record)?;
        clips.push(ClipMeta { clip_id, scene: scene.name.clone(), index: i });
    }
    let mut ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::MAX);
    ids.shuffle(&mut rng);
    let n_val = (n_clips as f64 * cfg.val_fraction).round() as usize;
    let mut val = ids.split_off(n_clips - n_val);
    ids.sort();
    val.sort();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        master_seed,
        scenes: scenes.to_vec(),
        clips,
        split: SplitLists { train: ids, val },
        config: cfg.to_text(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub gen: GenConfig,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
        }
        let gen = GenConfig::from_text(&manifest.config)?;
        Ok(Dataset { root: root.to_path_buf(), manifest, gen })
    }

    pub fn scene(&self, name: &str) -> Result<&Scene> {
        self.manifest
            .scenes
            .iter()
            .map(|s| &s.scene)
            .find(|s| s.name == name)
            .ok_or_else(|| nvas_core::Error::InvalidScene(format!("unknown scene `{name}`")).into())
    }

    pub fn meta(&self, clip_id: &str) -> Result<&ClipMeta> {
        self.manifest.clips.iter().find(|c| c.clip_id == clip_id).ok_or_else(|| Error::UnknownClip(clip_id.to_string()))
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.manifest.split.train,
            Split::Val => &self.manifest.split.val,
        }
    }

    pub fn clip_dir(&self, clip_id: &str) -> PathBuf {
        self.root.join("clips").join(clip_id)
    }

    pub fn load_clip(&self, clip_id: &str) -> Result<ClipRecord> {
        let meta = self.meta(clip_id)?;
        let scene = self.scene(&meta.scene)?;
        let dir = self.clip_dir(clip_id);
        Ok(ClipRecord {
            clip_id: clip_id.to_string(),
            scene_ref: meta.scene.clone(),
            pose: read_json(&dir.join("pose.json"))?,
            mono: wav::read_mono(&dir.join("mono.wav"))?,
            gt: wav::read_binaural(&dir.join("gt.wav"))?,
            render: render_from_tensor(&pftb::read(&dir.join("render.pftb"))?, scene)?,
            desc: read_json(&dir.join("desc.json"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_is_seeded_and_normalized() {
        let a = synth_source(&mut clip_rng(3, 7), 16_000, 16_000);
        let b = synth_source(&mut clip_rng(3, 7), 16_000, 16_000);
        let c = synth_source(&mut clip_rng(3, 8), 16_000, 16_000);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - SOURCE_PEAK).abs() < 1e-12);
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert_eq!(Split::Train.to_string(), "train");
        assert!("test".parse::<Split>().is_err());
    }
}
