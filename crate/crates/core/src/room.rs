//! Shoebox room oracle.
//!
//! Ground-truth binaural impulse responses come from the image-source method
//! with per-wall energy absorption and a smooth head-shadow gain per ear. The
//! same scene also yields a horizontal ray-cast render (distance and material
//! per ray) and a templated text description of its objects, which stand in
//! for the visual and language observations of the scene.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, BinauralClip};
use crate::{Error, Result};

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Closed material vocabulary with canonical energy absorption coefficients.
pub const MATERIALS: [(&str, f64); 8] = [
    ("wood", 0.10),
    ("carpet", 0.45),
    ("tile", 0.02),
    ("glass", 0.05),
    ("concrete", 0.03),
    ("fabric", 0.55),
    ("metal", 0.06),
    ("plaster", 0.08),
];

/// Object labels understood by the semantic encoder.
pub const OBJECT_LABELS: [&str; 10] =
    ["table", "sofa", "chair", "bed", "tv", "shelf", "cabinet", "desk", "plant", "lamp"];

pub fn material_id(name: &str) -> Option<usize> {
    MATERIALS.iter().position(|(n, _)| *n == name)
}

pub fn label_id(label: &str) -> Option<usize> {
    OBJECT_LABELS.iter().position(|l| *l == label)
}

/// Adjectival surface form used in descriptions.
pub fn surface_form(material: &str) -> &str {
    match material {
        "wood" => "wooden",
        "carpet" => "carpeted",
        "tile" => "tiled",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Material {
    pub name: String,
    pub absorption: f64,
}

impl Material {
    /// Vocabulary material with its canonical absorption.
    pub fn canonical(name: &str) -> Result<Self> {
        MATERIALS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(n, a)| Material { name: n.to_string(), absorption: a })
            .ok_or_else(|| Error::UnknownMaterial(name.to_string()))
    }

    pub fn with_absorption(name: &str, absorption: f64) -> Self {
        Material { name: name.to_string(), absorption }
    }

    pub fn id(&self) -> Result<usize> {
        material_id(&self.name).ok_or_else(|| Error::UnknownMaterial(self.name.clone()))
    }

    /// Per-bounce pressure gain.
    pub fn reflection_gain(&self) -> f64 {
        libm::sqrt(1.0 - self.absorption)
    }
}

// Scene files may name a material ("tile") or give it explicitly
// ({"name": "tile", "absorption": 0.3}).
impl<'de> Deserialize<'de> for Material {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Full { name: String, absorption: Option<f64> },
        }
        let (name, absorption) = match Repr::deserialize(de)? {
            Repr::Name(name) => (name, None),
            Repr::Full { name, absorption } => (name, absorption),
        };
        match absorption {
            Some(a) => Ok(Material { name, absorption: a }),
            None => Material::canonical(&name).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl AxisBox {
    fn lo(&self, axis: usize) -> f64 {
        self.center[axis] - self.half_extents[axis]
    }

    fn hi(&self, axis: usize) -> f64 {
        self.center[axis] + self.half_extents[axis]
    }

    fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.lo(a) && p[a] <= self.hi(a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub material: Material,
    #[serde(rename = "box")]
    pub bounds: AxisBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub position: Vec3,
}

/// Axis-aligned room spanning `[0, dims]`. Walls are ordered
/// −x, +x, −y, +y, −z, +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub dims: Vec3,
    pub wall_materials: [Material; 6],
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub source: SourceSpec,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad(format!("room dimensions must be positive, got {:?}", self.dims));
        }
        for m in self.wall_materials.iter().chain(self.objects.iter().map(|o| &o.material)) {
            m.id()?;
            if !(0.0..=1.0).contains(&m.absorption) {
                return bad(format!("absorption of `{}` outside [0, 1]", m.name));
            }
        }
        if !self.strictly_inside(self.source.position) {
            return bad("source must lie strictly inside the room".to_string());
        }
        for o in &self.objects {
            let b = &o.bounds;
            if b.half_extents.iter().any(|h| !(*h > 0.0)) {
                return bad(format!("object `{}` has non-positive half-extents", o.label));
            }
            if (0..3).any(|a| b.lo(a) < 0.0 || b.hi(a) > self.dims[a]) {
                return bad(format!("object `{}` extends outside the room", o.label));
            }
        }
        Ok(())
    }

    pub fn strictly_inside(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] > 0.0 && p[a] < self.dims[a])
    }

    pub fn diagonal(&self) -> f64 {
        norm(self.dims)
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListenerPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl ListenerPose {
    /// Unit vector pointing out of the left ear (horizontal).
    pub fn left_axis(&self) -> Vec3 {
        [-libm::sin(self.yaw), libm::cos(self.yaw), 0.0]
    }

    /// The five pose scalars mapped to `[-π, π]`: position scaled by the
    /// room dimensions, then yaw and pitch as-is.
    pub fn normalized(&self, dims: Vec3) -> [f64; 5] {
        let p = |a: usize| PI * (2.0 * self.position[a] / dims[a] - 1.0);
        [p(0), p(1), p(2), self.yaw, self.pitch]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    /// Product of per-bounce pressure gains; zero when a fully absorbing
    /// wall is on the path.
    pub amplitude: f64,
    pub order: usize,
}

/// Position along one axis of image `index` (|index| reflections), and the
/// number of hits on the low and high wall of that axis.
fn axis_image(src: f64, len: f64, index: i64) -> (f64, u32, u32) {
    let pos = if index % 2 == 0 { src + index as f64 * len } else { (index + 1) as f64 * len - src };
    let n = index.unsigned_abs() as u32;
    let (more, fewer) = (n.div_ceil(2), n / 2);
    if index >= 0 {
        (pos, fewer, more)
    } else {
        (pos, more, fewer)
    }
}

pub fn image_sources(scene: &Scene, max_order: usize) -> Vec<ImageSource> {
    let n = max_order as i64;
    let src = scene.source.position;
    let gains: Vec<f64> = scene.wall_materials.iter().map(Material::reflection_gain).collect();
    let mut out = Vec::new();
    for ix in -n..=n {
        for iy in -(n - ix.abs())..=(n - ix.abs()) {
            let rest = n - ix.abs() - iy.abs();
            for iz in -rest..=rest {
                let mut position = [0.0; 3];
                let mut amplitude = 1.0;
                for (axis, idx) in [ix, iy, iz].into_iter().enumerate() {
                    let (p, lo_hits, hi_hits) = axis_image(src[axis], scene.dims[axis], idx);
                    position[axis] = p;
                    amplitude *= powu(gains[2 * axis], lo_hits) * powu(gains[2 * axis + 1], hi_hits);
                }
                let order = (ix.abs() + iy.abs() + iz.abs()) as usize;
                out.push(ImageSource { position, amplitude, order });
            }
        }
    }
    out.sort_by(|a, b| {
        a.order.cmp(&b.order).then_with(|| {
            (0..3)
                .map(|i| a.position[i].total_cmp(&b.position[i]))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
        })
    });
    out
}

fn powu(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    pub max_order: usize,
    pub ear_offset: f64,
    /// Seconds.
    pub ir_length: f64,
    pub min_distance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_rate: 16_000,
            speed_of_sound: 343.0,
            max_order: 2,
            ear_offset: 0.09,
            ir_length: 0.25,
            min_distance: 0.1,
        }
    }
}

impl SimConfig {
    pub fn ir_samples(&self) -> usize {
        libm::round(self.ir_length * self.sample_rate as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinauralIr {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

impl BinauralIr {
    pub fn channels(&self) -> [&[f64]; 2] {
        [&self.left, &self.right]
    }
}

/// Head-shadow gain for an arrival at angle `theta` from the ear's outward axis.
pub fn head_shadow(cos_theta: f64) -> f64 {
    0.65 + 0.35 * cos_theta
}

/// Left and right ear positions.
pub fn ear_positions(pose: &ListenerPose, ear_offset: f64) -> [Vec3; 2] {
    let l = pose.left_axis();
    let p = pose.position;
    [
        [p[0] + ear_offset * l[0], p[1] + ear_offset * l[1], p[2]],
        [p[0] - ear_offset * l[0], p[1] - ear_offset * l[1], p[2]],
    ]
}

pub fn binaural_ir(scene: &Scene, pose: &ListenerPose, cfg: &SimConfig) -> Result<BinauralIr> {
    let ears = ear_positions(pose, cfg.ear_offset);
    if !ears.iter().all(|&e| scene.strictly_inside(e)) {
        return Err(Error::ListenerTooClose);
    }
    let left_axis = pose.left_axis();
    let outward = [left_axis, [-left_axis[0], -left_axis[1], -left_axis[2]]];
    let len = cfg.ir_samples();
    let mut irs = [vec![0.0; len], vec![0.0; len]];
    let samples_per_meter = cfg.sample_rate as f64 / cfg.speed_of_sound;
    for img in image_sources(scene, cfg.max_order) {
        if img.amplitude == 0.0 {
            continue;
        }
        for ch in 0..2 {
            let arrival = sub(img.position, ears[ch]);
            let r = norm(arrival);
            let cos_theta = if r > 0.0 { dot(outward[ch], arrival) / r } else { 1.0 };
            let gain = img.amplitude * head_shadow(cos_theta) / r.max(cfg.min_distance);
            let delay = r * samples_per_meter;
            let base = libm::floor(delay);
            let frac = delay - base;
            let idx = base as usize;
            if idx < len {
                irs[ch][idx] += gain * (1.0 - frac);
            }
            if idx + 1 < len {
                irs[ch][idx + 1] += gain * frac;
            }
        }
    }
    let [left, right] = irs;
    Ok(BinauralIr { left, right, sample_rate: cfg.sample_rate })
}

/// Causal convolution truncated to the input length. Zero taps are skipped,
/// which keeps sparse image-source responses cheap.
pub fn convolve_truncated(x: &[f64], ir: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, &h) in ir.iter().enumerate() {
        if h == 0.0 || k >= x.len() {
            continue;
        }
        for (o, &v) in out[k..].iter_mut().zip(x) {
            *o += h * v;
        }
    }
    out
}

pub fn render_binaural(mono: &AudioClip, ir: &BinauralIr) -> Result<BinauralClip> {
    if mono.sample_rate() != ir.sample_rate {
        return Err(Error::SampleRateMismatch(mono.sample_rate(), ir.sample_rate));
    }
    if ir.left.is_empty() || ir.right.is_empty() {
        return Err(Error::EmptySignal);
    }
    let ch = |h: &[f64]| AudioClip::new(convolve_truncated(mono.samples(), h), mono.sample_rate());
    BinauralClip::new(ch(&ir.left)?, ch(&ir.right)?)
}

/// Horizontal field of view covered by one rendered view.
pub const VIEW_FOV: f64 = PI / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub distance: f64,
    pub material_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub yaw_offset: f64,
    pub rays: Vec<Ray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewRender {
    pub views: Vec<View>,
    pub room_diagonal: f64,
}

impl MultiViewRender {
    pub fn rays_per_view(&self) -> usize {
        self.views.first().map_or(0, |v| v.rays.len())
    }
}

pub fn view_yaw_offset(view: usize, n_views: usize) -> f64 {
    2.0 * PI * view as f64 / n_views as f64
}

fn ray_angle(yaw: f64, view: usize, n_views: usize, ray: usize, rays: usize) -> f64 {
    yaw + view_yaw_offset(view, n_views) + VIEW_FOV * ((ray as f64 + 0.5) / rays as f64 - 0.5)
}

/// Nearest hit of a horizontal ray with the side walls or any object box.
fn cast(scene: &Scene, origin: Vec3, angle: f64) -> Result<Ray> {
    let dir = [libm::cos(angle), libm::sin(angle)];
    let mut best = f64::INFINITY;
    let mut material = 0;
    for axis in 0..2 {
        let d = dir[axis];
        if d.abs() < 1e-15 {
            continue;
        }
        let (wall, plane) = if d > 0.0 { (2 * axis + 1, scene.dims[axis]) } else { (2 * axis, 0.0) };
        let t = (plane - origin[axis]) / d;
        if t > 0.0 && t < best {
            best = t;
            material = scene.wall_materials[wall].id()?;
        }
    }
    for obj in &scene.objects {
        let b = &obj.bounds;
        if origin[2] < b.lo(2) || origin[2] > b.hi(2) || b.contains(origin) {
            continue;
        }
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        let mut hit = true;
        for axis in 0..2 {
            let d = dir[axis];
            if d.abs() < 1e-15 {
                if origin[axis] < b.lo(axis) || origin[axis] > b.hi(axis) {
                    hit = false;
                }
                continue;
            }
            let (a, c) = ((b.lo(axis) - origin[axis]) / d, (b.hi(axis) - origin[axis]) / d);
            t0 = t0.max(a.min(c));
            t1 = t1.min(a.max(c));
        }
        if hit && t0 <= t1 && t0 > 0.0 && t0 < best {
            best = t0;
            material = obj.material.id()?;
        }
    }
    Ok(Ray { distance: best, material_id: material })
}

pub fn depth_render(scene: &Scene, pose: &ListenerPose, n_views: usize, rays_per_view: usize) -> Result<MultiViewRender> {
    if n_views == 0 || rays_per_view == 0 {
        return Err(Error::InvalidConfig("render needs at least one view and one ray"));
    }
    if !scene.strictly_inside(pose.position) {
        return Err(Error::PoseOutsideRoom);
    }
    let yaw = {
        let r = libm::fmod(pose.yaw, 2.0 * PI);
        if r < 0.0 { r + 2.0 * PI } else { r }
    };
    let views = (0..n_views)
        .map(|v| {
            let rays = (0..rays_per_view)
                .map(|r| cast(scene, pose.position, ray_angle(yaw, v, n_views, r, rays_per_view)))
                .collect::<Result<Vec<_>>>()?;
            Ok(View { yaw_offset: view_yaw_offset(v, n_views), rays })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiViewRender { views, room_diagonal: scene.diagonal() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub label: String,
    pub material: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysDescription {
    pub text: String,
    pub attributes: Vec<Attribute>,
    pub template_id: String,
}

/// Identifier of the fixed description template.
pub const TEMPLATE_ID: &str = "objects-layout-materials/v1";

pub fn size_class(volume: f64) -> &'static str {
    if volume < 40.0 {
        "small"
    } else if volume < 120.0 {
        "medium"
    } else {
        "large"
    }
}

/// Relation of a point to the listener's heading, in the horizontal plane.
pub fn relation(pose: &ListenerPose, target: Vec3) -> &'static str {
    let d = sub(target, pose.position);
    let mut phi = libm::atan2(d[1], d[0]) - pose.yaw;
    phi = libm::remainder(phi, 2.0 * PI);
    let a = phi.abs();
    if a <= PI / 4.0 {
        "in front of"
    } else if a >= 3.0 * PI / 4.0 {
        "behind"
    } else if phi > 0.0 {
        "left of"
    } else {
        "right of"
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn describe_scene(scene: &Scene, pose: &ListenerPose) -> PhysDescription {
    let mut text = format!("The listener is in a {} room.", size_class(scene.volume()));
    let mut attributes = Vec::with_capacity(scene.objects.len());
    for obj in &scene.objects {
        let rel = relation(pose, obj.bounds.center);
        text.push_str(&format!(
            " {} the listener, there is a {} {}.",
            capitalize(rel),
            surface_form(&obj.material.name),
            obj.label
        ));
        attributes.push(Attribute {
            label: obj.label.clone(),
            material: obj.material.name.clone(),
            relation: rel.to_string(),
        });
    }
    PhysDescription { text, attributes, template_id: TEMPLATE_ID.to_string() }
}

/// Minimum listener distance from every wall.
pub const WALL_MARGIN: f64 = 0.3;

pub fn sample_pose<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Result<ListenerPose> {
    if scene.dims.iter().any(|&d| d <= 2.0 * WALL_MARGIN) {
        return Err(Error::RoomTooSmall);
    }
    let mut position = [0.0; 3];
    for (p, &d) in position.iter_mut().zip(&scene.dims) {
        *p = WALL_MARGIN + rng.gen::<f64>() * (d - 2.0 * WALL_MARGIN);
    }
    let yaw = -PI + 2.0 * PI * rng.gen::<f64>();
    Ok(ListenerPose { position, yaw, pitch: 0.0 })
}
