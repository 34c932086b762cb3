//! The full pipeline: encoders, fusion adapter and generator as one
//! parameter set, with a feature-subset switch for ablations.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::dsp::{AudioClip, BinauralClip, Spectrogram, StftConfig};
use crate::encoders::{
    depth_summary, encode_features, encode_phys_tokens, encoder_backward, fuse_backward, fuse_with_cache, phys_backward, phys_tokens,
    rgb_input, AdapterParams, EmbeddingTable, EncoderParams, FeatureSource, FeatureVector, FusedFeature, DEPTH_FEATURES_PER_VIEW,
    N_MATERIALS,
};
use crate::generator::{
    conditioning, magnitude_loss, masks_backward, predict_masks_with_cache, synthesize_with_masks, GenParams, MagnitudeTarget,
    MaskPair,
};
use crate::nn::{join, positional_encoding, Parameters, PoseEncoding};
use crate::room::{ListenerPose, MultiViewRender, PhysDescription};
use crate::{Error, Result};

/// Which feature branches feed the adapter. Excluded branches contribute
/// the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet {
    pub rgb: bool,
    pub dep: bool,
    pub sem: bool,
}

impl FeatureSet {
    pub const NONE: FeatureSet = FeatureSet { rgb: false, dep: false, sem: false };
    pub const ALL: FeatureSet = FeatureSet { rgb: true, dep: true, sem: true };

    /// All eight subsets, from the empty set to the full set.
    pub fn all_subsets() -> [FeatureSet; 8] {
        let mut out = [FeatureSet::NONE; 8];
        let order = [0b000, 0b100, 0b010, 0b001, 0b110, 0b101, 0b011, 0b111];
        for (slot, bits) in out.iter_mut().zip(order) {
            *slot = FeatureSet { rgb: bits & 0b100 != 0, dep: bits & 0b010 != 0, sem: bits & 0b001 != 0 };
        }
        out
    }

    pub fn count(&self) -> usize {
        self.rgb as usize + self.dep as usize + self.sem as usize
    }

    pub fn is_subset_of(&self, other: &FeatureSet) -> bool {
        (!self.rgb || other.rgb) && (!self.dep || other.dep) && (!self.sem || other.sem)
    }

    /// Parses a comma list such as `rgb,dep,sem`; `none` or an empty string
    /// selects nothing.
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = FeatureSet::NONE;
        for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "rgb" => set.rgb = true,
                "dep" | "depth" => set.dep = true,
                "sem" => set.sem = true,
                "none" => {}
                _ => return Err(Error::InvalidConfig("unknown feature name")),
            }
        }
        Ok(set)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.rgb, "rgb"), (self.dep, "dep"), (self.sem, "sem")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub adapter_hidden: usize,
    pub trunk_hidden: Vec<usize>,
    pub bands: usize,
    pub n_views: usize,
    pub rays_per_view: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { feature_dim: 64, adapter_hidden: 128, trunk_hidden: vec![64, 32], bands: 4, n_views: 4, rays_per_view: 16 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.adapter_hidden == 0 || self.bands == 0 || self.n_views == 0 || self.rays_per_view == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive"));
        }
        if self.trunk_hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("trunk layer widths must be positive"));
        }
        Ok(())
    }
}

/// Everything the model needs from one clip, precomputed once.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInputs {
    pub rgb_in: Vec<f64>,
    pub depth_in: Vec<f64>,
    pub tokens: Vec<(usize, usize)>,
    pub pose: PoseEncoding,
    pub target: MagnitudeTarget,
}

impl ClipInputs {
    pub fn new(
        render: &MultiViewRender,
        desc: &PhysDescription,
        pose: &ListenerPose,
        dims: [f64; 3],
        bands: usize,
        target: MagnitudeTarget,
    ) -> Result<Self> {
        Ok(ClipInputs {
            rgb_in: rgb_input(render)?,
            depth_in: depth_summary(render)?,
            tokens: phys_tokens(desc)?,
            pose: positional_encoding(&pose.normalized(dims), bands),
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysModel {
    pub rgb: EncoderParams,
    pub depth: EncoderParams,
    pub phys: EmbeddingTable,
    pub adapter: AdapterParams,
    pub gen: GenParams,
}

impl PhysModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.feature_dim;
        Ok(PhysModel {
            rgb: EncoderParams::glorot(cfg.n_views * N_MATERIALS, m, rng),
            depth: EncoderParams::glorot(cfg.n_views * DEPTH_FEATURES_PER_VIEW, m, rng),
            phys: EmbeddingTable::random(m, rng),
            adapter: AdapterParams::glorot(m, cfg.adapter_hidden, rng),
            gen: GenParams::new(m, cfg.bands, &cfg.trunk_hidden, rng),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.adapter.feature_dim()
    }

    fn forward(&self, clip: &ClipInputs, features: FeatureSet) -> Result<Forward> {
        let m = self.feature_dim();
        let encode = |on: bool, input: &[f64], enc: &EncoderParams, source| -> Result<_> {
            if on {
                let (f, cache) = encode_features(input, enc, source)?;
                Ok((f, Some(cache)))
            } else {
                Ok((FeatureVector::zeros(m, source), None))
            }
        };
        let (f_rgb, rgb_cache) = encode(features.rgb, &clip.rgb_in, &self.rgb, FeatureSource::Rgb)?;
        let (f_dep, dep_cache) = encode(features.dep, &clip.depth_in, &self.depth, FeatureSource::Depth)?;
        let f_sem = if features.sem { encode_phys_tokens(&clip.tokens, &self.phys) } else { FeatureVector::zeros(m, FeatureSource::Phys) };
        let (fused, fuse_cache) = fuse_with_cache(&f_rgb, &f_dep, &f_sem, &self.adapter)?;
        let masks = predict_masks_with_cache(&self.gen, &conditioning(&fused, &clip.pose), clip.target.bins)?;
        Ok(Forward { f_sem, fused, fuse_cache, rgb_cache, dep_cache, masks })
    }

    pub fn fused_feature(&self, clip: &ClipInputs, features: FeatureSet) -> Result<FusedFeature> {
        Ok(self.forward(clip, features)?.fused)
    }

    pub fn predict_masks(&self, clip: &ClipInputs, features: FeatureSet) -> Result<MaskPair> {
        Ok(self.forward(clip, features)?.masks.masks().clone())
    }

    pub fn loss(&self, clip: &ClipInputs, features: FeatureSet) -> Result<f64> {
        let fwd = self.forward(clip, features)?;
        Ok(magnitude_loss(fwd.masks.masks(), &clip.target)?.0)
    }

    /// Magnitude-MSE loss of one clip; gradients are added into `grads`.
    pub fn loss_and_grad(&self, clip: &ClipInputs, features: FeatureSet, grads: &mut PhysModel) -> Result<f64> {
        let fwd = self.forward(clip, features)?;
        let (loss, dm, dd) = magnitude_loss(fwd.masks.masks(), &clip.target)?;
        if !loss.is_finite() {
            return Err(Error::Diverged);
        }
        let gcond = masks_backward(&self.gen, &fwd.masks, &dm, &dd, &mut grads.gen)?;
        let m = self.feature_dim();
        let fg = fuse_backward(&self.adapter, &fwd.fuse_cache, &gcond[..m], &mut grads.adapter)?;
        if let Some(cache) = &fwd.rgb_cache {
            encoder_backward(&self.rgb, cache, &fg.rgb, &mut grads.rgb)?;
        }
        if let Some(cache) = &fwd.dep_cache {
            encoder_backward(&self.depth, cache, &fg.depth, &mut grads.depth)?;
        }
        if features.sem {
            phys_backward(&clip.tokens, &fwd.f_sem, &fg.phys, &mut grads.phys);
        }
        Ok(loss)
    }

    pub fn synthesize(
        &self,
        clip: &ClipInputs,
        features: FeatureSet,
        mono_spec: &Spectrogram,
        mono: &AudioClip,
        cfg: &StftConfig,
    ) -> Result<BinauralClip> {
        let masks = self.predict_masks(clip, features)?;
        synthesize_with_masks(mono_spec, &masks, mono.len(), cfg)
    }
}

struct Forward {
    f_sem: FeatureVector,
    fused: FusedFeature,
    fuse_cache: crate::encoders::FuseCache,
    rgb_cache: Option<crate::nn::MlpCache>,
    dep_cache: Option<crate::nn::MlpCache>,
    masks: crate::generator::MaskCache,
}

impl Parameters for PhysModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.rgb.visit(&join(prefix, "rgb"), f);
        self.depth.visit(&join(prefix, "depth"), f);
        self.phys.visit(&join(prefix, "phys"), f);
        self.adapter.visit(&join(prefix, "adapter"), f);
        self.gen.visit(&join(prefix, "gen"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.rgb.visit_mut(&join(prefix, "rgb"), f);
        self.depth.visit_mut(&join(prefix, "depth"), f);
        self.phys.visit_mut(&join(prefix, "phys"), f);
        self.adapter.visit_mut(&join(prefix, "adapter"), f);
        self.gen.visit_mut(&join(prefix, "gen"), f);
    }
}

/// Names of every tensor in visit order.
pub fn tensor_names<P: Parameters>(params: &P) -> Vec<String> {
    let mut names = Vec::new();
    params.visit("", &mut |n, _| names.push(String::from(n)));
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, Window};
    use alloc::string::ToString;
    use crate::nn::{grad_check, Activation, Dense};
    use crate::room::{depth_render, describe_scene, Material, ObjectSpec, AxisBox, Scene, SourceSpec};
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Scene {
        Scene {
            name: "box".into(),
            dims: [5.0, 4.0, 3.0],
            wall_materials: [
                Material::canonical("wood").unwrap(),
                Material::canonical("glass").unwrap(),
                Material::canonical("carpet").unwrap(),
                Material::canonical("tile").unwrap(),
                Material::canonical("carpet").unwrap(),
                Material::canonical("plaster").unwrap(),
            ],
            objects: vec![ObjectSpec {
                label: "sofa".into(),
                material: Material::canonical("fabric").unwrap(),
                bounds: AxisBox { center: [4.0, 1.0, 0.5], half_extents: [0.5, 0.8, 0.5] },
            }],
            source: SourceSpec { position: [1.0, 3.0, 1.5] },
        }
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig { feature_dim: 6, adapter_hidden: 5, trunk_hidden: vec![7], bands: 2, n_views: 2, rays_per_view: 4 }
    }

    fn clip(seed: u64, cfg: &ModelConfig) -> ClipInputs {
        let s = scene();
        let pose = ListenerPose { position: [2.0 + 0.1 * seed as f64, 2.0, 1.5], yaw: 0.3 * seed as f64, pitch: 0.0 };
        let render = depth_render(&s, &pose, cfg.n_views, cfg.rays_per_view).unwrap();
        let desc = describe_scene(&s, &pose);
        let stft_cfg = StftConfig { sample_rate: 16_000, n_fft: 32, hop: 8, window: Window::Hann };
        let x: Vec<f64> = (0..200).map(|i| libm::sin(2.0 * PI * (0.05 + 0.01 * seed as f64) * i as f64)).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.7 * v + 0.1 * libm::cos(0.3 * i as f64)).collect();
        let target =
            MagnitudeTarget::new(&stft(&x, &stft_cfg).unwrap(), &stft(&y, &stft_cfg).unwrap(), &stft(&x, &stft_cfg).unwrap().scaled(1.4))
                .unwrap();
        ClipInputs::new(&render, &desc, &pose, s.dims, cfg.bands, target).unwrap()
    }

    /// Random nonzero output layer so every parameter receives gradient.
    fn live_model(seed: u64, cfg: &ModelConfig) -> PhysModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = PhysModel::new(cfg, &mut rng).unwrap();
        let last = model.gen.trunk.layers.len() - 1;
        let inp = model.gen.trunk.layers[last].in_dim;
        model.gen.trunk.layers[last] = Dense::glorot(inp, 2, Activation::Identity, &mut rng);
        model
    }

    #[test]
    fn subsets() {
        let all = FeatureSet::all_subsets();
        assert_eq!(all[0], FeatureSet::NONE);
        assert_eq!(all[7], FeatureSet::ALL);
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
            assert_eq!(FeatureSet::parse(&a.to_string()).unwrap(), *a);
        }
        assert_eq!(FeatureSet::parse("rgb, sem").unwrap(), FeatureSet { rgb: true, dep: false, sem: true });
        assert!(FeatureSet::parse("audio").is_err());
    }

    #[test]
    fn end_to_end_grad_check() {
        let cfg = small_cfg();
        for seed in 0..3 {
            let model = live_model(seed, &cfg);
            let c = clip(seed, &cfg);
            let loss = |p: &PhysModel| {
                let mut g = p.zeroed();
                let l = p.loss_and_grad(&c, FeatureSet::ALL, &mut g).unwrap();
                (l, g)
            };
            let err = grad_check(&model, loss, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn excluded_branches_get_zero_gradient() {
        let cfg = small_cfg();
        let model = live_model(3, &cfg);
        let c = clip(1, &cfg);
        for set in FeatureSet::all_subsets() {
            let mut g = model.zeroed();
            model.loss_and_grad(&c, set, &mut g).unwrap();
            let nonzero = |p: &dyn Fn(&mut dyn FnMut(&str, &[f64]))| {
                let mut any = false;
                p(&mut |_, t| any |= t.iter().any(|&v| v != 0.0));
                any
            };
            assert_eq!(nonzero(&|f| g.rgb.visit("", f)), set.rgb, "{set}");
            assert_eq!(nonzero(&|f| g.depth.visit("", f)), set.dep, "{set}");
            assert_eq!(nonzero(&|f| g.phys.visit("", f)), set.sem, "{set}");
            assert!(nonzero(&|f| g.gen.visit("", f)));
        }
    }

    #[test]
    fn fresh_model_is_identity_and_subset_blind() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = PhysModel::new(&cfg, &mut rng).unwrap();
        let c = clip(2, &cfg);
        let reference = model.predict_masks(&c, FeatureSet::NONE).unwrap();
        assert_eq!(reference, MaskPair::identity(c.target.bins));
        for set in FeatureSet::all_subsets() {
            assert_eq!(model.predict_masks(&c, set).unwrap(), reference);
        }
    }

    #[test]
    fn tensor_names_are_unique_and_prefixed() {
        let cfg = small_cfg();
        let model = live_model(0, &cfg);
        let names = tensor_names(&model);
        for (i, a) in names.iter().enumerate() {
            assert!(!names[i + 1..].contains(a), "{a}");
        }
        assert!(names.contains(&String::from("gen.layer0.weight")));
        assert!(names.contains(&String::from("adapter.geo.layer1.bias")));
        assert!(names.contains(&String::from("phys.embedding")));
    }
}
