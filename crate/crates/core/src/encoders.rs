//! Feature encoders and the acoustic feature fusion adapter.
//!
//! Each observation channel has a fixed featurizer followed by a learned map
//! into the shared `M`-dimensional feature space:
//!
//! * appearance: per-view material histograms → dense + tanh
//! * depth: per-view distance summary and diagonal-normalized histogram →
//!   dense + tanh
//! * semantics: mean of embedding rows for every (material, label) pair in
//!   the scene description → tanh
//!
//! The adapter sends `concat(F_rgb, F_depth)` through one MLP and `F_phys`
//! through another, and adds the two outputs.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{mlp_backward_into, mlp_forward, Activation, Dense, MlpCache, MlpParams, Parameters};
use crate::room::{label_id, material_id, MultiViewRender, PhysDescription, MATERIALS, OBJECT_LABELS};
use crate::{Error, Result};

pub const N_MATERIALS: usize = MATERIALS.len();
pub const DEPTH_BINS: usize = 8;
/// min, max, mean, then the histogram.
pub const DEPTH_FEATURES_PER_VIEW: usize = 3 + DEPTH_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Rgb,
    Depth,
    Phys,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureVector {
    pub fn zeros(dim: usize, source: FeatureSource) -> Self {
        FeatureVector { values: vec![0.0; dim], source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub values: Vec<f64>,
}

/// Material counts per view, concatenated: `views × N_MATERIALS`.
pub fn material_histogram(render: &MultiViewRender) -> Result<Vec<f64>> {
    if render.views.is_empty() {
        return Err(Error::InvalidConfig("render has no views"));
    }
    let mut out = vec![0.0; render.views.len() * N_MATERIALS];
    for (v, view) in render.views.iter().enumerate() {
        for ray in &view.rays {
            if ray.material_id >= N_MATERIALS {
                return Err(Error::UnknownMaterialId(ray.material_id));
            }
            out[v * N_MATERIALS + ray.material_id] += 1.0;
        }
    }
    Ok(out)
}

/// Per view: min, max and mean distance in meters, then an 8-bin histogram
/// of `distance / room_diagonal` over `(0, 1]` as ray fractions.
pub fn depth_summary(render: &MultiViewRender) -> Result<Vec<f64>> {
    if render.views.is_empty() {
        return Err(Error::InvalidConfig("render has no views"));
    }
    let diag = render.room_diagonal;
    if !(diag > 0.0) {
        return Err(Error::NonPositiveDistance(diag));
    }
    let mut out = Vec::with_capacity(render.views.len() * DEPTH_FEATURES_PER_VIEW);
    for view in &render.views {
        if view.rays.is_empty() {
            return Err(Error::InvalidConfig("view has no rays"));
        }
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, 0.0f64, 0.0);
        let mut hist = [0.0; DEPTH_BINS];
        for ray in &view.rays {
            let d = ray.distance;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NonPositiveDistance(d));
            }
            lo = lo.min(d);
            hi = hi.max(d);
            sum += d;
            let bin = libm::floor(d / diag * DEPTH_BINS as f64) as usize;
            hist[bin.min(DEPTH_BINS - 1)] += 1.0;
        }
        let n = view.rays.len() as f64;
        out.extend_from_slice(&[lo, hi, sum / n]);
        out.extend(hist.iter().map(|c| c / n));
    }
    Ok(out)
}

/// Learned single-layer map from a fixed featurizer to the feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub net: MlpParams,
}

impl EncoderParams {
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, feature_dim: usize, rng: &mut R) -> Self {
        EncoderParams { net: MlpParams { layers: vec![Dense::glorot(in_dim, feature_dim, Activation::Tanh, rng)] } }
    }

    pub fn zeros(in_dim: usize, feature_dim: usize) -> Self {
        EncoderParams { net: MlpParams { layers: vec![Dense::zeros(in_dim, feature_dim, Activation::Tanh)] } }
    }
}

impl Parameters for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.net.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.net.visit_mut(prefix, f)
    }
}

/// Input to the appearance encoder: histogram counts as per-view fractions.
pub fn rgb_input(render: &MultiViewRender) -> Result<Vec<f64>> {
    let rays = render.rays_per_view().max(1) as f64;
    Ok(material_histogram(render)?.into_iter().map(|c| c / rays).collect())
}

pub fn encode_features(input: &[f64], enc: &EncoderParams, source: FeatureSource) -> Result<(FeatureVector, MlpCache)> {
    let (values, cache) = mlp_forward(&enc.net, input)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    Ok((FeatureVector { values, source }, cache))
}

pub fn encode_rgb(render: &MultiViewRender, enc: &EncoderParams) -> Result<FeatureVector> {
    Ok(encode_features(&rgb_input(render)?, enc, FeatureSource::Rgb)?.0)
}

pub fn encode_depth(render: &MultiViewRender, enc: &EncoderParams) -> Result<FeatureVector> {
    Ok(encode_features(&depth_summary(render)?, enc, FeatureSource::Depth)?.0)
}

/// Backpropagates a feature gradient into an encoder's parameters.
pub fn encoder_backward(enc: &EncoderParams, cache: &MlpCache, grad: &[f64], grads: &mut EncoderParams) -> Result<()> {
    mlp_backward_into(&enc.net, cache, grad, &mut grads.net).map(|_| ())
}

/// Embedding rows: the 8 materials first, then the object labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingTable {
    pub const ROWS: usize = N_MATERIALS + OBJECT_LABELS.len();

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / (Self::ROWS + dim) as f64);
        let data = (0..Self::ROWS * dim).map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        EmbeddingTable { rows: Self::ROWS, dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingTable { rows: Self::ROWS, dim, data: vec![0.0; Self::ROWS * dim] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

impl Parameters for EmbeddingTable {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&crate::nn::join(prefix, "embedding"), &self.data)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&crate::nn::join(prefix, "embedding"), &mut self.data)
    }
}

/// Table row indices for each attribute occurrence (material row, label row).
pub fn phys_tokens(desc: &PhysDescription) -> Result<Vec<(usize, usize)>> {
    let mut missing = Vec::new();
    let mut tokens = Vec::with_capacity(desc.attributes.len());
    for a in &desc.attributes {
        let m = material_id(&a.material);
        let l = label_id(&a.label);
        if m.is_none() {
            missing.push(a.material.to_string());
        }
        if l.is_none() {
            missing.push(a.label.to_string());
        }
        if let (Some(m), Some(l)) = (m, l) {
            tokens.push((m, N_MATERIALS + l));
        }
    }
    if missing.is_empty() {
        Ok(tokens)
    } else {
        Err(Error::OutOfVocabulary(missing))
    }
}

pub fn encode_phys_tokens(tokens: &[(usize, usize)], table: &EmbeddingTable) -> FeatureVector {
    let mut mean = vec![0.0; table.dim];
    if !tokens.is_empty() {
        for &(m, l) in tokens {
            for (acc, (a, b)) in mean.iter_mut().zip(table.row(m).iter().zip(table.row(l))) {
                *acc += a + b;
            }
        }
        let n = 2.0 * tokens.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
    }
    FeatureVector { values: mean.iter().map(|&v| libm::tanh(v)).collect(), source: FeatureSource::Phys }
}

pub fn encode_phys(desc: &PhysDescription, table: &EmbeddingTable) -> Result<FeatureVector> {
    Ok(encode_phys_tokens(&phys_tokens(desc)?, table))
}

/// Adds the table gradient for upstream gradient `grad` at output `out`.
pub fn phys_backward(tokens: &[(usize, usize)], out: &FeatureVector, grad: &[f64], grads: &mut EmbeddingTable) {
    if tokens.is_empty() {
        return;
    }
    let n = 2.0 * tokens.len() as f64;
    let dmean: Vec<f64> = out.values.iter().zip(grad).map(|(y, g)| g * (1.0 - y * y) / n).collect();
    let dim = grads.dim;
    for &(m, l) in tokens {
        for r in [m, l] {
            for (acc, d) in grads.data[r * dim..(r + 1) * dim].iter_mut().zip(&dmean) {
                *acc += d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub geo: MlpParams,
    pub sem: MlpParams,
}

impl AdapterParams {
    pub fn glorot<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let geo = MlpParams::glorot(&[2 * feature_dim, hidden, feature_dim], Activation::Tanh, Activation::Identity, rng);
        let sem = MlpParams::glorot(&[feature_dim, hidden, feature_dim], Activation::Tanh, Activation::Identity, rng);
        AdapterParams { geo, sem }
    }

    pub fn feature_dim(&self) -> usize {
        self.sem.input_dim()
    }
}

impl Parameters for AdapterParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.geo.visit(&crate::nn::join(prefix, "geo"), f);
        self.sem.visit(&crate::nn::join(prefix, "sem"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.geo.visit_mut(&crate::nn::join(prefix, "geo"), f);
        self.sem.visit_mut(&crate::nn::join(prefix, "sem"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseCache {
    pub geo: MlpCache,
    pub sem: MlpCache,
}

pub struct FuseGrads {
    /// Gradient w.r.t. `concat(f_rgb, f_depth)` split into its halves.
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
    pub phys: Vec<f64>,
}

fn check_feature(f: &FeatureVector, source: FeatureSource, dim: usize) -> Result<()> {
    if f.source != source {
        return Err(Error::TagMismatch);
    }
    if f.values.len() != dim {
        return Err(Error::DimMismatch { expected: dim, got: f.values.len() });
    }
    Ok(())
}

pub fn fuse_with_cache(
    f_rgb: &FeatureVector,
    f_depth: &FeatureVector,
    f_phys: &FeatureVector,
    adapter: &AdapterParams,
) -> Result<(FusedFeature, FuseCache)> {
    let m = adapter.feature_dim();
    check_feature(f_rgb, FeatureSource::Rgb, m)?;
    check_feature(f_depth, FeatureSource::Depth, m)?;
    check_feature(f_phys, FeatureSource::Phys, m)?;
    let geo_in: Vec<f64> = f_rgb.values.iter().chain(&f_depth.values).copied().collect();
    let (g, geo) = mlp_forward(&adapter.geo, &geo_in)?;
    let (s, sem) = mlp_forward(&adapter.sem, &f_phys.values)?;
    if g.len() != m || s.len() != m {
        return Err(Error::DimMismatch { expected: m, got: g.len().min(s.len()) });
    }
    let values = g.iter().zip(&s).map(|(a, b)| a + b).collect();
    Ok((FusedFeature { values }, FuseCache { geo, sem }))
}

pub fn fuse(f_rgb: &FeatureVector, f_depth: &FeatureVector, f_phys: &FeatureVector, adapter: &AdapterParams) -> Result<FusedFeature> {
    Ok(fuse_with_cache(f_rgb, f_depth, f_phys, adapter)?.0)
}

/// The fused output is a plain sum, so the same upstream gradient enters
/// both branch MLPs.
pub fn fuse_backward(adapter: &AdapterParams, cache: &FuseCache, grad: &[f64], grads: &mut AdapterParams) -> Result<FuseGrads> {
    let gx = mlp_backward_into(&adapter.geo, &cache.geo, grad, &mut grads.geo)?;
    let phys = mlp_backward_into(&adapter.sem, &cache.sem, grad, &mut grads.sem)?;
    let m = adapter.feature_dim();
    Ok(FuseGrads { rgb: gx[..m].to_vec(), depth: gx[m..].to_vec(), phys })
}
