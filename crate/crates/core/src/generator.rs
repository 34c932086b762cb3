//! Mask-based binaural generator and the signal-only baselines.
//!
//! For every frequency bin the trunk sees `concat(F_aff, pose encoding,
//! frequency code)` and emits two logits, squashed into a mixture mask
//! `m = 2·sigmoid(.) ∈ [0, 2]` and a difference mask `d = tanh(.) ∈ [-1, 1]`.
//! Left and right magnitudes are `max(m ± d, 0)·|S_mono|` with the mono phase.
//! Masks are shared by all frames of a clip.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dsp::{istft, stft_clip, AudioClip, BinauralClip, Spectrogram, StftConfig};
use crate::encoders::FusedFeature;
use crate::nn::{self, positional_encoding, sigmoid, Activation, Dense, MlpParams, Parameters, PoseEncoding};
use crate::{Error, Result};

/// Number of pose scalars fed through the positional encoding.
pub const POSE_SCALARS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub trunk: MlpParams,
    /// Sinusoid bands used for both the pose and the frequency code.
    pub bands: usize,
}

impl GenParams {
    pub fn input_dim(feature_dim: usize, bands: usize) -> usize {
        feature_dim + 2 * bands * (POSE_SCALARS + 1)
    }

    /// Glorot hidden layers and a zeroed output layer, so a fresh generator
    /// is the identity mapping.
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, bands: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![Self::input_dim(feature_dim, bands)];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let mut trunk = MlpParams::glorot(&dims, Activation::Tanh, Activation::Identity, rng);
        trunk.zero_last_layer();
        GenParams { trunk, bands }
    }

    pub fn conditioning_dim(&self) -> usize {
        self.trunk.input_dim() - 2 * self.bands
    }
}

impl Parameters for GenParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.trunk.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.trunk.visit_mut(prefix, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub m: Vec<f64>,
    pub d: Vec<f64>,
}

impl MaskPair {
    pub fn identity(bins: usize) -> Self {
        MaskPair { m: vec![1.0; bins], d: vec![0.0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.m.len()
    }

    /// Per-bin magnitude gains `(max(m + d, 0), max(m − d, 0))`.
    pub fn gains(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.m.iter().zip(&self.d).map(|(m, d)| (m + d).max(0.0)).collect();
        let r = self.m.iter().zip(&self.d).map(|(m, d)| (m - d).max(0.0)).collect();
        (l, r)
    }
}

pub fn freq_code(bin: usize, bins: usize, bands: usize) -> Vec<f64> {
    positional_encoding(&[bin as f64 / bins as f64], bands).0
}

/// Forward state kept for the reverse pass over all bins.
#[derive(Debug, Clone)]
pub struct MaskCache {
    cond: Vec<f64>,
    codes: Vec<Vec<f64>>,
    /// Per bin, per layer: (input, pre-activation, output). The first
    /// layer's input is implicit (cond ++ code).
    layers: Vec<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>>,
    masks: MaskPair,
}

pub fn conditioning(f_aff: &FusedFeature, pose_enc: &PoseEncoding) -> Vec<f64> {
    f_aff.values.iter().chain(&pose_enc.0).copied().collect()
}

pub fn predict_masks_with_cache(gen: &GenParams, cond: &[f64], bins: usize) -> Result<MaskCache> {
    let c = gen.conditioning_dim();
    if cond.len() != c {
        return Err(Error::DimMismatch { expected: c, got: cond.len() });
    }
    let layers = &gen.trunk.layers;
    let first = &layers[0];
    // The conditioning half of the first layer is shared by every bin.
    let shared: Vec<f64> = (0..first.out_dim).map(|o| first.bias[o] + nn::dot(&first.row(o)[..c], cond)).collect();
    let mut per_bin = Vec::with_capacity(bins);
    let mut codes = Vec::with_capacity(bins);
    let mut m = Vec::with_capacity(bins);
    let mut d = Vec::with_capacity(bins);
    for k in 0..bins {
        let code = freq_code(k, bins, gen.bands);
        let pre: Vec<f64> = (0..first.out_dim).map(|o| shared[o] + nn::dot(&first.row(o)[c..], &code)).collect();
        let out: Vec<f64> = pre.iter().map(|&z| first.activation.apply(z)).collect();
        let mut trace = Vec::with_capacity(layers.len());
        trace.push((Vec::new(), pre, out));
        for layer in &layers[1..] {
            let x = trace.last().unwrap().2.clone();
            let (pre, out) = layer.forward(&x);
            trace.push((x, pre, out));
        }
        let logits = &trace.last().unwrap().2;
        let (mk, dk) = (2.0 * sigmoid(logits[0]), libm::tanh(logits[1]));
        if !mk.is_finite() || !dk.is_finite() {
            return Err(Error::Diverged);
        }
        m.push(mk);
        d.push(dk);
        per_bin.push(trace);
        codes.push(code);
    }
    Ok(MaskCache { cond: cond.to_vec(), codes, layers: per_bin, masks: MaskPair { m, d } })
}

impl MaskCache {
    pub fn masks(&self) -> &MaskPair {
        &self.masks
    }
}

pub fn predict_masks(gen: &GenParams, f_aff: &FusedFeature, pose_enc: &PoseEncoding, bins: usize) -> Result<MaskPair> {
    Ok(predict_masks_with_cache(gen, &conditioning(f_aff, pose_enc), bins)?.masks)
}

/// Reverse pass from mask gradients; adds trunk gradients into `grads` and
/// returns the gradient w.r.t. the conditioning vector.
pub fn masks_backward(gen: &GenParams, cache: &MaskCache, dm: &[f64], dd: &[f64], grads: &mut GenParams) -> Result<Vec<f64>> {
    let bins = cache.masks.bins();
    if dm.len() != bins || dd.len() != bins || cache.layers.first().map_or(0, |t| t.len()) != gen.trunk.layers.len() {
        return Err(Error::StaleCache);
    }
    let layers = &gen.trunk.layers;
    let c = cache.cond.len();
    let first = &layers[0];
    let mut delta_sum = vec![0.0; first.out_dim];
    for k in 0..bins {
        let (m, d) = (cache.masks.m[k], cache.masks.d[k]);
        let mut g = vec![dm[k] * m * (1.0 - 0.5 * m), dd[k] * (1.0 - d * d)];
        let trace = &cache.layers[k];
        for i in (1..layers.len()).rev() {
            let (x, pre, out) = &trace[i];
            let delta = layers[i].pre_grad(pre, out, &g);
            g = layers[i].backward_pre(x, &delta, &mut grads.trunk.layers[i]);
        }
        let (_, pre, out) = &trace[0];
        let delta = first.pre_grad(pre, out, &g);
        let gfirst = &mut grads.trunk.layers[0];
        let code = &cache.codes[k];
        for (o, &dl) in delta.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            delta_sum[o] += dl;
            let row = &mut gfirst.weight[o * first.in_dim + c..(o + 1) * first.in_dim];
            for (w, x) in row.iter_mut().zip(code) {
                *w += dl * x;
            }
        }
    }
    let gfirst: &mut Dense = &mut grads.trunk.layers[0];
    let mut gcond = vec![0.0; c];
    for (o, &ds) in delta_sum.iter().enumerate() {
        gfirst.bias[o] += ds;
        let row = first.row(o);
        let grow = &mut gfirst.weight[o * first.in_dim..o * first.in_dim + c];
        for i in 0..c {
            grow[i] += ds * cache.cond[i];
            gcond[i] += ds * row[i];
        }
    }
    Ok(gcond)
}

pub fn apply_masks(mono_spec: &Spectrogram, masks: &MaskPair) -> Result<(Spectrogram, Spectrogram)> {
    if masks.bins() != mono_spec.bins() || masks.d.len() != masks.m.len() {
        return Err(Error::DimMismatch { expected: mono_spec.bins(), got: masks.bins() });
    }
    let (gl, gr) = masks.gains();
    let mut left = mono_spec.clone();
    let mut right = mono_spec.clone();
    for k in 0..mono_spec.bins() {
        left.bin_mut(k).iter_mut().for_each(|z| *z *= gl[k]);
        right.bin_mut(k).iter_mut().for_each(|z| *z *= gr[k]);
    }
    Ok((left, right))
}

pub fn synthesize(gen: &GenParams, f_aff: &FusedFeature, pose_enc: &PoseEncoding, mono: &AudioClip, cfg: &StftConfig) -> Result<BinauralClip> {
    let spec = stft_clip(mono, cfg)?;
    let masks = predict_masks(gen, f_aff, pose_enc, spec.bins())?;
    synthesize_with_masks(&spec, &masks, mono.len(), cfg)
}

pub fn synthesize_with_masks(mono_spec: &Spectrogram, masks: &MaskPair, out_len: usize, cfg: &StftConfig) -> Result<BinauralClip> {
    let (l, r) = apply_masks(mono_spec, masks)?;
    let left = AudioClip::new(istft(&l, cfg, out_len)?, cfg.sample_rate)?;
    let right = AudioClip::new(istft(&r, cfg, out_len)?, cfg.sample_rate)?;
    BinauralClip::new(left, right)
}

/// Per-bin sufficient statistics of the magnitude-MSE loss for one clip:
/// with gain `g` on bin `k`, that bin contributes
/// `g²·Σ_t|X|² − 2g·Σ_t|X||G| + Σ_t|G|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeTarget {
    pub bins: usize,
    pub frames: usize,
    pub mono_power: Vec<f64>,
    pub cross: [Vec<f64>; 2],
    pub target_power: [Vec<f64>; 2],
}

impl MagnitudeTarget {
    pub fn new(mono: &Spectrogram, gt_left: &Spectrogram, gt_right: &Spectrogram) -> Result<Self> {
        for s in [gt_left, gt_right] {
            if s.bins() != mono.bins() || s.frames() != mono.frames() {
                return Err(Error::DimMismatch { expected: mono.bins() * mono.frames(), got: s.bins() * s.frames() });
            }
        }
        let bins = mono.bins();
        let mut mono_power = vec![0.0; bins];
        let mut cross = [vec![0.0; bins], vec![0.0; bins]];
        let mut target_power = [vec![0.0; bins], vec![0.0; bins]];
        for k in 0..bins {
            for (t, x) in mono.bin(k).iter().enumerate() {
                let a = x.norm();
                mono_power[k] += a * a;
                for (ch, g) in [gt_left, gt_right].into_iter().enumerate() {
                    let b = g.get(k, t).norm();
                    cross[ch][k] += a * b;
                    target_power[ch][k] += b * b;
                }
            }
        }
        Ok(MagnitudeTarget { bins, frames: mono.frames(), mono_power, cross, target_power })
    }
}

/// Summed-over-channels magnitude MSE `Σ_ch ‖g_ch|X| − |G_ch|‖² / (F·T)`
/// and its gradient w.r.t. the masks.
pub fn magnitude_loss(masks: &MaskPair, target: &MagnitudeTarget) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if masks.bins() != target.bins {
        return Err(Error::DimMismatch { expected: target.bins, got: masks.bins() });
    }
    let norm = 1.0 / (target.bins * target.frames) as f64;
    let mut loss = 0.0;
    let mut dm = vec![0.0; target.bins];
    let mut dd = vec![0.0; target.bins];
    for k in 0..target.bins {
        let (m, d) = (masks.m[k], masks.d[k]);
        for (ch, sign) in [(0usize, 1.0), (1, -1.0)] {
            let pre = m + sign * d;
            let g = pre.max(0.0);
            let a = target.mono_power[k];
            let b = target.cross[ch][k];
            loss += (g * g * a - 2.0 * g * b + target.target_power[ch][k]) * norm;
            if pre > 0.0 {
                let dg = (2.0 * g * a - 2.0 * b) * norm;
                dm[k] += dg;
                dd[k] += sign * dg;
            }
        }
    }
    Ok((loss, dm, dd))
}

pub fn baseline_mono_mono(mono: &AudioClip) -> BinauralClip {
    BinauralClip::duplicate(mono)
}

fn energy_gain(target: f64, mono: f64) -> f64 {
    if mono > 0.0 {
        libm::sqrt(target / mono)
    } else {
        0.0
    }
}

pub fn mono_energy_gain(mono: &AudioClip, gt: &BinauralClip) -> f64 {
    energy_gain(0.5 * (gt.left().energy() + gt.right().energy()), mono.energy())
}

pub fn stereo_energy_gains(mono: &AudioClip, gt: &BinauralClip) -> (f64, f64) {
    let e = mono.energy();
    (energy_gain(gt.left().energy(), e), energy_gain(gt.right().energy(), e))
}

fn check_pair(mono: &AudioClip, gt: &BinauralClip) -> Result<()> {
    if mono.sample_rate() != gt.sample_rate() {
        return Err(Error::SampleRateMismatch(mono.sample_rate(), gt.sample_rate()));
    }
    if mono.len() != gt.len() {
        return Err(Error::DimMismatch { expected: gt.len(), got: mono.len() });
    }
    Ok(())
}

pub fn baseline_mono_energy(mono: &AudioClip, gt: &BinauralClip) -> Result<BinauralClip> {
    check_pair(mono, gt)?;
    let scaled = mono.scaled(mono_energy_gain(mono, gt))?;
    Ok(BinauralClip::duplicate(&scaled))
}

pub fn baseline_stereo_energy(mono: &AudioClip, gt: &BinauralClip) -> Result<BinauralClip> {
    check_pair(mono, gt)?;
    let (sl, sr) = stereo_energy_gains(mono, gt);
    BinauralClip::new(mono.scaled(sl)?, mono.scaled(sr)?)
}
