//! Magnitude (MAG) and envelope (ENV) distances between binaural clips.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dsp::{hilbert_envelope, stft_clip, BinauralClip, Spectrogram, StftConfig};
use crate::{Error, Result};

fn check_pair(pred: &BinauralClip, gt: &BinauralClip) -> Result<()> {
    if pred.sample_rate() != gt.sample_rate() {
        return Err(Error::SampleRateMismatch(pred.sample_rate(), gt.sample_rate()));
    }
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch { expected: gt.len(), got: pred.len() });
    }
    Ok(())
}

/// `Σ_ch ‖|P_ch| − |G_ch|‖²_F / (F·T)` on precomputed spectrograms.
pub fn mag_distance_spectrograms(pred: [&Spectrogram; 2], gt: [&Spectrogram; 2]) -> Result<f64> {
    let (bins, frames) = (gt[0].bins(), gt[0].frames());
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.bins() != bins || p.frames() != frames || g.bins() != bins || g.frames() != frames {
            return Err(Error::DimMismatch { expected: bins * frames, got: p.bins() * p.frames() });
        }
        total += p.data().iter().zip(g.data()).map(|(a, b)| {
            let e = a.norm() - b.norm();
            e * e
        }).sum::<f64>();
    }
    Ok(total / (bins * frames) as f64)
}

pub fn mag_distance(pred: &BinauralClip, gt: &BinauralClip, cfg: &StftConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let p = [stft_clip(pred.left(), cfg)?, stft_clip(pred.right(), cfg)?];
    let g = [stft_clip(gt.left(), cfg)?, stft_clip(gt.right(), cfg)?];
    mag_distance_spectrograms([&p[0], &p[1]], [&g[0], &g[1]])
}

pub fn env_distance(pred: &BinauralClip, gt: &BinauralClip) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = gt.len();
    let mut total = 0.0;
    for (p, g) in pred.channels().into_iter().zip(gt.channels()) {
        let ep = hilbert_envelope(p.samples())?;
        let eg = hilbert_envelope(g.samples())?;
        let sq: f64 = ep.iter().zip(&eg).map(|(a, b)| (a - b) * (a - b)).sum();
        total += libm::sqrt(sq);
    }
    Ok(total / (2.0 * libm::sqrt(n as f64)))
}

/// Order-insensitive up to rounding: Neumaier-compensated mean.
pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub mag: f64,
    pub env: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mag: f64,
    pub env: f64,
    pub n_clips: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_clip: Option<Vec<ClipScore>>,
}

impl MetricsReport {
    pub fn from_scores(scores: Vec<ClipScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptySignal);
        }
        let mags: Vec<f64> = scores.iter().map(|s| s.mag).collect();
        let envs: Vec<f64> = scores.iter().map(|s| s.env).collect();
        Ok(MetricsReport {
            mag: compensated_mean(&mags),
            env: compensated_mean(&envs),
            n_clips: scores.len(),
            per_clip: Some(scores),
        })
    }

    pub fn without_clips(mut self) -> Self {
        self.per_clip = None;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{AudioClip, Window};
    use crate::Complex64;
    use alloc::vec;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> BinauralClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ch = || AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap();
        let l = ch();
        BinauralClip::new(l, ch()).unwrap()
    }

    fn sine(amp: f64, n: usize) -> BinauralClip {
        // 500 Hz at 16 kHz: an integer number of periods over n = 1600.
        let x: Vec<f64> = (0..n).map(|i| amp * libm::sin(2.0 * PI * 500.0 * i as f64 / 16_000.0)).collect();
        BinauralClip::duplicate(&AudioClip::new(x, 16_000).unwrap())
    }

    #[test]
    fn identity_symmetry_nonnegativity() {
        let cfg = StftConfig::default();
        let a = noise(1, 3000);
        let b = noise(2, 3000);
        assert_eq!(mag_distance(&a, &a, &cfg).unwrap(), 0.0);
        assert_eq!(env_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(mag_distance(&a, &b, &cfg).unwrap(), mag_distance(&b, &a, &cfg).unwrap());
        for seed in 0..10 {
            let (p, g) = (noise(seed, 1000), noise(seed + 100, 1000));
            assert!(mag_distance(&p, &g, &cfg).unwrap() > 0.0);
            assert!(env_distance(&p, &g).unwrap() > 0.0);
        }
    }

    #[test]
    fn phase_flip_invariance() {
        let cfg = StftConfig::default();
        let a = noise(3, 4000);
        let b = noise(4, 4000);
        let flipped = a.negated();
        assert!((mag_distance(&flipped, &b, &cfg).unwrap() - mag_distance(&a, &b, &cfg).unwrap()).abs() < 1e-9);
        assert!((env_distance(&flipped, &b).unwrap() - env_distance(&a, &b).unwrap()).abs() < 1e-9);
        assert!(mag_distance(&flipped, &a, &cfg).unwrap() < 1e-9);
        assert!(env_distance(&flipped, &a).unwrap() < 1e-9);
    }

    #[test]
    fn two_by_two_by_hand() {
        let cfg = StftConfig { sample_rate: 16_000, n_fft: 2, hop: 1, window: Window::Rect };
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let spec = |v: [Complex64; 4]| Spectrogram::from_parts(2, 2, v.to_vec(), cfg).unwrap();
        let pl = spec([c(3.0, 4.0), c(1.0, 0.0), c(0.0, -2.0), c(0.5, 0.0)]);
        let pr = spec([c(0.0, 0.0), c(6.0, 8.0), c(1.0, 1.0), c(-3.0, 0.0)]);
        let gl = spec([c(1.0, 0.0), c(0.0, 1.0), c(0.0, 2.0), c(0.0, 0.0)]);
        let gr = spec([c(2.0, 0.0), c(-10.0, 0.0), c(0.0, 0.0), c(0.0, 3.0)]);
        // |P_l| = [5, 1, 2, .5], |G_l| = [1, 1, 2, 0]  → 16 + 0 + 0 + .25
        // |P_r| = [0, 10, √2, 3], |G_r| = [2, 10, 0, 3] → 4 + 0 + 2 + 0
        let want = (16.25 + 6.0) / 4.0;
        let got = mag_distance_spectrograms([&pl, &pr], [&gl, &gr]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got}");
        // Same magnitudes with different phases give zero distance, and back.
        let rot = spec([c(-4.0, 3.0), c(0.0, -1.0), c(2.0, 0.0), c(0.0, 0.5)]);
        assert!(mag_distance_spectrograms([&pl, &pl], [&rot, &rot]).unwrap() < 1e-12);
        let off = spec([c(-4.0, 3.0), c(0.0, -1.0), c(2.0, 0.0), c(0.0, 0.6)]);
        assert!(mag_distance_spectrograms([&pl, &pl], [&off, &off]).unwrap() > 0.0);
    }

    #[test]
    fn sine_envelope_difference() {
        for (a, b) in [(0.5, 0.2), (0.1, 0.8), (1.0, 1.0)] {
            let d = env_distance(&sine(a, 1600), &sine(b, 1600)).unwrap();
            let want = (a - b as f64).abs();
            assert!((d - want).abs() <= 0.02 * want.max(1e-3), "{a} {b}: {d}");
        }
    }

    #[test]
    fn length_mismatch() {
        let cfg = StftConfig::default();
        assert!(mag_distance(&noise(1, 100), &noise(1, 101), &cfg).is_err());
        assert!(env_distance(&noise(1, 100), &noise(1, 101)).is_err());
    }

    #[test]
    fn report_mean() {
        let scores: Vec<ClipScore> = (0..7)
            .map(|i| ClipScore { clip_id: alloc::format!("c{i}"), mag: 0.1 * i as f64 + 1e-3, env: 1.0 / (i + 1) as f64 })
            .collect();
        let r = MetricsReport::from_scores(scores.clone()).unwrap();
        let direct: f64 = scores.iter().map(|s| s.mag).sum::<f64>() / 7.0;
        assert!((r.mag - direct).abs() < 1e-12);
        assert_eq!(r.n_clips, 7);
        let mut rev = scores;
        rev.reverse();
        assert!((MetricsReport::from_scores(rev).unwrap().mag - r.mag).abs() < 1e-15);
        assert!(MetricsReport::from_scores(vec![]).is_err());
        assert_eq!(compensated_mean(&[1e16, 1.0, -1e16]), 1.0 / 3.0);
    }
}
