//! Time-frequency kernels: STFT, inverse STFT and the analytic-signal envelope.
//!
//! Frames are center-padded by reflecting `n_fft / 2` samples on each side of
//! the signal. A signal of `len` samples yields `ceil((len + n_fft) / hop)`
//! frames; samples past the reflected tail are zero. The inverse divides the
//! overlap-added frames by the summed squared window, so any window/hop pair
//! whose squared-window sum is nonzero over the signal reconstructs exactly.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{Direction, Fft};
use crate::{Error, Result};

/// Largest sample magnitude an [`AudioClip`] may hold.
pub const HEADROOM: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { sample_rate: 16_000, n_fft: 512, hop: 128, window: Window::Hann }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive"));
        }
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidConfig("n_fft must be a power of two"));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig("hop must satisfy 0 < hop <= n_fft"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        (len + self.n_fft).div_ceil(self.hop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        check_finite(&samples)?;
        if let Some(&peak) = samples.iter().find(|s| s.abs() > HEADROOM) {
            return Err(Error::Headroom(peak));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioClip { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Multiplies every sample by `gain`, re-checking the headroom guard.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        AudioClip::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinauralClip {
    left: AudioClip,
    right: AudioClip,
}

impl BinauralClip {
    pub fn new(left: AudioClip, right: AudioClip) -> Result<Self> {
        if left.sample_rate != right.sample_rate {
            return Err(Error::SampleRateMismatch(left.sample_rate, right.sample_rate));
        }
        if left.len() != right.len() {
            return Err(Error::DimMismatch { expected: left.len(), got: right.len() });
        }
        Ok(BinauralClip { left, right })
    }

    pub fn duplicate(mono: &AudioClip) -> Self {
        BinauralClip { left: mono.clone(), right: mono.clone() }
    }

    pub fn left(&self) -> &AudioClip {
        &self.left
    }

    pub fn right(&self) -> &AudioClip {
        &self.right
    }

    pub fn channels(&self) -> [&AudioClip; 2] {
        [&self.left, &self.right]
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.left.sample_rate
    }

    /// Sample-for-sample negation of both channels.
    pub fn negated(&self) -> Self {
        let neg = |c: &AudioClip| AudioClip {
            samples: c.samples.iter().map(|s| -s).collect(),
            sample_rate: c.sample_rate,
        };
        BinauralClip { left: neg(&self.left), right: neg(&self.right) }
    }
}

/// Complex STFT grid stored bin-major: `data[k * frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    config: StftConfig,
}

impl Spectrogram {
    pub fn from_parts(bins: usize, frames: usize, data: Vec<Complex64>, config: StftConfig) -> Result<Self> {
        if bins != config.bins() {
            return Err(Error::DimMismatch { expected: config.bins(), got: bins });
        }
        if data.len() != bins * frames {
            return Err(Error::DimMismatch { expected: bins * frames, got: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Spectrogram { bins, frames, data, config })
    }

    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Spectrogram { bins, frames, data: vec![Complex64::new(0.0, 0.0); bins * frames], config }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    /// Row of one frequency bin across all frames.
    pub fn bin(&self, bin: usize) -> &[Complex64] {
        &self.data[bin * self.frames..(bin + 1) * self.frames]
    }

    pub fn bin_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.data[bin * self.frames..(bin + 1) * self.frames]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Spectrogram { data: self.data.iter().map(|z| z * gain).collect(), ..self.clone() }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Index into the reflect-padded signal; `None` past the padded tail.
fn reflect_index(i: usize, pad: usize, len: usize) -> Option<usize> {
    if i >= len + 2 * pad {
        return None;
    }
    if len == 1 {
        return Some(0);
    }
    let period = 2 * (len - 1) as i64;
    let mut j = (i as i64 - pad as i64).rem_euclid(period);
    if j >= len as i64 {
        j = period - j;
    }
    Some(j as usize)
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    check_finite(signal)?;
    let n = cfg.n_fft;
    let pad = n / 2;
    let frames = cfg.frames_for(signal.len());
    let bins = cfg.bins();
    let window = cfg.window.coefficients(n);
    let fft = Fft::new(n);
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = reflect_index(start + i, pad, signal.len()).map_or(0.0, |j| signal[j]);
            *slot = Complex64::new(v * window[i], 0.0);
        }
        fft.process(&mut buf, Direction::Forward);
        for k in 0..bins {
            data[k * frames + t] = buf[k];
        }
    }
    Ok(Spectrogram { bins, frames, data, config: *cfg })
}

pub fn stft_clip(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRateMismatch(clip.sample_rate, cfg.sample_rate));
    }
    stft(&clip.samples, cfg)
}

/// Overlap-add inverse with squared-window normalization; returns exactly
/// `out_len` samples.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sc = spec.config;
    if sc.n_fft != cfg.n_fft || sc.hop != cfg.hop || sc.window != cfg.window || spec.bins != cfg.bins() {
        return Err(Error::InvalidConfig("spectrogram geometry does not match config"));
    }
    let n = cfg.n_fft;
    let pad = n / 2;
    let window = cfg.window.coefficients(n);
    let fft = Fft::new(n);
    let total = (spec.frames.saturating_sub(1)) * cfg.hop + n;
    let mut acc = vec![0.0; total.max(out_len + pad)];
    let mut wsum = vec![0.0; acc.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for t in 0..spec.frames {
        buf[0] = Complex64::new(spec.get(0, t).re, 0.0);
        buf[half] = Complex64::new(spec.get(half, t).re, 0.0);
        for k in 1..half {
            let z = spec.get(k, t);
            buf[k] = z;
            buf[n - k] = z.conj();
        }
        fft.process(&mut buf, Direction::Inverse);
        let start = t * cfg.hop;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let out = (0..out_len)
        .map(|i| {
            let w = wsum[i + pad];
            if w > 1e-10 {
                acc[i + pad] / w
            } else {
                0.0
            }
        })
        .collect();
    Ok(out)
}

pub fn istft_clip(spec: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<AudioClip> {
    AudioClip::new(istft(spec, cfg, out_len)?, cfg.sample_rate)
}

/// Complex analytic signal by the full-length FFT method: negative
/// frequencies zeroed, positive frequencies doubled, DC and Nyquist kept.
pub fn analytic_signal(signal: &[f64]) -> Result<Vec<Complex64>> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    check_finite(signal)?;
    let n = signal.len();
    let fft = Fft::new(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.process(&mut buf, Direction::Forward);
    for (k, z) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *z *= h;
    }
    fft.process(&mut buf, Direction::Inverse);
    let scale = 1.0 / n as f64;
    for z in buf.iter_mut() {
        *z *= scale;
    }
    Ok(buf)
}

pub fn hilbert_envelope(signal: &[f64]) -> Result<Vec<f64>> {
    Ok(analytic_signal(signal)?.iter().map(|z| z.norm()).collect())
}
