//! 32-bit float WAV files, mono or stereo.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use nvas_core::dsp::{AudioClip, BinauralClip};

use crate::error::{Error, Result};

fn spec(channels: u16, sample_rate: u32) -> WavSpec {
    WavSpec { channels, sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float }
}

/// Rounds every sample to the precision the file will hold.
pub fn quantize(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v as f32 as f64).collect()
}

pub fn write_channels(path: &Path, channels: &[&[f64]], sample_rate: u32) -> Result<()> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::Format("channels must be non-empty and equally long".into()));
    }
    let mut w = WavWriter::create(path, spec(channels.len() as u16, sample_rate))?;
    for i in 0..n {
        for c in channels {
            w.write_sample(c[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn read_channels(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut r = WavReader::open(path)?;
    let s = r.spec();
    let nch = s.channels as usize;
    let interleaved: Vec<f64> = match (s.sample_format, s.bits_per_sample) {
        (SampleFormat::Float, 32) => r.samples::<f32>().map(|v| v.map(f64::from)).collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            r.samples::<i32>().map(|v| v.map(|x| x as f64 * scale)).collect::<Result<_, _>>()?
        }
        (fmt, bits) => return Err(Error::Format(format!("unsupported sample format {fmt:?}/{bits}"))),
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / nch.max(1)); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &v) in out.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Ok((out, s.sample_rate))
}

pub fn write_mono(path: &Path, clip: &AudioClip) -> Result<()> {
    write_channels(path, &[clip.samples()], clip.sample_rate())
}

pub fn write_binaural(path: &Path, clip: &BinauralClip) -> Result<()> {
    write_channels(path, &[clip.left().samples(), clip.right().samples()], clip.sample_rate())
}

pub fn read_mono(path: &Path) -> Result<AudioClip> {
    let (mut ch, sr) = read_channels(path)?;
    if ch.len() != 1 {
        return Err(Error::Format(format!("{}: expected 1 channel, found {}", path.display(), ch.len())));
    }
    Ok(AudioClip::new(ch.pop().unwrap(), sr)?)
}

pub fn read_binaural(path: &Path) -> Result<BinauralClip> {
    let (mut ch, sr) = read_channels(path)?;
    if ch.len() != 2 {
        return Err(Error::Format(format!("{}: expected 2 channels, found {}", path.display(), ch.len())));
    }
    let right = AudioClip::new(ch.pop().unwrap(), sr)?;
    let left = AudioClip::new(ch.pop().unwrap(), sr)?;
    Ok(BinauralClip::new(left, right)?)
}
