//! PCM audio I/O, silence trimming and training-clip sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A mono waveform at an integer sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::InvalidArgument("sampling rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples, rate })
    }

    pub fn zeros(len: usize, rate: u32) -> Self {
        Self { samples: vec![0.0; len], rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

/// Reads a mono 16-bit PCM RIFF/WAVE file. Samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{} channels (only mono is accepted)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{:?} {}-bit samples (only 16-bit integer PCM is accepted)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Quantizes one sample the way `write_wav` does: clamp to [-1, 1], scale,
/// round to nearest, saturate at the int16 range.
pub fn quantize_pcm16(s: f64) -> i16 {
    let v = (s.clamp(-1.0, 1.0) * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono 16-bit PCM RIFF/WAVE file.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &w.samples {
        writer.write_sample(quantize_pcm16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Silence detector settings. Window and threshold follow common speech
/// tooling; the detector runs at per-sample resolution.
#[derive(Debug, Clone, Copy)]
pub struct TrimConfig {
    pub window_ms: f64,
    pub threshold_db: f64,
    pub pad_ms: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, threshold_db: -50.0, pad_ms: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub waveform: Waveform,
    /// Start of the retained region in the input, in samples.
    pub offset: usize,
    /// Set when the input had no sample above the threshold.
    pub degenerate: bool,
}

/// Removes leading and trailing silence, keeping up to `pad_ms` of the
/// original context on each side.
///
/// A sample is active when the RMS of the window centred on it is within
/// `threshold_db` of the loudest window. The active span is shrunk by half a
/// window on each side so that it starts at the actual onset.
pub fn trim_silence(w: &Waveform, threshold_db: f64, pad_ms: f64) -> Result<Trimmed> {
    trim_silence_with(w, &TrimConfig { threshold_db, pad_ms, ..TrimConfig::default() })
}

pub fn trim_silence_with(w: &Waveform, cfg: &TrimConfig) -> Result<Trimmed> {
    if cfg.threshold_db >= 0.0 {
        return Err(Error::InvalidArgument("threshold_db must be negative".into()));
    }
    if cfg.pad_ms < 0.0 || cfg.window_ms <= 0.0 {
        return Err(Error::InvalidArgument("pad and window must be non-negative".into()));
    }
    let n = w.len();
    let degenerate = || Trimmed { waveform: Waveform::zeros(0, w.rate), offset: 0, degenerate: true };
    if n == 0 {
        return Ok(degenerate());
    }
    let half = ((cfg.window_ms * 1e-3 * w.rate as f64) / 2.0).round().max(1.0) as usize;
    let mut prefix = vec![0.0; n + 1];
    for (i, s) in w.samples.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s * s;
    }
    let win = (2 * half + 1) as f64;
    let rms: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            ((prefix[hi] - prefix[lo]).max(0.0) / win).sqrt()
        })
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(degenerate());
    }
    let floor = peak * 10f64.powf(cfg.threshold_db / 20.0);
    let first = rms.iter().position(|&r| r >= floor).unwrap();
    let last = rms.iter().rposition(|&r| r >= floor).unwrap();
    // windows touching the signal boundary are not shifted
    let mut a = if first == 0 { 0 } else { first + half };
    let mut b = if last + 1 == n { n } else { last + 1 - half.min(last) };
    if a >= b {
        a = (first + last) / 2;
        b = a + 1;
    }
    let pad = (cfg.pad_ms * 1e-3 * w.rate as f64).round() as usize;
    let start = a.saturating_sub(pad);
    let end = (b + pad).min(n);
    Ok(Trimmed {
        waveform: Waveform { samples: w.samples[start..end].to_vec(), rate: w.rate },
        offset: start,
        degenerate: false,
    })
}

/// Draws fixed-length training clips at uniformly random offsets.
#[derive(Debug, Clone)]
pub struct ClipSampler {
    pub clip_seconds: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub waveform: Waveform,
    pub offset: usize,
    /// Input was shorter than a clip and was zero-padded.
    pub padded: bool,
}

impl ClipSampler {
    pub fn new(clip_seconds: f64, seed: u64) -> Result<Self> {
        if !(clip_seconds > 0.0) {
            return Err(Error::InvalidArgument("clip_seconds must be positive".into()));
        }
        Ok(Self { clip_seconds, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn clip_len(&self, rate: u32) -> Result<usize> {
        let n = (self.clip_seconds * rate as f64).round();
        if n < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "{} s at {rate} Hz is shorter than one sample",
                self.clip_seconds
            )));
        }
        Ok(n as usize)
    }

    pub fn sample(&mut self, w: &Waveform) -> Result<Clip> {
        let n = self.clip_len(w.rate)?;
        if w.len() < n {
            let mut samples = w.samples.clone();
            samples.resize(n, 0.0);
            return Ok(Clip { waveform: Waveform { samples, rate: w.rate }, offset: 0, padded: true });
        }
        let offset = self.rng.random_range(0..=w.len() - n);
        Ok(Clip {
            waveform: Waveform { samples: w.samples[offset..offset + n].to_vec(), rate: w.rate },
            offset,
            padded: false,
        })
    }
}

/// Sine helper shared by tests and the synthetic corpus.
pub fn sine(freq: f64, amplitude: f64, phase: f64, len: usize, rate: u32) -> Waveform {
    let samples = (0..len)
        .map(|n| amplitude * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64 + phase).sin())
        .collect();
    Waveform { samples, rate }
}
