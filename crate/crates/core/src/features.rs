//! Log-mel conditioning features: extraction, normalization, per-rate
//! upsampling and the on-disk feature format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::resample::{Resampler, ResamplerDesign};
use crate::signal::Waveform;
use crate::spectral::StftPlan;

const FEATURE_MAGIC: &[u8; 4] = b"MSRF";
const FEATURE_VERSION: u32 = 1;

/// Analysis settings for [`extract_logmel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub analysis_rate: u32,
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    pub bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl FeatureConfig {
    /// 48 kHz analysis, 2048-point frames, 5 ms hop, 80 bands over 80-7600 Hz.
    pub fn paper() -> Self {
        Self { analysis_rate: 48000, fft_size: 2048, win_length: 2048, hop: 240, bands: 80, fmin: 80.0, fmax: 7600.0, log_floor: 1e-5 }
    }

    /// 8 kHz analysis with the same hop duration; the band range stops
    /// below the 4 kHz Nyquist limit.
    pub fn desk() -> Self {
        Self { analysis_rate: 8000, fft_size: 512, win_length: 341, hop: 40, bands: 80, fmin: 80.0, fmax: 3800.0, log_floor: 1e-5 }
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.analysis_rate as f64
    }

    /// Frames per second; must be a whole number for rational resampling.
    pub fn frame_rate(&self) -> Result<u32> {
        if self.analysis_rate as usize % self.hop != 0 {
            return Err(Error::InvalidArgument(format!(
                "hop {} does not divide analysis rate {}",
                self.hop, self.analysis_rate
            )));
        }
        Ok(self.analysis_rate / self.hop as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.analysis_rate as f64 / 2.0;
        if self.bands == 0 || !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyq) || self.log_floor <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid feature config {self:?}")));
        }
        StftPlan::new(self.fft_size, self.win_length, self.hop, 0.0)?;
        self.frame_rate().map(|_| ())
    }
}

/// Log-mel matrix `[frames, bands]` with its analysis metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Tensor,
    pub source_rate: u32,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn bands(&self) -> usize {
        self.data.cols()
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.source_rate as f64
    }

    pub fn frame_rate(&self) -> Result<u32> {
        if self.source_rate as usize % self.hop != 0 {
            return Err(Error::FeatureFile(format!("hop {} does not divide {}", self.hop, self.source_rate)));
        }
        Ok(self.source_rate / self.hop as u32)
    }

    /// Seconds of audio the frames cover.
    pub fn duration_seconds(&self) -> f64 {
        self.frames().saturating_sub(1) as f64 * self.hop_seconds()
    }

    /// Band-major copy `[bands, frames]`.
    pub fn band_major(&self) -> Vec<Vec<f64>> {
        let (f, b) = (self.frames(), self.bands());
        let d = self.data.data();
        (0..b).map(|j| (0..f).map(|i| d[i * b + j]).collect()).collect()
    }
}

/// Magnitude spectrogram `[frames, bins]`: Hann window, centred frames,
/// reflection padding.
pub fn stft_mag(x: &[f64], fft_size: usize, win_length: usize, hop: usize) -> Result<Tensor> {
    let plan = StftPlan::shared(fft_size, win_length, hop, 0.0)?;
    Ok(plan.magnitude_only(x))
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters `[bands][bins]` on the HTK mel scale, peak 1.
pub fn mel_filterbank(bands: usize, fft_size: usize, rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64)).collect();
    let bin_hz = rate as f64 / fft_size as f64;
    (0..bands)
        .map(|b| {
            let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Natural-log mel energies of the magnitude spectrogram, floored.
pub fn extract_logmel(x: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if x.rate != cfg.analysis_rate {
        return Err(Error::InvalidArgument(format!(
            "features are analysed at {} Hz, got {} Hz audio",
            cfg.analysis_rate, x.rate
        )));
    }
    let mag = stft_mag(&x.samples, cfg.fft_size, cfg.win_length, cfg.hop)?;
    let fb = mel_filterbank(cfg.bands, cfg.fft_size, cfg.analysis_rate, cfg.fmin, cfg.fmax);
    let frames = mag.rows();
    let mut data = Vec::with_capacity(frames * cfg.bands);
    for f in 0..frames {
        let row = mag.row_slice(f);
        for filt in &fb {
            let e: f64 = filt.iter().zip(row).map(|(w, m)| w * m).sum();
            data.push(e.max(cfg.log_floor).ln());
        }
    }
    Ok(MelSpectrogram {
        data: Tensor::new(vec![frames, cfg.bands], data)?,
        source_rate: cfg.analysis_rate,
        hop: cfg.hop,
        fmin: cfg.fmin,
        fmax: cfg.fmax,
    })
}

/// Per-band mean and standard deviation over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Bands whose spread fell below the floor.
    pub floored: Vec<bool>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl FeatureStats {
    pub fn fit(corpus: &[MelSpectrogram]) -> Result<Self> {
        let first = corpus.first().ok_or_else(|| Error::InvalidArgument("empty feature corpus".into()))?;
        let bands = first.bands();
        let mut sum = vec![0.0; bands];
        let mut count = 0usize;
        for m in corpus {
            if m.bands() != bands {
                return Err(Error::Shape(format!("{} bands, expected {bands}", m.bands())));
            }
            for f in 0..m.frames() {
                for (s, v) in sum.iter_mut().zip(m.data.row_slice(f)) {
                    *s += v;
                }
            }
            count += m.frames();
        }
        if count == 0 {
            return Err(Error::InvalidArgument("feature corpus has no frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; bands];
        for m in corpus {
            for f in 0..m.frames() {
                for ((acc, v), mu) in var.iter_mut().zip(m.data.row_slice(f)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        let raw: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        let floored = raw.iter().map(|s| *s < STD_FLOOR).collect();
        let std = raw.iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self { mean, std, floored })
    }

    /// Identity statistics for `bands` bands.
    pub fn identity(bands: usize) -> Self {
        Self { mean: vec![0.0; bands], std: vec![1.0; bands], floored: vec![false; bands] }
    }

    pub fn apply(&self, m: &MelSpectrogram) -> Result<MelSpectrogram> {
        if m.bands() != self.mean.len() {
            return Err(Error::Shape(format!("{} bands, stats have {}", m.bands(), self.mean.len())));
        }
        let b = m.bands();
        let data = m.data.data().iter().enumerate().map(|(i, v)| (v - self.mean[i % b]) / self.std[i % b]).collect();
        Ok(MelSpectrogram { data: Tensor::new(m.data.shape().to_vec(), data)?, ..m.clone() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Interpolator for frame-rate features. Frames are smooth, so a short
/// kernel suffices and keeps utterance-edge effects to 16 frames.
pub const FEATURE_RESAMPLER: ResamplerDesign = ResamplerDesign { zero_crossings: 16, atten_db: 80.0, rolloff: 0.95 };

/// Resampler taking feature frames to `target_rate`.
pub fn feature_resampler(m: &MelSpectrogram, target_rate: u32) -> Result<std::sync::Arc<Resampler>> {
    Resampler::shared(m.frame_rate()?, target_rate, FEATURE_RESAMPLER)
}

fn check_target_len(m: &MelSpectrogram, r: &Resampler, target_len: usize) -> Result<()> {
    let natural = r.output_len(m.frames());
    let hop_out = (r.to_rate() as f64 * m.hop_seconds()).ceil() as usize;
    if natural.abs_diff(target_len) > 2 * hop_out.max(1) {
        return Err(Error::Shape(format!(
            "{} frames cover {natural} samples at {} Hz, asked for {target_len}",
            m.frames(),
            r.to_rate()
        )));
    }
    Ok(())
}

/// Conditioning series `[bands, target_len]` at `target_rate`; each band
/// is sinc-interpolated from the frame rate, then cropped or zero-padded.
pub fn upsample_features(m: &MelSpectrogram, target_rate: u32, target_len: usize) -> Result<Tensor> {
    let r = feature_resampler(m, target_rate)?;
    check_target_len(m, &r, target_len)?;
    upsample_features_range(m, target_rate, 0, target_len)
}

/// Samples `start .. start + len` of the full conditioning series.
pub fn upsample_features_range(m: &MelSpectrogram, target_rate: u32, start: usize, len: usize) -> Result<Tensor> {
    let r = feature_resampler(m, target_rate)?;
    let mut data = Vec::with_capacity(m.bands() * len);
    for band in m.band_major() {
        data.extend(r.apply_range(&band, start, len));
    }
    Tensor::new(vec![m.bands(), len], data)
}

/// Writes the binary feature format: magic, version, frame and band
/// counts, source rate, hop, band range, then little-endian f32 values in
/// frame-major order.
pub fn write_features(m: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 4 * m.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    for v in [m.frames() as u32, m.bands() as u32, m.source_rate, m.hop as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(m.fmin as f32).to_le_bytes());
    buf.extend_from_slice(&(m.fmax as f32).to_le_bytes());
    for v in m.data.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::FeatureFile("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let float = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(1) != FEATURE_VERSION {
        return Err(Error::FeatureFile(format!("unsupported version {}", word(1))));
    }
    let (frames, bands, rate, hop) = (word(2) as usize, word(3) as usize, word(4), word(5) as usize);
    if bytes.len() != 32 + 4 * frames * bands || hop == 0 || rate == 0 {
        return Err(Error::FeatureFile(format!("{} bytes for {frames}x{bands} frames", bytes.len())));
    }
    let data = (0..frames * bands).map(|i| float(8 + i) as f64).collect();
    Ok(MelSpectrogram {
        data: Tensor::new(vec![frames, bands], data)?,
        source_rate: rate,
        hop,
        fmin: float(6) as f64,
        fmax: float(7) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::sine;

    #[test]
    fn one_second_gives_two_hundred_frames() {
        let cfg = FeatureConfig::paper();
        let m = extract_logmel(&sine(1000.0, 0.5, 0.0, 48000, 48000), &cfg).unwrap();
        assert!((m.frames() as i64 - 200).abs() <= 1, "{}", m.frames());
        assert_eq!(m.bands(), 80);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FeatureConfig::desk();
        let m = extract_logmel(&Waveform::zeros(4000, 8000), &cfg).unwrap();
        assert!(m.data.data().iter().all(|v| *v == 1e-5f64.ln()));
    }

    #[test]
    fn tone_peaks_in_its_band() {
        let cfg = FeatureConfig::desk();
        let m = extract_logmel(&sine(1000.0, 0.5, 0.0, 8000, 8000), &cfg).unwrap();
        let row = m.data.row_slice(m.frames() / 2);
        let best = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let fb = mel_filterbank(80, cfg.fft_size, 8000, cfg.fmin, cfg.fmax);
        let bin = (1000.0 * cfg.fft_size as f64 / 8000.0).round() as usize;
        let expected = (0..80).max_by(|&a, &b| fb[a][bin].total_cmp(&fb[b][bin])).unwrap();
        assert!(best.abs_diff(expected) <= 1, "{best} vs {expected}");
    }

    fn spec(values: Vec<f64>, bands: usize) -> MelSpectrogram {
        let frames = values.len() / bands;
        MelSpectrogram { data: Tensor::new(vec![frames, bands], values).unwrap(), source_rate: 8000, hop: 40, fmin: 80.0, fmax: 3800.0 }
    }

    #[test]
    fn stats_by_hand() {
        let a = spec(vec![1.0, 10.0, 3.0, 10.0], 2);
        let b = spec(vec![5.0, 10.0], 2);
        let s = FeatureStats::fit(&[a.clone(), b]).unwrap();
        assert_eq!(s.mean, vec![3.0, 10.0]);
        assert!((s.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.std[1], STD_FLOOR);
        assert_eq!(s.floored, vec![false, true]);
        let n = s.apply(&a).unwrap();
        let again = FeatureStats::fit(&[s.apply(&a).unwrap(), s.apply(&spec(vec![5.0, 10.0], 2)).unwrap()]).unwrap();
        assert!(again.mean[0].abs() < 1e-12 && (again.std[0] - 1.0).abs() < 1e-12);
        assert_eq!(n.frames(), 2);
    }

    #[test]
    fn constant_features_upsample_to_constant() {
        let m = spec(vec![0.75; 80 * 201], 80);
        let h = upsample_features(&m, 2000, 2000).unwrap();
        assert_eq!(h.shape(), &[80, 2000]);
        for b in [0, 79] {
            let row = h.row_slice(b);
            assert!(row[200..1800].iter().all(|v| (v - 0.75).abs() < 1e-3));
        }
        assert!(matches!(upsample_features(&m, 2000, 2500), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.feat");
        let m = spec((0..160).map(|v| v as f64 * 0.25).collect(), 80);
        write_features(&m, &p).unwrap();
        assert_eq!(read_features(&p).unwrap(), m);
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(read_features(&p), Err(Error::FeatureFile(_))));
    }
}
