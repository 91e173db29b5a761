//! Real-time-factor measurement and objective spectral metrics.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::autograd::{Eager, Graph, Tensor};
use crate::data::{load_targets, DatasetManifest};
use crate::error::{Error, Result};
use crate::features::{read_features, FeatureStats, MelSpectrogram};
use crate::generator::GeneratorCascade;
use crate::loss::{mr_stft_loss, ResolutionConfig};
use crate::resample::{band_energy_fraction, upsample_sinc, RateLadder};
use crate::signal::Waveform;
use crate::spectral::StftPlan;

/// Synthesis runs on the calling thread only.
pub const BENCH_THREADS: usize = 1;

/// Largest allowed spread of repeat means, as a fraction of their mean.
pub const MAX_REPEAT_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 1, repeats: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceTiming {
    pub id: String,
    pub duration: f64,
    /// Mean wall seconds over the timed repeats.
    pub wall: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageShare {
    pub rate: u32,
    pub seconds: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtfReport {
    pub model: String,
    pub threads: usize,
    pub warmup: usize,
    pub utterances: Vec<UtteranceTiming>,
    /// Mean per-utterance RTF of each timed repeat.
    pub repeat_rtf: Vec<f64>,
    pub mean_rtf: f64,
    /// Coefficient of variation of `repeat_rtf`.
    pub spread: f64,
    pub unstable: bool,
    pub stages: Vec<StageShare>,
}

impl RtfReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        writeln!(f, "model,threads,id,duration_s,wall_s,rtf")?;
        for u in &self.utterances {
            writeln!(f, "{},{},{},{},{},{}", self.model, self.threads, u.id, u.duration, u.wall, u.rtf)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let stages: Vec<String> = self.stages.iter().map(|s| format!("{}Hz {:.1}%", s.rate, 100.0 * s.fraction)).collect();
        format!(
            "{}: mean RTF {:.4} over {} utterances, {} thread(s), spread {:.1}%{}; stages: {}",
            self.model,
            self.mean_rtf,
            self.utterances.len(),
            self.threads,
            100.0 * self.spread,
            if self.unstable { " (UNSTABLE)" } else { "" },
            stages.join(", ")
        )
    }
}

/// Times end-to-end synthesis of every input, discarding `warmup` passes.
pub fn bench_rtf(model: &str, cascade: &GeneratorCascade, inputs: &[(String, MelSpectrogram)], cfg: &BenchConfig) -> Result<RtfReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no feature files to benchmark".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidArgument("at least one timed repeat is needed".into()));
    }
    let mut walls = vec![0.0; inputs.len()];
    let mut durations = vec![0.0; inputs.len()];
    let mut stage_secs = vec![0.0; cascade.len()];
    let mut repeat_rtf = Vec::with_capacity(cfg.repeats);
    for pass in 0..cfg.warmup + cfg.repeats {
        let mut rtf_sum = 0.0;
        for (k, (_, mel)) in inputs.iter().enumerate() {
            let t0 = Instant::now();
            let (out, timing) = cascade.synthesize_timed(mel, None, None, cfg.seed)?;
            let wall = t0.elapsed().as_secs_f64();
            let duration = out.last().map_or(0.0, Waveform::duration_seconds);
            if duration <= 0.0 {
                return Err(Error::InvalidArgument(format!("{} produced no audio", inputs[k].0)));
            }
            if pass >= cfg.warmup {
                walls[k] += wall / cfg.repeats as f64;
                durations[k] = duration;
                rtf_sum += wall / duration;
                for (s, t) in stage_secs.iter_mut().zip(&timing) {
                    *s += (t.conditioning + t.network).as_secs_f64();
                }
            }
        }
        if pass >= cfg.warmup {
            repeat_rtf.push(rtf_sum / inputs.len() as f64);
        }
    }
    let mean_rtf = repeat_rtf.iter().sum::<f64>() / repeat_rtf.len() as f64;
    let spread = if repeat_rtf.len() > 1 {
        let var = repeat_rtf.iter().map(|r| (r - mean_rtf).powi(2)).sum::<f64>() / (repeat_rtf.len() - 1) as f64;
        var.sqrt() / mean_rtf
    } else {
        0.0
    };
    let stage_total: f64 = stage_secs.iter().sum();
    Ok(RtfReport {
        model: model.to_string(),
        threads: BENCH_THREADS,
        warmup: cfg.warmup,
        utterances: inputs
            .iter()
            .zip(walls.iter().zip(&durations))
            .map(|((id, _), (&wall, &duration))| UtteranceTiming { id: id.clone(), duration, wall, rtf: wall / duration })
            .collect(),
        repeat_rtf,
        mean_rtf,
        spread,
        unstable: spread >= MAX_REPEAT_SPREAD,
        stages: cascade
            .stages
            .iter()
            .zip(&stage_secs)
            .map(|(s, &seconds)| StageShare { rate: s.out_rate, seconds, fraction: seconds / stage_total })
            .collect(),
    })
}

/// Bands `[0, f_1/2]`, `[f_1/2, f_2/2]`, ..., up to the Nyquist frequency of
/// ladder stage `stage` (zero-based).
pub fn ladder_bands(ladder: &RateLadder, stage: usize) -> Vec<(f64, f64)> {
    let mut lo = 0.0;
    ladder.rates()[..=stage]
        .iter()
        .map(|&r| {
            let band = (lo, r as f64 / 2.0);
            lo = band.1;
            band
        })
        .collect()
}

/// Share of total energy in each band.
pub fn band_fractions(x: &Waveform, bands: &[(f64, f64)]) -> Result<Vec<f64>> {
    bands.iter().map(|&(lo, hi)| band_energy_fraction(x, lo, hi)).collect()
}

pub const LSD_FFT: usize = 1024;
const LSD_HOP: usize = 256;
const LSD_FLOOR: f64 = 1e-10;

/// Log-spectral distance in dB: per-frame RMS over bins of the power ratio
/// in dB, averaged over frames of a 1024-point Hann STFT.
pub fn log_spectral_distance(generated: &[f64], reference: &[f64]) -> Result<f64> {
    if generated.len() != reference.len() || generated.is_empty() {
        return Err(Error::Shape(format!("{} vs {} samples", generated.len(), reference.len())));
    }
    let plan = StftPlan::new(LSD_FFT, LSD_FFT, LSD_HOP, LSD_FLOOR)?;
    let pad = |x: &[f64]| {
        let mut v = x.to_vec();
        v.resize(v.len().max(LSD_FFT / 2 + 1), 0.0);
        v
    };
    let (g, r) = (plan.magnitude_only(&pad(generated)), plan.magnitude_only(&pad(reference)));
    let bins = g.cols();
    let frames = g.rows();
    let total: f64 = (0..frames)
        .map(|t| {
            let ms = g.row_slice(t).iter().zip(r.row_slice(t)).map(|(a, b)| (20.0 * (b / a).log10()).powi(2)).sum::<f64>() / bins as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// MR-STFT distance with the training resolutions for `rate`.
pub fn mr_stft_distance(generated: &[f64], reference: &[f64], resolutions: &ResolutionConfig, rate: u32) -> Result<f64> {
    let plans = resolutions.plans_for_rate(rate)?;
    let mut g = Eager;
    let x = g.constant(Tensor::row(generated.to_vec()));
    let (l, _) = mr_stft_loss(&mut g, &x, reference, &plans)?;
    Ok(l.item())
}

/// Energy share of `x - upsample(prev)` above the Nyquist frequency of
/// `prev`, or NaN when the difference is silent.
pub fn residual_above(prev: &Waveform, x: &Waveform) -> Result<f64> {
    let up = upsample_sinc(prev, x.rate)?;
    let n = up.len().min(x.len());
    let d = Waveform::new((0..n).map(|k| x.samples[k] - up.samples[k]).collect(), x.rate)?;
    if d.energy() == 0.0 {
        return Ok(f64::NAN);
    }
    band_energy_fraction(&d, prev.rate as f64 / 2.0, x.rate as f64 / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateMetrics {
    pub id: String,
    pub rate: u32,
    pub lsd_db: f64,
    pub mr_stft: f64,
    /// Largest absolute difference of ladder-band energy fractions between
    /// generated and reference audio.
    pub band_gap: f64,
    /// Share of the energy this stage adds to the upsampled previous stage
    /// that lies above the previous Nyquist frequency. NaN for the first
    /// stage and for stages that add nothing.
    pub residual_above: f64,
    /// Set when generated and reference lengths differed and were cropped.
    pub cropped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<RateMetrics>,
}

impl MetricReport {
    pub const HEADER: &'static str = "id,rate,lsd_db,mr_stft,band_gap,residual_above,cropped";

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        writeln!(f, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{},{},{},{}", r.id, r.rate, r.lsd_db, r.mr_stft, r.band_gap, r.residual_above, r.cropped as u8)?;
        }
        Ok(())
    }

    /// Mean (LSD, MR-STFT) per rate, ascending by rate.
    pub fn means(&self) -> Vec<(u32, f64, f64)> {
        let mut rates: Vec<u32> = self.rows.iter().map(|r| r.rate).collect();
        rates.sort_unstable();
        rates.dedup();
        rates
            .into_iter()
            .map(|rate| {
                let rows: Vec<&RateMetrics> = self.rows.iter().filter(|r| r.rate == rate).collect();
                let n = rows.len() as f64;
                (rate, rows.iter().map(|r| r.lsd_db).sum::<f64>() / n, rows.iter().map(|r| r.mr_stft).sum::<f64>() / n)
            })
            .collect()
    }
}

/// Synthesizes every manifest entry from its features and scores each
/// stage against the anti-aliased reference at that rate.
pub fn evaluate(
    cascade: &GeneratorCascade,
    stats: &FeatureStats,
    manifest: &DatasetManifest,
    resolutions: &ResolutionConfig,
    seed: u64,
) -> Result<MetricReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("no entries to evaluate".into()));
    }
    let usable = manifest.usable_stages(&cascade.ladder)?;
    let mut report = MetricReport::default();
    for (entry, j) in manifest.entries.iter().zip(usable) {
        let mel = stats.apply(&read_features(&entry.features)?)?;
        let targets = load_targets(entry, &cascade.ladder, j, None)?;
        let seconds = targets[j - 1].duration_seconds();
        let rate = cascade.ladder.rates()[j - 1];
        let outs = cascade.synthesize(&mel, Some(seconds), Some(rate), seed)?;
        for (i, (out, target)) in outs.iter().zip(&targets).enumerate() {
            let n = out.len().min(target.len());
            let (g, r) = (&out.samples[..n], &target.samples[..n]);
            let bands = ladder_bands(&cascade.ladder, i);
            let gen_bands = band_fractions(&Waveform::new(g.to_vec(), out.rate)?, &bands)?;
            let ref_bands = band_fractions(&Waveform::new(r.to_vec(), out.rate)?, &bands)?;
            report.rows.push(RateMetrics {
                id: entry.id(),
                rate: out.rate,
                lsd_db: log_spectral_distance(g, r)?,
                mr_stft: mr_stft_distance(g, r, resolutions, out.rate)?,
                band_gap: gen_bands.iter().zip(&ref_bands).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())),
                residual_above: if i == 0 { f64::NAN } else { residual_above(&outs[i - 1], out)? },
                cropped: out.len() != target.len(),
            });
        }
    }
    Ok(report)
}
