//! Windowed-sinc FIR design and rational-ratio polyphase resampling.
//!
//! Every rate change goes through [`Resampler`], a linear operator
//! `y = R x` built from a Kaiser-windowed sinc prototype designed at the
//! intermediate rate `from * L`. Its transpose is exposed so that upsampling
//! can sit inside a differentiable graph.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Largest reduced numerator/denominator accepted for a rate ratio.
pub const MAX_RATIO_TERM: u32 = 1024;

const MAX_TAPS: usize = 1 << 18;

/// Zeroth-order modified Bessel function of the first kind.
pub fn bessel_i0(x: f64) -> f64 {
    let q = (x / 2.0).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Kaiser beta for a target stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

fn kaiser(n: isize, half: usize, beta: f64) -> f64 {
    let r = n as f64 / half as f64;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaiserDesign {
    pub beta: f64,
    pub atten_db: f64,
    /// Sinc zero crossings on each side of the centre tap.
    pub zero_crossings: f64,
}

/// A symmetric, odd-length, unit-DC-gain lowpass FIR.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    /// Cutoff in cycles per sample, in (0, 0.5].
    pub cutoff: f64,
    pub design: KaiserDesign,
}

impl FilterKernel {
    fn windowed_sinc(cutoff: f64, half: usize, atten_db: f64) -> Self {
        let beta = kaiser_beta(atten_db);
        let mut taps: Vec<f64> = (-(half as isize)..=half as isize)
            .map(|n| 2.0 * cutoff * sinc(2.0 * cutoff * n as f64) * kaiser(n, half, beta))
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        FilterKernel {
            taps,
            cutoff,
            design: KaiserDesign { beta, atten_db, zero_crossings: 2.0 * cutoff * half as f64 },
        }
    }

    pub fn half_len(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Magnitude response at normalized frequency `f` (cycles per sample).
    pub fn response(&self, f: f64) -> f64 {
        let h = self.half_len() as f64;
        let w = 2.0 * std::f64::consts::PI * f;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, t) in self.taps.iter().enumerate() {
            let ph = w * (n as f64 - h);
            re += t * ph.cos();
            im -= t * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    /// Worst-case stopband gain in dB over `[from, 0.5]`, on a dense grid.
    pub fn stopband_db(&self, from: f64) -> f64 {
        let points = (self.taps.len() * 8).max(2048);
        let mut worst: f64 = 0.0;
        for i in 0..=points {
            let f = from + (0.5 - from) * i as f64 / points as f64;
            worst = worst.max(self.response(f));
        }
        20.0 * worst.max(1e-300).log10()
    }

    /// Straight convolution, output centred on the input ("same" length,
    /// zero extension).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let h = self.half_len() as isize;
        let n = x.len() as isize;
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for (k, t) in self.taps.iter().enumerate() {
                    let j = i + h - k as isize;
                    if (0..n).contains(&j) {
                        acc += t * x[j as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Designs a linear-phase Kaiser-windowed sinc lowpass. The passband edge is
/// `cutoff - transition/2`, the stopband edge `cutoff + transition/2`; the
/// tap count grows until the measured stopband meets `stopband_atten_db`.
pub fn design_lowpass(cutoff: f64, transition_width: f64, stopband_atten_db: f64) -> Result<FilterKernel> {
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::InvalidArgument(format!("cutoff {cutoff} outside (0, 0.5)")));
    }
    if stopband_atten_db < 40.0 {
        return Err(Error::InvalidArgument("stopband attenuation must be at least 40 dB".into()));
    }
    if !(transition_width > 0.0) || cutoff + transition_width / 2.0 >= 0.5 {
        return Err(Error::Design(format!(
            "transition {transition_width} around cutoff {cutoff} leaves no stopband"
        )));
    }
    let estimate = ((stopband_atten_db - 7.95) / (14.36 * transition_width)).ceil() as usize;
    let mut half = estimate.div_ceil(2).max(1);
    let stop = cutoff + transition_width / 2.0;
    loop {
        if 2 * half + 1 > MAX_TAPS {
            return Err(Error::Design(format!(
                "transition {transition_width} needs more than {MAX_TAPS} taps"
            )));
        }
        let k = FilterKernel::windowed_sinc(cutoff, half, stopband_atten_db);
        if k.stopband_db(stop) <= -stopband_atten_db {
            return Ok(k);
        }
        half += half / 16 + 1;
    }
}

/// Design knobs for [`Resampler`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplerDesign {
    pub zero_crossings: u32,
    pub atten_db: f64,
    /// Cutoff as a fraction of the lower Nyquist frequency.
    pub rolloff: f64,
}

impl Default for ResamplerDesign {
    fn default() -> Self {
        Self { zero_crossings: 64, atten_db: 80.0, rolloff: 0.95 }
    }
}

impl Eq for ResamplerDesign {}

impl std::hash::Hash for ResamplerDesign {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.zero_crossings.hash(state);
        self.atten_db.to_bits().hash(state);
        self.rolloff.to_bits().hash(state);
    }
}

#[derive(Debug, Clone)]
struct Phase {
    /// Offset of the first contributing input sample relative to `t / L`.
    first: isize,
    coeffs: Vec<f64>,
}

/// Rational-ratio polyphase resampler, `from -> to` Hz.
#[derive(Debug, Clone)]
pub struct Resampler {
    from: u32,
    to: u32,
    up: usize,
    down: usize,
    kernel: FilterKernel,
    phases: Vec<Phase>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn reduced_ratio(from: u32, to: u32) -> Result<(usize, usize)> {
    if from == 0 || to == 0 {
        return Err(Error::Ratio { from, to, reason: "rates must be positive".into() });
    }
    let g = gcd(from as u64, to as u64) as u32;
    let (up, down) = (to / g, from / g);
    if up > MAX_RATIO_TERM || down > MAX_RATIO_TERM {
        return Err(Error::Ratio {
            from,
            to,
            reason: format!("reduced ratio {up}/{down} has terms above {MAX_RATIO_TERM}"),
        });
    }
    Ok((up as usize, down as usize))
}

impl Resampler {
    pub fn new(from: u32, to: u32, design: ResamplerDesign) -> Result<Self> {
        let (up, down) = reduced_ratio(from, to)?;
        let cutoff = design.rolloff * 0.5 / up.max(down) as f64;
        let half = (design.zero_crossings as f64 / (2.0 * cutoff)).ceil() as usize;
        let kernel = if up == 1 && down == 1 {
            FilterKernel {
                taps: vec![1.0],
                cutoff: 0.5,
                design: KaiserDesign { beta: 0.0, atten_db: f64::INFINITY, zero_crossings: 0.0 },
            }
        } else {
            FilterKernel::windowed_sinc(cutoff, half, design.atten_db)
        };
        let half = kernel.half_len() as isize;
        let l = up as isize;
        let phases = (0..l)
            .map(|p| {
                // input k contributes to output time t = qL + p with tap
                // index n = p + (q - k)L + half, 0 <= n <= 2*half
                let j_min = (-half - p).div_euclid(l) + ((-half - p).rem_euclid(l) != 0) as isize;
                let j_max = (half - p).div_euclid(l);
                let coeffs = (j_min..=j_max)
                    .rev()
                    .map(|j| up as f64 * kernel.taps[(p + j * l + half) as usize])
                    .collect();
                Phase { first: -j_max, coeffs }
            })
            .collect();
        Ok(Self { from, to, up, down, kernel, phases })
    }

    /// Process-wide cache of resamplers keyed by rates and design.
    pub fn shared(from: u32, to: u32, design: ResamplerDesign) -> Result<Arc<Resampler>> {
        type Cache = Mutex<HashMap<(u32, u32, ResamplerDesign), Arc<Resampler>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().unwrap().get(&(from, to, design)) {
            return Ok(r.clone());
        }
        let r = Arc::new(Resampler::new(from, to, design)?);
        cache.lock().unwrap().insert((from, to, design), r.clone());
        Ok(r)
    }

    pub fn from_rate(&self) -> u32 {
        self.from
    }

    pub fn to_rate(&self) -> u32 {
        self.to
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn kernel(&self) -> &FilterKernel {
        &self.kernel
    }

    /// `round(len * to / from)`, halves rounded up.
    pub fn output_len(&self, len: usize) -> usize {
        (len * self.up + self.down / 2) / self.down
    }

    fn locate(&self, m: usize) -> (&Phase, isize) {
        let t = m * self.down;
        let phase = &self.phases[t % self.up];
        (phase, (t / self.up) as isize + phase.first)
    }

    /// Output samples `start .. start + len` of the full resampled signal.
    pub fn apply_range(&self, x: &[f64], start: usize, len: usize) -> Vec<f64> {
        let n = x.len() as isize;
        (start..start + len)
            .map(|m| {
                let (phase, k0) = self.locate(m);
                let lo = (-k0).max(0) as usize;
                let hi = (n - k0).clamp(0, phase.coeffs.len() as isize) as usize;
                if lo >= hi {
                    return 0.0;
                }
                let xs = &x[(k0 + lo as isize) as usize..(k0 + hi as isize) as usize];
                phase.coeffs[lo..hi].iter().zip(xs).map(|(c, v)| c * v).sum()
            })
            .collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_range(x, 0, self.output_len(x.len()))
    }

    /// Transpose of [`apply`](Self::apply): maps an output-space gradient
    /// back onto an input of length `in_len`.
    pub fn apply_transpose(&self, grad: &[f64], in_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; in_len];
        let n = in_len as isize;
        for (m, g) in grad.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let (phase, k0) = self.locate(m);
            let lo = (-k0).max(0) as usize;
            let hi = (n - k0).clamp(0, phase.coeffs.len() as isize) as usize;
            if lo >= hi {
                continue;
            }
            let dst = &mut out[(k0 + lo as isize) as usize..(k0 + hi as isize) as usize];
            for (d, c) in dst.iter_mut().zip(&phase.coeffs[lo..hi]) {
                *d += c * g;
            }
        }
        out
    }
}

/// Band-limited upsampling with the default design.
pub fn upsample_sinc(x: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate < x.rate {
        return Err(Error::Ratio {
            from: x.rate,
            to: target_rate,
            reason: "target below source, use downsample_antialias".into(),
        });
    }
    resample_to(x, target_rate)
}

/// Anti-aliased downsampling with the default design.
pub fn downsample_antialias(x: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate > x.rate {
        return Err(Error::Ratio {
            from: x.rate,
            to: target_rate,
            reason: "target above source, use upsample_sinc".into(),
        });
    }
    resample_to(x, target_rate)
}

/// Either direction.
pub fn resample_to(x: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == x.rate {
        return Ok(x.clone());
    }
    let r = Resampler::shared(x.rate, target_rate, ResamplerDesign::default())?;
    Ok(Waveform { samples: r.apply(&x.samples), rate: target_rate })
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Hann-windowed periodogram; returns (bin frequencies, power).
pub fn periodogram(x: &Waveform) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    let w = hann(n);
    let mut buf: Vec<Complex<f64>> = x.samples.iter().zip(&w).map(|(s, w)| Complex::new(s * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let freqs = (0..bins).map(|k| k as f64 * x.rate as f64 / n as f64).collect();
    let power = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
    Ok((freqs, power))
}

/// Fraction of periodogram energy with frequency in `[f_lo, f_hi]`.
pub fn band_energy_fraction(x: &Waveform, f_lo: f64, f_hi: f64) -> Result<f64> {
    let nyquist = x.rate as f64 / 2.0;
    if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "band [{f_lo}, {f_hi}] outside [0, {nyquist}]"
        )));
    }
    let (freqs, power) = periodogram(x)?;
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("signal has no energy".into()));
    }
    let band: f64 = freqs
        .iter()
        .zip(&power)
        .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
        .map(|(_, p)| p)
        .sum();
    Ok((band / total).clamp(0.0, 1.0))
}

/// Ascending list of sampling rates generated stage by stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct RateLadder(Vec<u32>);

impl RateLadder {
    pub fn new(rates: Vec<u32>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidArgument("rate ladder is empty".into()));
        }
        if rates[0] == 0 {
            return Err(Error::InvalidArgument("rates must be positive".into()));
        }
        for w in rates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!("ladder not ascending at {} -> {}", w[0], w[1])));
            }
            reduced_ratio(w[0], w[1])?;
        }
        Ok(Self(rates))
    }

    /// {1, 2, 4, 8, 16, 24, 48} kHz.
    pub fn paper() -> Self {
        Self(vec![1000, 2000, 4000, 8000, 16000, 24000, 48000])
    }

    /// {1, 2, 4, 8} kHz.
    pub fn desk() -> Self {
        Self(vec![1000, 2000, 4000, 8000])
    }

    pub fn rates(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self) -> u32 {
        *self.0.last().unwrap()
    }

    /// Position of `rate` in the ladder.
    pub fn index_of(&self, rate: u32) -> Option<usize> {
        self.0.iter().position(|&r| r == rate)
    }

    /// Number of stages an item recorded at `native_rate` can supervise:
    /// the largest `J` with `f_J <= native_rate`.
    pub fn usable_stages(&self, native_rate: u32) -> usize {
        self.0.iter().take_while(|&&r| r <= native_rate).count()
    }

    /// Greatest common divisor of all rates; clip offsets on a grid of
    /// `1 / gcd` seconds land on whole samples at every stage.
    pub fn common_divisor(&self) -> u32 {
        self.0.iter().fold(0u64, |g, &r| gcd(g, r as u64)) as u32
    }
}

impl TryFrom<Vec<u32>> for RateLadder {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        RateLadder::new(v)
    }
}

impl From<RateLadder> for Vec<u32> {
    fn from(l: RateLadder) -> Self {
        l.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::sine;

    fn interior_max_err(a: &[f64], b: &[f64], margin: usize) -> f64 {
        a[margin..a.len() - margin]
            .iter()
            .zip(&b[margin..b.len() - margin])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-11);
    }

    #[test]
    fn lowpass_meets_requested_rejection() {
        let k = design_lowpass(0.25, 0.05, 60.0).unwrap();
        assert!(k.taps.len() % 2 == 1);
        let n = k.taps.len();
        for i in 0..n / 2 {
            assert_eq!(k.taps[i], k.taps[n - 1 - i]);
        }
        // independent DFT of the taps on a dense grid
        let mut worst: f64 = 0.0;
        for i in 0..4000 {
            let f = 0.275 + (0.5 - 0.275) * i as f64 / 3999.0;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, t) in k.taps.iter().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * f * j as f64;
                re += t * ph.cos();
                im += t * ph.sin();
            }
            worst = worst.max((re * re + im * im).sqrt());
        }
        assert!(20.0 * worst.log10() <= -60.0, "{} dB", 20.0 * worst.log10());
        assert!((k.dc_gain() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lowpass_impulse_returns_kernel() {
        let k = design_lowpass(0.2, 0.1, 50.0).unwrap();
        let n = k.taps.len();
        let mut x = vec![0.0; 3 * n];
        x[n + n / 2] = 1.0;
        let y = k.filter(&x);
        for (i, t) in k.taps.iter().enumerate() {
            assert!((y[n + i] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn lowpass_rejects_bad_specs() {
        assert!(matches!(design_lowpass(0.6, 0.05, 60.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(design_lowpass(0.49, 0.05, 60.0), Err(Error::Design(_))));
        assert!(matches!(design_lowpass(0.25, 1e-7, 60.0), Err(Error::Design(_))));
    }

    #[test]
    fn identity_when_rates_match() {
        let x = sine(100.0, 0.5, 0.0, 1000, 1000);
        assert_eq!(upsample_sinc(&x, 1000).unwrap(), x);
        assert_eq!(downsample_antialias(&x, 1000).unwrap(), x);
    }

    #[test]
    fn direction_errors() {
        let x = sine(100.0, 0.5, 0.0, 1000, 2000);
        assert!(upsample_sinc(&x, 1000).is_err());
        assert!(downsample_antialias(&x, 4000).is_err());
        assert!(upsample_sinc(&x, 2001 * 1009).is_err());
    }

    #[test]
    fn sine_upsampled_matches_closed_form() {
        let x = sine(100.0, 0.8, 0.3, 1000, 1000);
        let y = upsample_sinc(&x, 2000).unwrap();
        let expect = sine(100.0, 0.8, 0.3, 2000, 2000);
        assert_eq!(y.len(), 2000);
        assert!(interior_max_err(&y.samples, &expect.samples, 200) < 1e-3);
    }

    #[test]
    fn length_law_for_ladder_ratios() {
        for (a, b) in [(1000, 2000), (16000, 24000), (24000, 48000), (8000, 16000)] {
            let r = Resampler::new(a, b, ResamplerDesign::default()).unwrap();
            for len in [1usize, 2, 3, 7, 100, 101, 333] {
                let expect = (len as f64 * b as f64 / a as f64).round() as usize;
                assert_eq!(r.output_len(len), expect);
                assert_eq!(r.apply(&vec![0.1; len]).len(), expect);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let r = Resampler::new(16000, 24000, ResamplerDesign::default()).unwrap();
        let x: Vec<f64> = (0..301).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let y = r.apply(&x);
        let g: Vec<f64> = (0..y.len()).map(|i| ((i * 13 % 71) as f64 / 35.0) - 1.0).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let gt = r.apply_transpose(&g, x.len());
        let rhs: f64 = x.iter().zip(&gt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn range_matches_full_output() {
        let r = Resampler::new(200, 8000, ResamplerDesign::default()).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let full = r.apply(&x);
        assert_eq!(r.apply_range(&x, 517, 300), full[517..817].to_vec());
    }

    #[test]
    fn band_fraction_edge_cases() {
        let x = sine(100.0, 0.5, 0.0, 4000, 8000);
        assert!(band_energy_fraction(&x, 50.0, 150.0).unwrap() >= 0.99);
        assert!((band_energy_fraction(&x, 0.0, 4000.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(band_energy_fraction(&Waveform::zeros(100, 8000), 0.0, 100.0).is_err());
        assert!(band_energy_fraction(&Waveform::zeros(0, 8000), 0.0, 100.0).is_err());
        assert!(band_energy_fraction(&x, 100.0, 5000.0).is_err());
    }

    #[test]
    fn ladder_validation() {
        assert!(RateLadder::new(vec![]).is_err());
        assert!(RateLadder::new(vec![2000, 1000]).is_err());
        let l = RateLadder::paper();
        assert_eq!(l.usable_stages(16000), 5);
        assert_eq!(l.usable_stages(22050), 5);
        assert_eq!(l.usable_stages(48000), 7);
        assert_eq!(l.usable_stages(500), 0);
        assert_eq!(l.common_divisor(), 1000);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(serde_json::from_str::<RateLadder>(&json).unwrap(), l);
        assert!(serde_json::from_str::<RateLadder>("[3, 2]").is_err());
    }
}
