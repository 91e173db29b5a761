use std::f64::consts::PI;

use msrnv::resample::{design_lowpass, downsample_antialias, upsample_sinc, RateLadder, Resampler, ResamplerDesign};
use msrnv::signal::Waveform;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tone(freq: f64, len: usize, rate: u32) -> Vec<f64> {
    (0..len).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect()
}

fn white(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Amplitude of the `freq` component by least squares on sine and cosine.
fn amplitude(x: &[f64], freq: f64, rate: u32) -> f64 {
    let (mut ss, mut cc, mut sc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let ph = 2.0 * PI * freq * i as f64 / rate as f64;
        let (s, c) = ph.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    a.hypot(b)
}

/// Energy per DFT bin under a 4-term Blackman-Harris window, computed
/// directly.
fn spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let w = |i: usize| {
        let t = 2.0 * PI * i as f64 / n as f64;
        0.35875 - 0.48829 * t.cos() + 0.14128 * (2.0 * t).cos() - 0.01168 * (3.0 * t).cos()
    };
    let xw: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * w(i)).collect();
    let twiddle: Vec<(f64, f64)> = (0..n).map(|j| (-2.0 * PI * j as f64 / n as f64).sin_cos()).collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in xw.iter().enumerate() {
                let (s, c) = twiddle[(k * i) % n];
                re += v * c;
                im += v * s;
            }
            re * re + im * im
        })
        .collect()
}

fn energy_below(x: &[f64], rate: u32, cutoff: f64) -> (f64, f64) {
    let p = spectrum(x);
    let n = x.len() as f64;
    let below = p.iter().enumerate().filter(|(k, _)| (*k as f64) * rate as f64 / n < cutoff).map(|(_, v)| v).sum();
    (below, p.iter().sum())
}

fn ladder_pairs() -> Vec<(u32, u32)> {
    let r = RateLadder::paper().rates().to_vec();
    r.windows(2).map(|w| (w[0], w[1])).collect()
}

#[test]
fn tones_upsample_to_closed_form_at_every_ladder_ratio() {
    for (from, to) in ladder_pairs() {
        let n_in = from as usize / 5;
        for frac in [0.05, 0.2, 0.4] {
            let f = frac * from as f64;
            let x = Waveform::new(tone(f, n_in, from), from).unwrap();
            let y = upsample_sinc(&x, to).unwrap();
            assert_eq!(y.len(), (n_in as f64 * to as f64 / from as f64).round() as usize);
            let expect = tone(f, y.len(), to);
            let margin = y.len() / 4;
            let err = y.samples[margin..y.len() - margin]
                .iter()
                .zip(&expect[margin..])
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-3, "{from}->{to} Hz, tone {f} Hz: interior error {err}");
        }
    }
}

#[test]
fn two_tone_downsample_rejects_out_of_band() {
    let x: Vec<f64> = tone(100.0, 48000, 48000).iter().zip(tone(10_000.0, 48000, 48000)).map(|(a, b)| a + b).collect();
    let y = downsample_antialias(&Waveform::new(x, 48000).unwrap(), 16000).unwrap();
    let inner = &y.samples[2000..14000];
    let low = amplitude(inner, 100.0, 16000);
    let alias = amplitude(inner, 16000.0 - 10_000.0, 16000).max(amplitude(inner, 10_000.0 - 8000.0, 16000));
    assert!((20.0 * low.log10()).abs() < 0.1, "100 Hz gain {} dB", 20.0 * low.log10());
    assert!(20.0 * alias.log10() < -60.0, "alias at {} dB", 20.0 * alias.log10());
}

#[test]
fn upsampled_noise_has_no_images() {
    let x = Waveform::new(white(1000, 1), 1000).unwrap();
    let y = upsample_sinc(&x, 48000).unwrap();
    let (below, total) = energy_below(&y.samples[12000..36000], 48000, 500.0);
    let above_db = 10.0 * ((total - below) / total).log10();
    assert!(above_db < -60.0, "{above_db} dB above 500 Hz");
}

#[test]
fn band_split_residual_lives_above_the_lower_nyquist() {
    for (low, high) in ladder_pairs().into_iter().take(4) {
        let x = Waveform::new(white(high as usize / 2, high as u64), high).unwrap();
        let down = downsample_antialias(&x, low).unwrap();
        let back = upsample_sinc(&down, high).unwrap();
        let resid: Vec<f64> = x.samples.iter().zip(&back.samples).map(|(a, b)| a - b).collect();
        let m = resid.len() / 4;
        let edge = low as f64 / 2.0 * 0.9;
        let (below, total) = energy_below(&resid[m..resid.len() - m], high, edge);
        let db = 10.0 * (below / total).log10();
        assert!(db < -50.0, "{low}/{high} Hz: {db} dB of the residual below {edge} Hz");
    }
}

#[test]
fn round_trip_through_top_rate() {
    let x = Waveform::new(tone(120.0, 400, 1000), 1000).unwrap();
    let up = upsample_sinc(&x, 48000).unwrap();
    let back = downsample_antialias(&up, 1000).unwrap();
    assert_eq!(back.len(), x.len());
    let err = x.samples[100..300].iter().zip(&back.samples[100..300]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-2, "{err}");
}

#[test]
fn lowpass_kernel_oracle() {
    let k = design_lowpass(0.25, 0.05, 60.0).unwrap();
    let taps = k.taps.clone();
    let n = taps.len();
    assert_eq!(n % 2, 1);
    assert!(taps.iter().zip(taps.iter().rev()).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-3);
    let worst = (0..2000)
        .map(|i| 0.3 + 0.2 * i as f64 / 2000.0)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, t) in taps.iter().enumerate() {
                let ph = 2.0 * PI * f * j as f64;
                re += t * ph.cos();
                im -= t * ph.sin();
            }
            20.0 * re.hypot(im).log10()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= -60.0, "stopband peak {worst} dB");
}

#[test]
fn equal_rates_are_identity() {
    let x = Waveform::new(white(64, 3), 16000).unwrap();
    assert_eq!(upsample_sinc(&x, 16000).unwrap(), x);
    assert_eq!(downsample_antialias(&x, 16000).unwrap(), x);
    assert!(upsample_sinc(&x, 8000).is_err());
    assert!(downsample_antialias(&x, 24000).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn upsampling_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000, pair in 0usize..6) {
        let (from, to) = ladder_pairs()[pair];
        let r = Resampler::new(from, to, ResamplerDesign::default()).unwrap();
        let (x, y) = (white(97, seed), white(97, seed + 1));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = r.apply(&mix);
        let (rx, ry) = (r.apply(&x), r.apply(&y));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn output_length_law(len in 1usize..3000, pair in 0usize..6) {
        let (from, to) = ladder_pairs()[pair];
        let x = Waveform::new(vec![0.0; len], from).unwrap();
        let expect = (len as f64 * to as f64 / from as f64).round() as usize;
        prop_assert_eq!(upsample_sinc(&x, to).unwrap().len(), expect);
        let y = Waveform::new(vec![0.0; len], to).unwrap();
        prop_assert_eq!(downsample_antialias(&y, from).unwrap().len(), (len as f64 * from as f64 / to as f64).round() as usize);
    }
}
