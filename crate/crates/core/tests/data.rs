use std::fs;
use std::path::Path;

use msrnv::data::{harmonic_signal, make_synthetic_corpus, CorpusSpec};
use msrnv::features::FeatureConfig;
use msrnv::resample::RateLadder;

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["wav", "feats"] {
        let mut names: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out.push(("stats.json".into(), fs::read(root.join("stats.json")).unwrap()));
    out
}

#[test]
fn corpus_bytes_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = CorpusSpec { utterances: 1, heldout: 0, seconds: 0.5, f0_range: (100.0, 400.0), seed: 9 };
    let ladder = RateLadder::desk();
    make_synthetic_corpus(a.path(), &spec, &ladder, &FeatureConfig::desk()).unwrap();
    make_synthetic_corpus(b.path(), &spec, &ladder, &FeatureConfig::desk()).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
}

#[test]
fn corpus_rejects_f0_above_half_the_lowest_rate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { utterances: 1, heldout: 0, seconds: 0.2, f0_range: (100.0, 600.0), seed: 1 };
    assert!(make_synthetic_corpus(dir.path(), &spec, &RateLadder::desk(), &FeatureConfig::desk()).is_err());
}

/// Pitch from the shortest lag (50-600 Hz) whose normalized
/// autocorrelation peak comes within 15 % of the best one, which avoids
/// locking onto subharmonics.
fn autocorrelation_pitch(frame: &[f64], rate: u32) -> f64 {
    let (min_lag, max_lag) = ((rate / 600) as usize, (rate / 50) as usize);
    let r = |lag: usize| {
        let (a, b) = (&frame[..frame.len() - lag], &frame[lag..]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let norm = (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
        dot / norm
    };
    let rs: Vec<f64> = (0..=max_lag + 1).map(|l| if l < min_lag { 0.0 } else { r(l) }).collect();
    let peak = rs[min_lag..=max_lag].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best = (min_lag..=max_lag)
        .find(|&l| rs[l] >= 0.85 * peak && rs[l] >= rs[l - 1] && rs[l] >= rs[l + 1])
        .unwrap();
    let (l, c, h) = (rs[best - 1], rs[best], rs[best + 1]);
    let shift = 0.5 * (l - h) / (l - 2.0 * c + h);
    rate as f64 / (best as f64 + shift)
}

#[test]
fn f0_contour_agrees_with_autocorrelation() {
    let rate = 8000;
    for seed in 0..4 {
        let (w, f0) = harmonic_signal(2.0, rate, (100.0, 400.0), seed).unwrap();
        let frame = 320;
        for start in (0..w.len() - frame).step_by(frame) {
            let seg = &w.samples[start..start + frame];
            let est = autocorrelation_pitch(seg, rate);
            let truth = f0[start..start + frame].iter().sum::<f64>() / frame as f64;
            assert!((95.0..=420.0).contains(&est), "seed {seed} @ {start}: {est} Hz");
            assert!((est - truth).abs() / truth < 0.05, "seed {seed} @ {start}: {est} vs {truth} Hz");
        }
    }
}

#[test]
fn harmonics_stop_short_of_nyquist() {
    let rate = 8000;
    let (w, _) = harmonic_signal(1.0, rate, (100.0, 400.0), 4).unwrap();
    let n = w.len();
    let power = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in w.samples.iter().enumerate() {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            re += v * hann * ph.cos();
            im += v * hann * ph.sin();
        }
        re * re + im * im
    };
    let total: f64 = (0..=n / 2).step_by(4).map(power).sum();
    let top: f64 = (n * 24 / 50..=n / 2).step_by(4).map(power).sum();
    assert!(10.0 * (top / total).log10() < -40.0);
}
