//! Dataset manifests, the synthetic harmonic corpus and per-rate targets.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{extract_logmel, read_features, write_features, FeatureConfig, FeatureStats, MelSpectrogram};
use crate::resample::{resample_to, RateLadder};
use crate::signal::{read_wav, write_wav, Waveform};

/// One utterance: audio at its native rate and its feature file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub native_rate: u32,
    pub features: PathBuf,
}

impl ManifestEntry {
    /// File stem of the audio path.
    pub fn id(&self) -> String {
        self.audio.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

/// Tab-separated `audio path, native rate, feature path` records. Relative
/// paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Manifest(format!("line {}: expected 3 tab-separated fields", n + 1)));
            }
            let native_rate = cols[1]
                .trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("line {}: bad rate {:?}", n + 1, cols[1])))?;
            entries.push(ManifestEntry { audio: base.join(cols[0]), native_rate, features: base.join(cols[2]) });
        }
        if entries.is_empty() {
            return Err(Error::Manifest(format!("{} has no entries", path.display())));
        }
        Ok(Self { entries })
    }

    /// Writes paths relative to the manifest's directory where possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", rel(&e.audio), e.native_rate, rel(&e.features)));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Stages each entry can supervise; errors if an entry is below `f_1`.
    pub fn usable_stages(&self, ladder: &RateLadder) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| match ladder.usable_stages(e.native_rate) {
                0 => Err(Error::Manifest(format!("{}: {} Hz is below the lowest ladder rate", e.audio.display(), e.native_rate))),
                j => Ok(j),
            })
            .collect()
    }
}

/// Stable 64-bit digest of an utterance id.
pub fn id_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Audio at `rate` for feature analysis, resampled in either direction.
pub fn analysis_audio(w: &Waveform, rate: u32) -> Result<Waveform> {
    resample_to(w, rate)
}

/// Targets for stages `0..J` of a native-rate waveform, cached as
/// `<id>.<rate>.wav` under `cache_dir` when given. Cached and fresh targets
/// both pass through 16-bit quantization so they agree exactly.
pub fn load_targets(
    entry: &ManifestEntry,
    ladder: &RateLadder,
    stages: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<Waveform>> {
    let mut audio: Option<Waveform> = None;
    let mut out = Vec::with_capacity(stages);
    for &rate in &ladder.rates()[..stages] {
        let cached = cache_dir.map(|d| d.join(format!("{}.{rate}.wav", entry.id())));
        if let Some(p) = cached.as_ref().filter(|p| p.exists()) {
            out.push(read_wav(p)?);
            continue;
        }
        if audio.is_none() {
            let a = read_wav(&entry.audio)?;
            if a.rate != entry.native_rate {
                return Err(Error::Manifest(format!(
                    "{}: manifest says {} Hz, file is {} Hz",
                    entry.audio.display(),
                    entry.native_rate,
                    a.rate
                )));
            }
            audio = Some(a);
        }
        let t = resample_to(audio.as_ref().unwrap(), rate)?;
        match cached {
            Some(p) => {
                if let Some(d) = p.parent() {
                    fs::create_dir_all(d)?;
                }
                write_wav(&t, &p)?;
                out.push(read_wav(&p)?);
            }
            None => out.push(t),
        }
    }
    Ok(out)
}

/// Parameters of the synthetic harmonic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub utterances: usize,
    pub heldout: usize,
    pub seconds: f64,
    pub f0_range: (f64, f64),
    pub seed: u64,
}

impl CorpusSpec {
    /// 20 training and 4 held-out utterances of 2 s, f0 in 100-400 Hz.
    pub fn desk(seed: u64) -> Self {
        Self { utterances: 20, heldout: 4, seconds: 2.0, f0_range: (100.0, 400.0), seed }
    }
}

/// A voiced, speech-like test signal: smoothly wandering f0, harmonics with
/// decaying amplitudes that fade out below 95 % of Nyquist, a syllabic
/// envelope, and a -50 dB noise floor.
pub fn harmonic_signal(seconds: f64, rate: u32, f0_range: (f64, f64), seed: u64) -> Result<(Waveform, Vec<f64>)> {
    let (lo, hi) = f0_range;
    let nyq = rate as f64 / 2.0;
    if !(lo > 0.0 && lo < hi && hi < 0.95 * nyq) {
        return Err(Error::InvalidArgument(format!("f0 range {lo}-{hi} Hz invalid at {rate} Hz")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate as f64).round() as usize;
    let wander: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.3..2.0), rng.random_range(0.0..2.0 * PI))).collect();
    let syllables: Vec<(f64, f64)> = (0..2).map(|_| (rng.random_range(2.5..5.0), rng.random_range(0.0..2.0 * PI))).collect();
    let tilt = rng.random_range(0.6..1.2);
    let edge = 0.95 * nyq;
    let fade = 0.1 * nyq;
    let max_harmonics = (edge / lo).floor() as usize;
    let mut phase = 0.0;
    let mut f0s = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate as f64;
        let s = wander.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>() / 3.0;
        let f0 = lo + (hi - lo) * (0.5 + 0.5 * s);
        phase += 2.0 * PI * f0 / rate as f64;
        let mut v = 0.0;
        for k in 1..=max_harmonics {
            let fk = k as f64 * f0;
            let taper = ((edge - fk) / fade).clamp(0.0, 1.0);
            if taper == 0.0 {
                break;
            }
            v += taper * (k as f64).powf(-tilt) * (k as f64 * phase).sin();
        }
        let env = syllables.iter().map(|(f, p)| 0.5 + 0.5 * (2.0 * PI * f * t + p).sin()).product::<f64>();
        x.push(v * (0.15 + 0.85 * env));
        f0s.push(f0);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let floor = 0.5 * 10f64.powf(-50.0 / 20.0);
    for v in &mut x {
        let noise: f64 = StandardNormal.sample(&mut rng);
        *v = 0.5 * *v / peak + floor * noise;
    }
    Ok((Waveform::new(x, rate)?, f0s))
}

/// Paths written by [`make_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFiles {
    pub train: PathBuf,
    pub heldout: PathBuf,
    pub stats: PathBuf,
}

/// Writes WAVs at the top ladder rate, raw log-mel feature files, global
/// feature statistics of the training split, and `train.tsv` / `heldout.tsv`.
pub fn make_synthetic_corpus(out_dir: &Path, spec: &CorpusSpec, ladder: &RateLadder, features: &FeatureConfig) -> Result<CorpusFiles> {
    let f1 = ladder.rates()[0] as f64;
    if spec.f0_range.1 > f1 / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "f0 up to {} Hz exceeds half the lowest rate ({} Hz)",
            spec.f0_range.1,
            f1 / 2.0
        )));
    }
    if spec.utterances == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one training utterance".into()));
    }
    fs::create_dir_all(out_dir.join("wav"))?;
    fs::create_dir_all(out_dir.join("feats"))?;
    let rate = ladder.top();
    let mut train = DatasetManifest::default();
    let mut heldout = DatasetManifest::default();
    let mut train_mels: Vec<MelSpectrogram> = Vec::new();
    for i in 0..spec.utterances + spec.heldout {
        let held = i >= spec.utterances;
        let id = if held { format!("heldout{:03}", i - spec.utterances) } else { format!("utt{i:03}") };
        let (w, _) = harmonic_signal(spec.seconds, rate, spec.f0_range, spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
        let audio = out_dir.join("wav").join(format!("{id}.wav"));
        write_wav(&w, &audio)?;
        let stored = read_wav(&audio)?;
        let mel = extract_logmel(&analysis_audio(&stored, features.analysis_rate)?, features)?;
        let feat = out_dir.join("feats").join(format!("{id}.feat"));
        write_features(&mel, &feat)?;
        let entry = ManifestEntry { audio, native_rate: rate, features: feat };
        if held {
            heldout.entries.push(entry);
        } else {
            train_mels.push(read_features(&entry.features)?);
            train.entries.push(entry);
        }
    }
    let files = CorpusFiles { train: out_dir.join("train.tsv"), heldout: out_dir.join("heldout.tsv"), stats: out_dir.join("stats.json") };
    train.save(&files.train)?;
    heldout.save(&files.heldout)?;
    FeatureStats::fit(&train_mels)?.save(&files.stats)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![ManifestEntry { audio: dir.path().join("a.wav"), native_rate: 2000, features: dir.path().join("a.feat") }],
        };
        let p = dir.path().join("m.tsv");
        m.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a.wav\t2000\ta.feat\n");
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
        assert_eq!(m.usable_stages(&RateLadder::desk()).unwrap(), vec![2]);
        fs::write(&p, "a.wav 2000\n").unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Manifest(_))));
    }

    #[test]
    fn harmonic_signal_stays_below_nyquist_edge() {
        let (w, f0) = harmonic_signal(0.5, 8000, (100.0, 400.0), 3).unwrap();
        assert_eq!(w.len(), 4000);
        assert!(f0.iter().all(|f| (100.0..=400.0).contains(f)));
        let (w2, _) = harmonic_signal(0.5, 8000, (100.0, 400.0), 3).unwrap();
        assert_eq!(w, w2);
        assert!(w.samples.iter().all(|v| v.abs() < 1.0));
    }
}
