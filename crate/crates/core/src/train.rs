//! Two-phase adversarial training with partial-rate supervision.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Eager, Graph, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{id_hash, load_targets, DatasetManifest};
use crate::error::{Error, Result};
use crate::features::{read_features, upsample_features, upsample_features_range, FeatureConfig, FeatureStats, MelSpectrogram};
use crate::generator::{noise, GeneratorCascade, StageDims};
use crate::loss::{discriminator_loss, generator_loss, mr_stft_loss, Critics, ResolutionConfig};
use crate::nn::{Discriminator, DiscriminatorConfig};
use crate::optim::{Radam, RadamConfig};
use crate::resample::RateLadder;
use crate::signal::Waveform;

pub const TELEMETRY_HEADER: &str = "step,lr,stage,loss_aux,loss_adv,loss_dis";
pub const EVAL_HEADER: &str = "step,stage,loss_aux";

/// How items recorded at different rates share a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixedRate {
    /// Each item sums its own stages `1..=J`.
    PerItem,
    /// The whole batch uses the smallest `J` among its items.
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ladder: RateLadder,
    pub generator: StageDims,
    pub discriminator: DiscriminatorConfig,
    pub features: FeatureConfig,
    pub resolutions: ResolutionConfig,
    pub lambda_adv: f64,
    pub batch_size: usize,
    pub clip_seconds: f64,
    pub total_steps: u64,
    /// Steps before the discriminators join.
    pub generator_only_steps: u64,
    pub learning_rate: f64,
    pub decay_step: u64,
    pub decay_factor: f64,
    pub optimizer: RadamConfig,
    pub seed: u64,
    pub mixed_rate: MixedRate,
    pub manifest: Option<PathBuf>,
    pub heldout_manifest: Option<PathBuf>,
    /// Directory for `<id>.<rate>.wav` targets; none keeps them in memory.
    pub target_cache: Option<PathBuf>,
    pub telemetry_interval: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            ladder: RateLadder::paper(),
            generator: StageDims::paper(),
            discriminator: DiscriminatorConfig { layers: 10, channels: 64, kernel_size: 3 },
            features: FeatureConfig::paper(),
            resolutions: ResolutionConfig::default(),
            lambda_adv: 1.0,
            batch_size: 8,
            clip_seconds: 0.5,
            total_steps: 400_000,
            generator_only_steps: 200_000,
            learning_rate: 1e-3,
            decay_step: 300_000,
            decay_factor: 0.5,
            optimizer: RadamConfig::default(),
            seed: 0,
            mixed_rate: MixedRate::PerItem,
            manifest: None,
            heldout_manifest: None,
            target_cache: None,
            telemetry_interval: 100,
            eval_interval: 10_000,
            checkpoint_interval: 10_000,
        }
    }

    pub fn desk() -> Self {
        Self {
            ladder: RateLadder::desk(),
            generator: StageDims::desk(),
            discriminator: DiscriminatorConfig { layers: 10, channels: 16, kernel_size: 3 },
            features: FeatureConfig::desk(),
            batch_size: 4,
            clip_seconds: 0.25,
            total_steps: 3000,
            generator_only_steps: 1500,
            decay_step: 2250,
            telemetry_interval: 10,
            eval_interval: 100,
            checkpoint_interval: 0,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?} (paper, desk)"))),
        }
    }

    /// Overlays the fields present in a JSON object onto `self`. A new
    /// `total_steps` pulls in phase boundaries the object leaves unset, as
    /// [`Self::with_total_steps`] does.
    pub fn merge_json(&self, overrides: &serde_json::Value) -> Result<Self> {
        fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
            match (base, over) {
                (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
                    for (k, v) in o {
                        match b.get_mut(k) {
                            Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                            _ => {
                                b.insert(k.clone(), v.clone());
                            }
                        }
                    }
                }
                (b, o) => *b = o.clone(),
            }
        }
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        let mut cfg: Self = serde_json::from_value(base)?;
        if overrides.get("total_steps").is_some() {
            if overrides.get("generator_only_steps").is_none() {
                cfg.generator_only_steps = cfg.generator_only_steps.min(cfg.total_steps);
            }
            if overrides.get("decay_step").is_none() {
                cfg.decay_step = cfg.decay_step.min(cfg.total_steps);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the run length, pulling the phase boundaries in if they now lie
    /// beyond it.
    pub fn with_total_steps(mut self, steps: u64) -> Self {
        self.total_steps = steps;
        self.generator_only_steps = self.generator_only_steps.min(steps);
        self.decay_step = self.decay_step.min(steps);
        self
    }

    /// Samples per second of the clip-offset grid.
    pub fn clip_grid(&self) -> u32 {
        self.ladder.common_divisor()
    }

    /// Clip length in grid units.
    pub fn clip_units(&self) -> Result<u64> {
        let units = self.clip_seconds * self.clip_grid() as f64;
        if units < 1.0 || (units - units.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "clip of {} s is not a whole number of 1/{} s steps",
                self.clip_seconds,
                self.clip_grid()
            )));
        }
        Ok(units.round() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.generator_only_steps > self.total_steps {
            return bad(format!("generator_only_steps {} > total_steps {}", self.generator_only_steps, self.total_steps));
        }
        if self.decay_step > self.total_steps {
            return bad(format!("decay_step {} > total_steps {}", self.decay_step, self.total_steps));
        }
        if !(self.lambda_adv >= 0.0) || !(self.learning_rate > 0.0) || !(self.decay_factor > 0.0) {
            return bad("lambda_adv must be >= 0, learning_rate and decay_factor > 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.generator.aux_channels != self.features.bands {
            return bad(format!("{} conditioning channels for {} mel bands", self.generator.aux_channels, self.features.bands));
        }
        self.clip_units()?;
        self.generator.wavenet().validate()?;
        self.discriminator.validate()?;
        self.features.validate()
    }

    /// Learning rate in effect for the update made at `step` (zero-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.decay_step {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }

    pub fn stage_plans(&self) -> Result<Vec<Vec<std::sync::Arc<crate::spectral::StftPlan>>>> {
        self.ladder.rates().iter().map(|&r| self.resolutions.plans_for_rate(r)).collect()
    }
}

fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// One utterance held in memory for training or evaluation.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub stages: usize,
    /// Anti-aliased targets for stages `0..stages`.
    pub targets: Vec<Waveform>,
    /// Normalized features.
    pub mel: MelSpectrogram,
}

/// Network inputs and references for one clip.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub id: String,
    pub stages: usize,
    pub targets: Vec<Vec<f64>>,
    pub conds: Vec<Tensor>,
    pub noise: Tensor,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn load(manifest: &DatasetManifest, cfg: &TrainConfig, stats: &FeatureStats) -> Result<Self> {
        let stages = manifest.usable_stages(&cfg.ladder)?;
        let utterances = manifest
            .entries
            .iter()
            .zip(stages)
            .map(|(e, j)| {
                let mel = stats.apply(&read_features(&e.features)?)?;
                let targets = load_targets(e, &cfg.ladder, j, cfg.target_cache.as_deref())?;
                Ok(Utterance { id: e.id(), stages: j, targets, mel })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { utterances })
    }

    /// The deterministic batch for `step`.
    pub fn batch(&self, cfg: &TrainConfig, step: u64) -> Result<Vec<BatchItem>> {
        let n = self.utterances.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, step, 1]));
        let picks: Vec<usize> = if n >= cfg.batch_size {
            sample(&mut rng, n, cfg.batch_size).into_vec()
        } else {
            (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect()
        };
        let mut items = picks.iter().map(|&u| self.clip(cfg, u, step)).collect::<Result<Vec<_>>>()?;
        if cfg.mixed_rate == MixedRate::PerBatch {
            let j = items.iter().map(|b| b.stages).min().unwrap();
            for b in &mut items {
                b.stages = j;
                b.targets.truncate(j);
                b.conds.truncate(j);
            }
        }
        Ok(items)
    }

    fn clip(&self, cfg: &TrainConfig, index: usize, step: u64) -> Result<BatchItem> {
        let u = &self.utterances[index];
        let grid = cfg.clip_grid() as u64;
        let clip_units = cfg.clip_units()?;
        let top = &u.targets[u.stages - 1];
        let avail_units = (top.len() as u64 * grid) / top.rate as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, id_hash(&u.id), step, 2]));
        let offset_units = if avail_units > clip_units { rng.random_range(0..=avail_units - clip_units) } else { 0 };
        let rates = &cfg.ladder.rates()[..u.stages];
        let mut targets = Vec::with_capacity(u.stages);
        let mut conds = Vec::with_capacity(u.stages);
        for (i, &rate) in rates.iter().enumerate() {
            let per_unit = rate as u64 / grid;
            let (start, len) = ((offset_units * per_unit) as usize, (clip_units * per_unit) as usize);
            let src = &u.targets[i].samples;
            let mut t = vec![0.0; len];
            if start < src.len() {
                let end = (start + len).min(src.len());
                t[..end - start].copy_from_slice(&src[start..end]);
            }
            targets.push(t);
            conds.push(upsample_features_range(&u.mel, rate, start, len)?);
        }
        let noise = noise(targets[0].len(), rng.random());
        Ok(BatchItem { id: u.id.clone(), stages: u.stages, targets, conds, noise })
    }
}

/// Losses of one stage averaged over the batch items that reach it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageReport {
    pub aux: f64,
    pub adv: f64,
    pub dis: f64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub stages: Vec<StageReport>,
    /// True when any optimizer skipped a non-finite gradient.
    pub skipped: bool,
}

/// Gradients of stages `0..stages` for one item.
type StageGrads = Vec<Vec<Tensor>>;

fn add_grads(acc: &mut [Option<Vec<Tensor>>], item: StageGrads) {
    for (slot, grads) in acc.iter_mut().zip(item) {
        match slot {
            Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            None => *slot = Some(grads),
        }
    }
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub stats: FeatureStats,
    pub generator: GeneratorCascade,
    pub discriminators: Vec<Discriminator>,
    pub g_opt: Vec<Radam>,
    pub d_opt: Vec<Radam>,
    /// Completed updates.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, stats: FeatureStats) -> Result<Self> {
        config.validate()?;
        let generator = GeneratorCascade::new(config.ladder.clone(), config.generator, mix(&[config.seed, 10]))?;
        let discriminators = (0..config.ladder.len())
            .map(|i| Discriminator::new(config.discriminator, mix(&[config.seed, 20, i as u64])))
            .collect::<Result<Vec<_>>>()?;
        let g_opt = generator.stages.iter().map(|s| Radam::new(config.optimizer, &s.net.params)).collect();
        let d_opt = discriminators.iter().map(|d| Radam::new(config.optimizer, &d.params)).collect();
        Ok(Self { config, stats, generator, discriminators, g_opt, d_opt, step: 0 })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut t = Self::new(ck.config, ck.stats)?;
        if ck.generators.len() != t.generator.len() || ck.discriminators.len() != t.discriminators.len() {
            return Err(Error::Checkpoint("network count does not match the ladder".into()));
        }
        for (stage, p) in t.generator.stages.iter_mut().zip(ck.generators) {
            stage.net.params.assign(p.tensors().to_vec())?;
        }
        for (d, p) in t.discriminators.iter_mut().zip(ck.discriminators) {
            d.params.assign(p.tensors().to_vec())?;
        }
        t.g_opt = ck.g_opt;
        t.d_opt = ck.d_opt;
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            stats: self.stats.clone(),
            step: self.step,
            seed: self.config.seed,
            generators: self.generator.stages.iter().map(|s| s.net.params.clone()).collect(),
            discriminators: self.discriminators.iter().map(|d| d.params.clone()).collect(),
            g_opt: self.g_opt.clone(),
            d_opt: self.d_opt.clone(),
        }
    }

    pub fn joint_phase(&self) -> bool {
        self.step >= self.config.generator_only_steps
    }

    /// Per-item generator gradients without touching any parameter.
    pub fn generator_gradients(&self, item: &BatchItem, weight: f64, adversarial: bool) -> Result<(StageGrads, Vec<f64>, Vec<f64>, Vec<Tensor>)> {
        if item.stages == 0 {
            return Err(Error::InvalidArgument(format!("item {} supervises no stage", item.id)));
        }
        let j = item.stages;
        let plans = self.config.stage_plans()?;
        let mut tape = Tape::new();
        let params: Vec<Vec<Var>> = self.generator.stages[..j].iter().map(|s| s.net.params.bind(&mut tape)).collect();
        let conds: Vec<Var> = item.conds.iter().map(|c| tape.constant(c.clone())).collect();
        let z = tape.constant(item.noise.clone());
        let outs = self.generator.forward(&mut tape, &params, &z, &conds, j)?;
        let targets: Vec<&[f64]> = item.targets.iter().map(Vec::as_slice).collect();
        let frozen: Vec<Vec<Var>> = if adversarial {
            self.discriminators[..j].iter().map(|d| d.params.bind_frozen(&mut tape)).collect()
        } else {
            Vec::new()
        };
        let critics = adversarial.then(|| Critics { nets: &self.discriminators[..j], params: &frozen });
        let (loss, parts) = generator_loss(&mut tape, &outs, &targets, &plans, critics, self.config.lambda_adv, j)?;
        let scaled = tape.scale(&loss, weight);
        tape.backward(scaled)?;
        let grads = params.iter().map(|ps| ps.iter().map(|v| tape.grad(*v)).collect()).collect();
        let fakes = outs.iter().map(|o| tape.value(o).clone()).collect();
        Ok((grads, parts.iter().map(|p| p.aux).collect(), parts.iter().map(|p| p.adv).collect(), fakes))
    }

    /// Per-item discriminator gradients for fixed generated waveforms.
    pub fn discriminator_gradients(&self, item: &BatchItem, fakes: &[Tensor], weight: f64) -> Result<(StageGrads, Vec<f64>)> {
        let j = item.stages;
        let mut tape = Tape::new();
        let params: Vec<Vec<Var>> = self.discriminators[..j].iter().map(|d| d.params.bind(&mut tape)).collect();
        let fake_nodes: Vec<Var> = fakes[..j].iter().map(|f| tape.constant(f.clone())).collect();
        let targets: Vec<&[f64]> = item.targets.iter().map(Vec::as_slice).collect();
        let critics = Critics { nets: &self.discriminators[..j], params: &params };
        let (loss, parts) = discriminator_loss(&mut tape, &targets, &fake_nodes, critics, j)?;
        let scaled = tape.scale(&loss, weight);
        tape.backward(scaled)?;
        let grads = params.iter().map(|ps| ps.iter().map(|v| tape.grad(*v)).collect()).collect();
        Ok((grads, parts))
    }

    /// One generator update and, in the joint phase, one discriminator
    /// update. Only networks of stages reached by some item are stepped.
    pub fn train_step(&mut self, batch: &[BatchItem]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n_stages = self.generator.len();
        if let Some(b) = batch.iter().find(|b| b.stages == 0 || b.stages > n_stages) {
            return Err(Error::InvalidArgument(format!("item {} has J = {} for a {n_stages}-stage ladder", b.id, b.stages)));
        }
        let joint = self.joint_phase();
        let adversarial = joint && self.config.lambda_adv != 0.0;
        let weight = 1.0 / batch.len() as f64;
        let lr = self.config.lr_at(self.step);
        let max_j = batch.iter().map(|b| b.stages).max().unwrap();
        let mut report = vec![StageReport::default(); max_j];

        let g_results: Vec<_> = batch
            .par_iter()
            .map(|item| self.generator_gradients(item, weight, adversarial))
            .collect::<Result<Vec<_>>>()?;
        let mut g_acc: Vec<Option<Vec<Tensor>>> = vec![None; max_j];
        let mut fakes = Vec::with_capacity(batch.len());
        for (grads, aux, adv, outs) in g_results {
            for (i, (a, d)) in aux.iter().zip(&adv).enumerate() {
                report[i].aux += a;
                report[i].adv += d;
                report[i].items += 1;
            }
            add_grads(&mut g_acc, grads);
            fakes.push(outs);
        }
        let mut skipped = false;
        for (i, grads) in g_acc.into_iter().enumerate() {
            let grads = grads.expect("every stage below max J has an item");
            skipped |= !self.g_opt[i].step(&mut self.generator.stages[i].net.params, &grads, lr)?;
        }

        if joint {
            let d_results: Vec<_> = batch
                .par_iter()
                .zip(&fakes)
                .map(|(item, f)| self.discriminator_gradients(item, f, weight))
                .collect::<Result<Vec<_>>>()?;
            let mut d_acc: Vec<Option<Vec<Tensor>>> = vec![None; max_j];
            for (grads, dis) in d_results {
                for (i, d) in dis.iter().enumerate() {
                    report[i].dis += d;
                }
                add_grads(&mut d_acc, grads);
            }
            for (i, grads) in d_acc.into_iter().enumerate() {
                let grads = grads.expect("every stage below max J has an item");
                skipped |= !self.d_opt[i].step(&mut self.discriminators[i].params, &grads, lr)?;
            }
        }

        for r in &mut report {
            let n = r.items.max(1) as f64;
            r.aux /= n;
            r.adv /= n;
            r.dis /= n;
        }
        let step = self.step;
        self.step += 1;
        Ok(StepReport { step, lr, stages: report, skipped })
    }

    /// Mean MR-STFT loss per stage over whole utterances, with noise fixed
    /// per utterance so successive evaluations are comparable.
    pub fn evaluate_aux(&self, corpus: &Corpus) -> Result<Vec<f64>> {
        let plans = self.config.stage_plans()?;
        let n = self.generator.len();
        let per_utt: Vec<Vec<Option<f64>>> = corpus
            .utterances
            .par_iter()
            .map(|u| {
                let mut g = Eager;
                let conds = u
                    .targets
                    .iter()
                    .map(|t| upsample_features(&u.mel, t.rate, t.len()).map(|c| g.constant(c)))
                    .collect::<Result<Vec<_>>>()?;
                let params: Vec<_> = self.generator.stages[..u.stages].iter().map(|s| s.net.params.bind(&mut g)).collect();
                let z = g.constant(noise(u.targets[0].len(), mix(&[self.config.seed, id_hash(&u.id), 3])));
                let outs = self.generator.forward(&mut g, &params, &z, &conds, u.stages)?;
                let mut row = vec![None; n];
                for (i, o) in outs.iter().enumerate() {
                    let (l, _) = mr_stft_loss(&mut g, o, &u.targets[i].samples, &plans[i])?;
                    row[i] = Some(l.item());
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..n)
            .map(|i| {
                let vals: Vec<f64> = per_utt.iter().filter_map(|r| r[i]).collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect())
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub telemetry: PathBuf,
    pub eval: Option<PathBuf>,
}

fn open_csv(path: &Path, header: &str, append: bool) -> Result<File> {
    if append && path.exists() {
        return Ok(OpenOptions::new().append(true).open(path)?);
    }
    let mut f = File::create(path)?;
    writeln!(f, "{header}")?;
    Ok(f)
}

/// Runs training from scratch or from `resume` up to `config.total_steps`,
/// writing `telemetry.csv`, `eval.csv` and `checkpoint.ckpt` to `out_dir`.
/// On a non-finite loss the current state is saved to `aborted.ckpt`.
pub fn train(config: &TrainConfig, out_dir: &Path, resume: Option<&Path>, mut log: impl FnMut(&str)) -> Result<TrainOutputs> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let manifest_path = config.manifest.as_ref().ok_or_else(|| Error::InvalidArgument("no training manifest given".into()))?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            ck.config = ck.config.with_total_steps(config.total_steps);
            ck.config.validate()?;
            Trainer::from_checkpoint(ck)?
        }
        None => {
            let mels = manifest.entries.iter().map(|e| read_features(&e.features)).collect::<Result<Vec<_>>>()?;
            Trainer::new(config.clone(), FeatureStats::fit(&mels)?)?
        }
    };
    let cfg = trainer.config.clone();
    let corpus = Corpus::load(&manifest, &cfg, &trainer.stats)?;
    let heldout = match &cfg.heldout_manifest {
        Some(p) => Some(Corpus::load(&DatasetManifest::load(p)?, &cfg, &trainer.stats)?),
        None => None,
    };
    log(&format!(
        "{} training utterances, {} held out, {} generator parameters, steps {}..{}",
        corpus.utterances.len(),
        heldout.as_ref().map_or(0, |h| h.utterances.len()),
        trainer.generator.count_parameters(),
        trainer.step,
        cfg.total_steps
    ));

    let outputs = TrainOutputs {
        checkpoint: out_dir.join("checkpoint.ckpt"),
        telemetry: out_dir.join("telemetry.csv"),
        eval: heldout.as_ref().map(|_| out_dir.join("eval.csv")),
    };
    let resumed = resume.is_some();
    let mut telemetry = open_csv(&outputs.telemetry, TELEMETRY_HEADER, resumed)?;
    let mut eval_csv = match &outputs.eval {
        Some(p) => Some(open_csv(p, EVAL_HEADER, resumed)?),
        None => None,
    };

    while trainer.step < cfg.total_steps {
        let batch = corpus.batch(&cfg, trainer.step)?;
        let report = match trainer.train_step(&batch) {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                trainer.checkpoint().save(out_dir.join("aborted.ckpt"))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let done = trainer.step;
        if cfg.telemetry_interval > 0 && (report.step % cfg.telemetry_interval == 0 || done == cfg.total_steps) {
            for (i, s) in report.stages.iter().enumerate() {
                writeln!(telemetry, "{},{},{},{},{},{}", report.step, report.lr, i + 1, s.aux, s.adv, s.dis)?;
            }
        }
        if let (Some(h), Some(f)) = (&heldout, eval_csv.as_mut()) {
            if cfg.eval_interval > 0 && (done % cfg.eval_interval == 0 || done == cfg.total_steps) {
                let losses = trainer.evaluate_aux(h)?;
                for (i, l) in losses.iter().enumerate() {
                    writeln!(f, "{done},{},{l}", i + 1)?;
                }
                log(&format!("step {done}: held-out aux {:.4}", losses.iter().filter(|v| v.is_finite()).sum::<f64>()));
            }
        }
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.total_steps {
            trainer.checkpoint().save(&outputs.checkpoint)?;
        }
    }
    telemetry.flush()?;
    trainer.checkpoint().save(&outputs.checkpoint)?;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::paper().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let p = TrainConfig::paper();
        assert_eq!((p.total_steps, p.decay_step, p.generator_only_steps), (400_000, 300_000, 200_000));
    }

    #[test]
    fn lr_halves_once() {
        let c = TrainConfig::desk();
        assert_eq!(c.lr_at(2249), 1e-3);
        assert_eq!(c.lr_at(2250), 5e-4);
        assert_eq!(c.lr_at(2999), 5e-4);
    }

    #[test]
    fn json_overlay() {
        let c = TrainConfig::desk().merge_json(&serde_json::json!({"total_steps": 2500, "generator": {"layers": 3}})).unwrap();
        assert_eq!(c.total_steps, 2500);
        assert_eq!(c.generator.layers, 3);
        assert_eq!(c.generator.residual_channels, 16);
        let short = TrainConfig::desk().merge_json(&serde_json::json!({"total_steps": 10})).unwrap();
        assert_eq!((short.generator_only_steps, short.decay_step), (10, 10));
        assert!(TrainConfig::desk().merge_json(&serde_json::json!({"total_steps": 10, "decay_step": 20})).is_err());
        assert!(TrainConfig::desk().merge_json(&serde_json::json!({"bogus": 1})).is_err());
        assert!(TrainConfig::desk().merge_json(&serde_json::json!({"decay_step": 99999})).is_err());
        let short = TrainConfig::desk().with_total_steps(10);
        assert_eq!((short.generator_only_steps, short.decay_step), (10, 10));
        short.validate().unwrap();
    }
}
