//! The multi-rate generator cascade: each stage upsamples the previous
//! waveform and adds a predicted high band.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Eager, Graph, Tensor};
use crate::error::{Error, Result};
use crate::features::{upsample_features, MelSpectrogram};
use crate::nn::{ParamSet, WaveNet, WaveNetConfig};
use crate::resample::{RateLadder, Resampler, ResamplerDesign};
use crate::signal::Waveform;

/// Network dimensions shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDims {
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub aux_channels: usize,
    pub layers: usize,
    pub stacks: usize,
    pub kernel_size: usize,
}

impl StageDims {
    /// Ten layers, one stack, 64 residual and skip channels, 80 mel bands.
    pub fn paper() -> Self {
        Self { residual_channels: 64, gate_channels: 128, skip_channels: 64, aux_channels: 80, layers: 10, stacks: 1, kernel_size: 3 }
    }

    /// Five layers (dilations up to 16), 16 channels.
    pub fn desk() -> Self {
        Self { residual_channels: 16, gate_channels: 32, skip_channels: 16, aux_channels: 80, layers: 5, stacks: 1, kernel_size: 3 }
    }

    /// Same widths, 30 layers in three dilation cycles.
    pub fn baseline(self) -> Self {
        Self { layers: 30, stacks: 3, ..self }
    }

    pub fn wavenet(&self) -> WaveNetConfig {
        WaveNetConfig {
            in_channels: 1,
            residual_channels: self.residual_channels,
            gate_channels: self.gate_channels,
            skip_channels: self.skip_channels,
            aux_channels: self.aux_channels,
            layers: self.layers,
            stacks: self.stacks,
            kernel_size: self.kernel_size,
        }
    }
}

/// One rung of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGenerator {
    /// Zero-based position in the ladder.
    pub index: usize,
    pub in_rate: Option<u32>,
    pub out_rate: u32,
    pub net: WaveNet,
}

impl StageGenerator {
    /// High band `[1, T]` from the stage input `[1, T]` (noise for the first
    /// stage, the upsampled waveform otherwise) and conditioning `[aux, T]`.
    pub fn forward<G: Graph>(&self, g: &mut G, p: &[G::Node], x_low: &G::Node, cond: &G::Node) -> Result<G::Node> {
        let (xt, ct) = (g.value(x_low).cols(), g.value(cond).cols());
        if xt != ct {
            return Err(Error::Shape(format!("stage {}: input has {xt} samples, conditioning {ct}", self.index + 1)));
        }
        self.net.forward(g, p, x_low, Some(cond))
    }
}

/// Samples at `rate` for `seconds`, rounded to nearest.
pub fn stage_len(seconds: f64, rate: u32) -> usize {
    (seconds * rate as f64).round() as usize
}

/// White noise `[1, len]`.
pub fn noise(len: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::row((0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorCascade {
    pub ladder: RateLadder,
    pub dims: StageDims,
    pub stages: Vec<StageGenerator>,
}

/// Per-stage wall time of one synthesis call.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub rate: u32,
    pub conditioning: Duration,
    pub network: Duration,
}

impl GeneratorCascade {
    /// Every stage but the first starts with a zero output projection, so a
    /// fresh cascade is the first stage followed by sinc upsampling. The
    /// first stage cannot start at zero: the magnitude spectrogram has no
    /// gradient at a silent signal.
    pub fn new(ladder: RateLadder, dims: StageDims, seed: u64) -> Result<Self> {
        let rates = ladder.rates().to_vec();
        let stages = rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                Ok(StageGenerator {
                    index: i,
                    in_rate: i.checked_sub(1).map(|j| rates[j]),
                    out_rate: rate,
                    net: WaveNet::with_output_init(dims.wavenet(), seed.wrapping_add(i as u64 * 7919), i > 0)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ladder, dims, stages })
    }

    /// A single stage of 30 layers at `rate`: the conventional vocoder the
    /// cascade reduces to with one rung.
    pub fn baseline(rate: u32, dims: StageDims, seed: u64) -> Result<Self> {
        Self::new(RateLadder::new(vec![rate])?, dims.baseline(), seed)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn param_sets(&self) -> Vec<&ParamSet> {
        self.stages.iter().map(|s| &s.net.params).collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.stages.iter().map(|s| s.net.params.count()).sum()
    }

    /// Closed form: stages times the per-network count.
    pub fn closed_form_parameters(&self) -> usize {
        self.len() * self.dims.wavenet().param_count()
    }

    /// Sum over stages of `rate_kHz * layers`; network work per second of
    /// output is proportional to it.
    pub fn layer_rate_khz(&self) -> f64 {
        self.ladder.rates().iter().map(|&r| r as f64 / 1000.0 * self.dims.layers as f64).sum()
    }

    /// Multiply-accumulates of the networks per second of output audio.
    pub fn macs_per_second(&self) -> f64 {
        let per = self.dims.wavenet().macs_per_sample() as f64;
        self.ladder.rates().iter().map(|&r| r as f64 * per).sum()
    }

    pub fn upsampler(&self, stage: usize) -> Result<Arc<Resampler>> {
        let from = self.stages[stage]
            .in_rate
            .ok_or_else(|| Error::InvalidArgument("first stage has no upsampler".into()))?;
        Resampler::shared(from, self.stages[stage].out_rate, ResamplerDesign::default())
    }

    /// Runs stages `0..upto` on `g`. `params[i]` are the bound parameters of
    /// stage `i`, `conds[i]` its conditioning `[aux, T_i]`, and `z` the
    /// first-stage noise `[1, T_1]`. Returns every stage output.
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        params: &[Vec<G::Node>],
        z: &G::Node,
        conds: &[G::Node],
        upto: usize,
    ) -> Result<Vec<G::Node>> {
        if upto == 0 || upto > self.len() || params.len() < upto || conds.len() < upto {
            return Err(Error::InvalidArgument(format!("cannot run {upto} of {} stages", self.len())));
        }
        let mut outs: Vec<G::Node> = Vec::with_capacity(upto);
        for i in 0..upto {
            let stage = &self.stages[i];
            let x = if i == 0 {
                stage.forward(g, &params[0], z, &conds[0])?
            } else {
                let t = g.value(&conds[i]).cols();
                let up = g.resample(&outs[i - 1], &self.upsampler(i)?);
                let up = g.fit_cols(&up, t);
                let high = stage.forward(g, &params[i], &up, &conds[i])?;
                g.add(&up, &high)?
            };
            outs.push(x);
        }
        Ok(outs)
    }

    /// Eager synthesis from normalized features. Returns one waveform per
    /// ladder rate up to and including `upto` (the top rate by default).
    pub fn synthesize(&self, mel: &MelSpectrogram, seconds: Option<f64>, upto: Option<u32>, seed: u64) -> Result<Vec<Waveform>> {
        self.synthesize_timed(mel, seconds, upto, seed).map(|(w, _)| w)
    }

    pub fn synthesize_timed(
        &self,
        mel: &MelSpectrogram,
        seconds: Option<f64>,
        upto: Option<u32>,
        seed: u64,
    ) -> Result<(Vec<Waveform>, Vec<StageTiming>)> {
        let stages = match upto {
            None => self.len(),
            Some(rate) => {
                self.ladder.index_of(rate).ok_or_else(|| Error::InvalidArgument(format!("{rate} Hz is not in the ladder")))? + 1
            }
        };
        let seconds = seconds.unwrap_or_else(|| mel.duration_seconds());
        let mut g = Eager;
        let mut outs: Vec<Waveform> = Vec::with_capacity(stages);
        let mut timing = Vec::with_capacity(stages);
        let mut prev: Option<<Eager as Graph>::Node> = None;
        for i in 0..stages {
            let stage = &self.stages[i];
            let len = stage_len(seconds, stage.out_rate);
            let t0 = Instant::now();
            let cond = g.constant(upsample_features(mel, stage.out_rate, len)?);
            let t1 = Instant::now();
            let p = stage.net.params.bind(&mut g);
            let x = match prev.take() {
                None => {
                    let z = g.constant(noise(len, seed));
                    stage.forward(&mut g, &p, &z, &cond)?
                }
                Some(low) => {
                    let up = g.resample(&low, &self.upsampler(i)?);
                    let up = g.fit_cols(&up, len);
                    let high = stage.forward(&mut g, &p, &up, &cond)?;
                    g.add(&up, &high)?
                }
            };
            timing.push(StageTiming { rate: stage.out_rate, conditioning: t1 - t0, network: t1.elapsed() });
            outs.push(Waveform::new(x.data().to_vec(), stage.out_rate)?);
            prev = Some(x);
        }
        Ok((outs, timing))
    }
}
