//! Multi-resolution STFT loss, least-squares adversarial objectives and
//! per-rate target construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::nn::Discriminator;
use crate::resample::{downsample_antialias, RateLadder};
use crate::signal::Waveform;
use crate::spectral::{StftPlan, LOSS_POWER_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftResolution {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
}

/// Reference resolutions and the rate at which they apply unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub base: Vec<StftResolution>,
    pub base_rate: u32,
    pub min_size: usize,
}

impl Default for ResolutionConfig {
    /// FFT sizes 2048, 4096, 1024 with windows 1200, 2400, 480 and hops
    /// 240, 480, 100 at 48 kHz.
    fn default() -> Self {
        let r = |fft_size, win_length, hop| StftResolution { fft_size, win_length, hop };
        Self { base: vec![r(2048, 1200, 240), r(4096, 2400, 480), r(1024, 480, 100)], base_rate: 48000, min_size: 8 }
    }
}

fn scale_even(v: usize, factor: f64, min: usize) -> usize {
    ((2.0 * (v as f64 * factor / 2.0).round()) as usize).max(min)
}

impl ResolutionConfig {
    /// Resolutions for a stage at `rate`: every length scaled by
    /// `rate / base_rate`, rounded to the nearest even integer, floored.
    pub fn for_rate(&self, rate: u32) -> Vec<StftResolution> {
        let f = rate as f64 / self.base_rate as f64;
        self.base
            .iter()
            .map(|r| {
                let fft_size = scale_even(r.fft_size, f, self.min_size);
                StftResolution {
                    fft_size,
                    win_length: scale_even(r.win_length, f, self.min_size).min(fft_size),
                    hop: scale_even(r.hop, f, self.min_size),
                }
            })
            .collect()
    }

    pub fn plans_for_rate(&self, rate: u32) -> Result<Vec<Arc<StftPlan>>> {
        self.for_rate(rate).iter().map(|r| StftPlan::shared(r.fft_size, r.win_length, r.hop, LOSS_POWER_FLOOR)).collect()
    }
}

/// Anti-aliased copy of `x` at every ladder rate; the top rate is `x`.
pub fn make_targets(x: &Waveform, ladder: &RateLadder) -> Result<Vec<Waveform>> {
    if x.rate != ladder.top() {
        return Err(Error::InvalidArgument(format!("targets need {} Hz audio, got {}", ladder.top(), x.rate)));
    }
    ladder.rates().iter().map(|&r| downsample_antialias(x, r)).collect()
}

/// Values of the two loss terms at one resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftTerms {
    pub spectral_convergence: f64,
    pub log_magnitude: f64,
}

/// Mean over resolutions of spectral convergence plus log-magnitude L1.
/// `reference` is treated as a constant.
pub fn mr_stft_loss<G: Graph>(
    g: &mut G,
    generated: &G::Node,
    reference: &[f64],
    plans: &[Arc<StftPlan>],
) -> Result<(G::Node, Vec<StftTerms>)> {
    let n = g.value(generated).cols();
    if n != reference.len() {
        return Err(Error::Shape(format!("generated {n} samples, reference {}", reference.len())));
    }
    if plans.is_empty() {
        return Err(Error::InvalidArgument("no STFT resolutions".into()));
    }
    let mut total: Option<G::Node> = None;
    let mut terms = Vec::with_capacity(plans.len());
    for plan in plans {
        let ref_mag = plan.magnitude_only(reference);
        let ref_norm = ref_mag.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let ref_log = ref_mag.map(f64::ln);
        let mag = g.stft_mag(generated, plan)?;
        let y = g.constant(ref_mag);
        let diff = g.sub(&y, &mag)?;
        let sq = g.square(&diff);
        let ss = g.sum(&sq);
        let norm = g.sqrt(&ss);
        let sc = g.scale(&norm, 1.0 / ref_norm);
        let lx = g.ln(&mag);
        let ly = g.constant(ref_log);
        let ld = g.sub(&ly, &lx)?;
        let la = g.abs(&ld);
        let lm = g.mean(&la);
        terms.push(StftTerms { spectral_convergence: g.value(&sc).item(), log_magnitude: g.value(&lm).item() });
        let both = g.add(&sc, &lm)?;
        total = Some(match total {
            Some(t) => g.add(&t, &both)?,
            None => both,
        });
    }
    let total = g.scale(&total.unwrap(), 1.0 / plans.len() as f64);
    Ok((total, terms))
}

/// `mean((D(x) - 1)^2)`: the generator's least-squares adversarial term.
pub fn adversarial_loss<G: Graph>(g: &mut G, d: &Discriminator, dp: &[G::Node], generated: &G::Node) -> Result<G::Node> {
    let s = d.forward(g, dp, generated)?;
    let e = g.add_scalar(&s, -1.0);
    let sq = g.square(&e);
    Ok(g.mean(&sq))
}

/// `mean((D(real) - 1)^2) + mean(D(fake)^2)`; `fake` should be a constant.
pub fn discriminator_term<G: Graph>(
    g: &mut G,
    d: &Discriminator,
    dp: &[G::Node],
    real: &G::Node,
    fake: &G::Node,
) -> Result<G::Node> {
    let sr = d.forward(g, dp, real)?;
    let er = g.add_scalar(&sr, -1.0);
    let qr = g.square(&er);
    let lr = g.mean(&qr);
    let sf = d.forward(g, dp, fake)?;
    let qf = g.square(&sf);
    let lf = g.mean(&qf);
    g.add(&lr, &lf)
}

/// Per-stage values of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageLosses {
    pub aux: f64,
    pub adv: f64,
}

/// Discriminators of stages `0..J` with their bound parameters.
pub struct Critics<'a, N> {
    pub nets: &'a [Discriminator],
    pub params: &'a [Vec<N>],
}

/// `sum_{i < J} [aux_i + lambda_adv * adv_i]`. The adversarial branch is
/// skipped entirely when `critics` is `None` or `lambda_adv == 0`.
pub fn generator_loss<G: Graph>(
    g: &mut G,
    outputs: &[G::Node],
    targets: &[&[f64]],
    plans: &[Vec<Arc<StftPlan>>],
    critics: Option<Critics<'_, G::Node>>,
    lambda_adv: f64,
    stages: usize,
) -> Result<(G::Node, Vec<StageLosses>)> {
    if stages == 0 || stages > outputs.len() || stages > targets.len() || stages > plans.len() {
        return Err(Error::InvalidArgument(format!("cannot sum {stages} stages")));
    }
    let mut total: Option<G::Node> = None;
    let mut parts = Vec::with_capacity(stages);
    for i in 0..stages {
        let (aux, _) = mr_stft_loss(g, &outputs[i], targets[i], &plans[i])?;
        let mut stage_total = aux.clone();
        let mut adv_value = 0.0;
        if let Some(c) = critics.as_ref().filter(|_| lambda_adv != 0.0) {
            let adv = adversarial_loss(g, &c.nets[i], &c.params[i], &outputs[i])?;
            adv_value = g.value(&adv).item();
            let weighted = g.scale(&adv, lambda_adv);
            stage_total = g.add(&stage_total, &weighted)?;
        }
        let aux_value = g.value(&aux).item();
        if !aux_value.is_finite() || !adv_value.is_finite() {
            return Err(Error::NonFinite(format!("stage {} generator loss (aux {aux_value}, adv {adv_value})", i + 1)));
        }
        parts.push(StageLosses { aux: aux_value, adv: adv_value });
        total = Some(match total {
            Some(t) => g.add(&t, &stage_total)?,
            None => stage_total,
        });
    }
    Ok((total.unwrap(), parts))
}

/// `sum_{i < J}` of the discriminator terms. Generated waveforms are cut
/// from the graph first so no gradient reaches the generator.
pub fn discriminator_loss<G: Graph>(
    g: &mut G,
    targets: &[&[f64]],
    outputs: &[G::Node],
    critics: Critics<'_, G::Node>,
    stages: usize,
) -> Result<(G::Node, Vec<f64>)> {
    if stages == 0 || stages > outputs.len() || stages > targets.len() || stages > critics.nets.len() {
        return Err(Error::InvalidArgument(format!("cannot sum {stages} stages")));
    }
    let mut total: Option<G::Node> = None;
    let mut parts = Vec::with_capacity(stages);
    for i in 0..stages {
        let real = g.constant(Tensor::row(targets[i].to_vec()));
        let fake = g.detach(&outputs[i]);
        let term = discriminator_term(g, &critics.nets[i], &critics.params[i], &real, &fake)?;
        let v = g.value(&term).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("stage {} discriminator loss {v}", i + 1)));
        }
        parts.push(v);
        total = Some(match total {
            Some(t) => g.add(&t, &term)?,
            None => term,
        });
    }
    Ok((total.unwrap(), parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Eager;

    #[test]
    fn resolution_scaling() {
        let c = ResolutionConfig::default();
        assert_eq!(c.for_rate(48000), c.base);
        let one = c.for_rate(1000);
        assert_eq!(one[0], StftResolution { fft_size: 42, win_length: 26, hop: 8 });
        assert_eq!(one[2].hop, 8);
        let eight = c.for_rate(8000);
        assert_eq!(eight[0], StftResolution { fft_size: 342, win_length: 200, hop: 40 });
    }

    #[test]
    fn identical_signals_have_zero_loss() {
        let x: Vec<f64> = (0..800).map(|i| ((i * 31 % 17) as f64 / 8.0 - 1.0) * 0.3).collect();
        let plans = ResolutionConfig::default().plans_for_rate(4000).unwrap();
        let mut g = Eager;
        let xv = g.constant(Tensor::row(x.clone()));
        let (l, _) = mr_stft_loss(&mut g, &xv, &x, &plans).unwrap();
        assert_eq!(l.item(), 0.0);
    }
}
