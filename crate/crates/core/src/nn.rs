//! Parameter storage and the two network families: the gated non-causal
//! WaveNet used by every generator stage and the dilated-convolution
//! discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};

/// Negative slope of the discriminator activations.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Index of a tensor inside a [`ParamSet`].
pub type ParamId = usize;

/// Ordered, named trainable tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Places every tensor on `g` as a trainable node.
    pub fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Node> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Places every tensor on `g` as a constant.
    pub fn bind_frozen<G: Graph>(&self, g: &mut G) -> Vec<G::Node> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Replaces all values, keeping names; shapes must agree.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Shape(format!("{} tensors for {} parameters", values.len(), self.tensors.len())));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(Error::Shape(format!("{}: {:?} vs {:?}", self.names[i], old.shape(), new.shape())));
            }
        }
        self.tensors = values;
        Ok(())
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }
}

/// Kaiming-style uniform init: weights and biases in `±1/sqrt(fan_in)`.
struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn conv(&mut self, set: &mut ParamSet, name: &str, out: usize, inp: usize, k: usize, bias: bool) -> ConvIds {
        let w = set.push(format!("{name}.weight"), self.uniform(&[out, inp, k], inp * k));
        let b = bias.then(|| set.push(format!("{name}.bias"), self.uniform(&[out], inp * k)));
        ConvIds { w, b }
    }
}

/// Parameter ids of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvIds {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl ConvIds {
    fn apply<G: Graph>(&self, g: &mut G, p: &[G::Node], x: &G::Node, dilation: usize) -> Result<G::Node> {
        g.conv1d(x, &p[self.w], self.b.map(|b| &p[b]), dilation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveNetConfig {
    pub in_channels: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    /// Conditioning channels; 0 for none.
    pub aux_channels: usize,
    pub layers: usize,
    /// Dilations cycle `1, 2, 4, ..` every `layers / stacks` layers.
    pub stacks: usize,
    pub kernel_size: usize,
}

impl WaveNetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.residual_channels > 0
            && self.skip_channels > 0
            && self.gate_channels >= 2
            && self.gate_channels % 2 == 0
            && self.layers > 0
            && self.stacks > 0
            && self.layers % self.stacks == 0
            && self.kernel_size % 2 == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid wavenet config {self:?}")))
        }
    }

    pub fn layers_per_stack(&self) -> usize {
        self.layers / self.stacks
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % self.layers_per_stack())
    }

    /// Samples seen by one output sample.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.layers).map(|l| (self.kernel_size - 1) * self.dilation(l)).sum::<usize>()
    }

    /// Trainable scalars in one residual layer.
    pub fn layer_params(&self) -> usize {
        let (r, g, s, a, k) =
            (self.residual_channels, self.gate_channels, self.skip_channels, self.aux_channels, self.kernel_size);
        let half = g / 2;
        (r * g * k + g) + a * g + (half * s + s) + (half * r + r)
    }

    /// Closed-form trainable scalar count of the whole network.
    pub fn param_count(&self) -> usize {
        let (r, s) = (self.residual_channels, self.skip_channels);
        let input = self.in_channels * r + r;
        let head = (s * s + s) + (s + 1);
        input + self.layers * self.layer_params() + head
    }

    /// Multiply-accumulates per output sample.
    pub fn macs_per_sample(&self) -> usize {
        let (r, s) = (self.residual_channels, self.skip_channels);
        self.in_channels * r + self.layers * (self.layer_params() - self.layer_bias_count()) + s * s + s
    }

    fn layer_bias_count(&self) -> usize {
        self.gate_channels + self.skip_channels + self.residual_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIds {
    pub dilated: ConvIds,
    pub aux: Option<ConvIds>,
    pub skip: ConvIds,
    pub out: ConvIds,
}

/// Gated residual layer: dilated conv plus conditioning projection, split
/// into tanh and sigmoid halves, then 1x1 projections to the skip path and
/// back onto the residual path.
pub fn gated_block<G: Graph>(
    g: &mut G,
    p: &[G::Node],
    ids: &LayerIds,
    x: &G::Node,
    cond: Option<&G::Node>,
    dilation: usize,
) -> Result<(G::Node, G::Node)> {
    let mut h = ids.dilated.apply(g, p, x, dilation)?;
    if let (Some(aux), Some(c)) = (&ids.aux, cond) {
        if g.value(c).cols() != g.value(x).cols() {
            return Err(Error::Shape(format!(
                "conditioning has {} samples, input has {}",
                g.value(c).cols(),
                g.value(x).cols()
            )));
        }
        let a = aux.apply(g, p, c, 1)?;
        h = g.add(&h, &a)?;
    }
    let z = g.gate(&h)?;
    let skip = ids.skip.apply(g, p, &z, 1)?;
    let r = ids.out.apply(g, p, &z, 1)?;
    let res = g.add(&r, x)?;
    Ok((res, skip))
}

/// Non-causal WaveNet producing one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveNet {
    pub config: WaveNetConfig,
    pub params: ParamSet,
    input: ConvIds,
    layers: Vec<LayerIds>,
    head1: ConvIds,
    head2: ConvIds,
}

impl WaveNet {
    /// Random init with the final projection set to zero, so a fresh
    /// network outputs exactly zero.
    pub fn new(config: WaveNetConfig, seed: u64) -> Result<Self> {
        Self::with_output_init(config, seed, true)
    }

    /// Random init; `zero_output` clears the final projection.
    pub fn with_output_init(config: WaveNetConfig, seed: u64, zero_output: bool) -> Result<Self> {
        config.validate()?;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut ps = ParamSet::new();
        let (r, gc, s, a, k) =
            (config.residual_channels, config.gate_channels, config.skip_channels, config.aux_channels, config.kernel_size);
        let input = init.conv(&mut ps, "input", r, config.in_channels, 1, true);
        let layers = (0..config.layers)
            .map(|l| LayerIds {
                dilated: init.conv(&mut ps, &format!("layer{l}.dilated"), gc, r, k, true),
                aux: (a > 0).then(|| init.conv(&mut ps, &format!("layer{l}.aux"), gc, a, 1, false)),
                skip: init.conv(&mut ps, &format!("layer{l}.skip"), s, gc / 2, 1, true),
                out: init.conv(&mut ps, &format!("layer{l}.out"), r, gc / 2, 1, true),
            })
            .collect();
        let head1 = init.conv(&mut ps, "head.hidden", s, s, 1, true);
        let head2 = init.conv(&mut ps, "head.output", 1, s, 1, true);
        if zero_output {
            ps.get_mut(head2.w).data_mut().fill(0.0);
            ps.get_mut(head2.b.unwrap()).data_mut().fill(0.0);
        }
        Ok(Self { config, params: ps, input, layers, head1, head2 })
    }

    pub fn layer_ids(&self, layer: usize) -> &LayerIds {
        &self.layers[layer]
    }

    /// `x: [in_channels, T]`, `cond: [aux_channels, T]`; returns `[1, T]`.
    pub fn forward<G: Graph>(&self, g: &mut G, p: &[G::Node], x: &G::Node, cond: Option<&G::Node>) -> Result<G::Node> {
        if self.config.aux_channels > 0 && cond.is_none() {
            return Err(Error::InvalidArgument("network expects conditioning".into()));
        }
        let mut h = self.input.apply(g, p, x, 1)?;
        let mut skips: Option<G::Node> = None;
        for (l, ids) in self.layers.iter().enumerate() {
            let (res, skip) = gated_block(g, p, ids, &h, cond, self.config.dilation(l))?;
            h = res;
            skips = Some(match skips {
                Some(acc) => g.add(&acc, &skip)?,
                None => skip,
            });
        }
        let skips = skips.expect("at least one layer");
        let s = g.scale(&skips, (1.0 / self.config.layers as f64).sqrt());
        let s = g.relu(&s);
        let s = self.head1.apply(g, p, &s, 1)?;
        let s = g.relu(&s);
        self.head2.apply(g, p, &s, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Convolutions including the output projection.
    pub layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.channels == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!("invalid discriminator config {self:?}")));
        }
        Ok(())
    }

    /// Dilation of hidden layer `l` (the output projection is undilated).
    pub fn dilation(&self, l: usize) -> usize {
        l.max(1)
    }

    pub fn param_count(&self) -> usize {
        let (c, k) = (self.channels, self.kernel_size);
        (c * k + c) + (self.layers - 2) * (c * c * k + c) + (c * k + 1)
    }
}

/// Fully convolutional, unconditional per-sample critic.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    convs: Vec<ConvIds>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut ps = ParamSet::new();
        let (c, k) = (config.channels, config.kernel_size);
        let mut convs = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let inp = if l == 0 { 1 } else { c };
            let out = if l + 1 == config.layers { 1 } else { c };
            convs.push(init.conv(&mut ps, &format!("conv{l}"), out, inp, k, true));
        }
        Ok(Self { config, params: ps, convs })
    }

    /// Scores `[1, T]` for a waveform `[1, T]`.
    pub fn forward<G: Graph>(&self, g: &mut G, p: &[G::Node], x: &G::Node) -> Result<G::Node> {
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (l, ids) in self.convs.iter().enumerate() {
            if l == last {
                return ids.apply(g, p, &h, 1);
            }
            h = ids.apply(g, p, &h, self.config.dilation(l))?;
            h = g.leaky_relu(&h, LEAKY_SLOPE);
        }
        unreachable!("discriminator has an output layer")
    }
}
