use msrnv::autograd::{grad_check, Graph, Tape, Tensor, Var};
use msrnv::generator::{GeneratorCascade, StageDims, StageGenerator};
use msrnv::loss::{mr_stft_loss, ResolutionConfig};
use msrnv::nn::{gated_block, Discriminator, DiscriminatorConfig, WaveNet, WaveNetConfig, LEAKY_SLOPE};
use msrnv::resample::RateLadder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const BLOCK_TOL: f64 = 1e-4;
const STAGE_TOL: f64 = 1e-3;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar probe `sum(w * y)` with fixed random weights, so every output
/// element carries a distinct gradient.
fn probe(g: &mut Tape, y: &Var, seed: u64) -> Var {
    let w = g.constant(random(g.value(y).shape(), seed));
    let p = g.mul(y, &w).unwrap();
    g.sum(&p)
}

fn tiny_wavenet() -> WaveNetConfig {
    WaveNetConfig {
        in_channels: 1,
        residual_channels: 4,
        gate_channels: 6,
        skip_channels: 3,
        aux_channels: 2,
        layers: 3,
        stacks: 1,
        kernel_size: 3,
    }
}

#[test]
fn conv1d_with_bias_and_dilation() {
    for dilation in [1, 2, 5] {
        let inputs = [random(&[3, 13], 1), random(&[4, 3, 3], 2), random(&[4], 3)];
        let err = grad_check(
            |g, v| {
                let y = g.conv1d(&v[0], &v[1], Some(&v[2]), dilation)?;
                Ok(probe(g, &y, 4))
            },
            &inputs,
            STEP,
        )
        .unwrap();
        assert!(err < BLOCK_TOL, "dilation {dilation}: {err}");
    }
}

#[test]
fn gated_block_all_inputs() {
    let net = WaveNet::with_output_init(tiny_wavenet(), 11, false).unwrap();
    let ids = *net.layer_ids(1);
    let mut inputs = vec![random(&[4, 17], 5), random(&[2, 17], 6)];
    inputs.extend(net.params.tensors().iter().cloned());
    let err = grad_check(
        |g, v| {
            let (res, skip) = gated_block(g, &v[2..], &ids, &v[0], Some(&v[1]), 2)?;
            let a = probe(g, &res, 7);
            let b = probe(g, &skip, 8);
            g.add(&a, &b)
        },
        &inputs,
        STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "{err}");
}

#[test]
fn leaky_relu_away_from_the_kink() {
    let mut x = random(&[2, 40], 9);
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 1e-3 {
            *v = 0.5
        }
    });
    let err = grad_check(
        |g, v| {
            let y = g.leaky_relu(&v[0], LEAKY_SLOPE);
            Ok(probe(g, &y, 10))
        },
        &[x],
        STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "{err}");
}

#[test]
fn discriminator_scores() {
    let d = Discriminator::new(DiscriminatorConfig { layers: 4, channels: 3, kernel_size: 3 }, 12).unwrap();
    let mut inputs = vec![random(&[1, 24], 13)];
    inputs.extend(d.params.tensors().iter().cloned());
    let err = grad_check(
        |g, v| {
            let s = d.forward(g, &v[1..], &v[0])?;
            let e = g.add_scalar(&s, -1.0);
            let q = g.square(&e);
            Ok(g.mean(&q))
        },
        &inputs,
        STEP,
    )
    .unwrap();
    assert!(err < BLOCK_TOL, "{err}");
}

#[test]
fn whole_stage_through_upsampler_and_loss() {
    let dims = StageDims { residual_channels: 3, gate_channels: 4, skip_channels: 3, aux_channels: 2, layers: 2, stacks: 1, kernel_size: 3 };
    let ladder = RateLadder::new(vec![1000, 2000]).unwrap();
    let stages = (0..2)
        .map(|i| StageGenerator {
            index: i,
            in_rate: (i == 1).then_some(1000),
            out_rate: ladder.rates()[i],
            net: WaveNet::with_output_init(dims.wavenet(), 20 + i as u64, false).unwrap(),
        })
        .collect();
    let cascade = GeneratorCascade { ladder, dims, stages };
    let plans = ResolutionConfig::default().plans_for_rate(2000).unwrap();
    let target = random(&[1, 80], 21).into_data();
    let n0 = cascade.stages[0].net.params.len();
    let mut inputs = vec![random(&[1, 40], 22), random(&[2, 40], 23), random(&[2, 80], 24)];
    inputs.extend(cascade.stages[0].net.params.tensors().iter().cloned());
    inputs.extend(cascade.stages[1].net.params.tensors().iter().cloned());
    let err = grad_check(
        |g, v| {
            let params = vec![v[3..3 + n0].to_vec(), v[3 + n0..].to_vec()];
            let outs = cascade.forward(g, &params, &v[0], &v[1..3], 2)?;
            let (l, _) = mr_stft_loss(g, &outs[1], &target, &plans)?;
            Ok(l)
        },
        &inputs,
        STEP,
    )
    .unwrap();
    assert!(err < STAGE_TOL, "{err}");
}
