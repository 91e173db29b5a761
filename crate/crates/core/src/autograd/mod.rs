//! Reverse-mode differentiation over dense f64 tensors.

mod gradcheck;
mod graph;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Binary, Eager, Graph, Unary};
pub use tape::{Tape, Var};
pub use tensor::{conv1d_backward, conv1d_forward, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::resample::Resampler;
    use crate::spectral::{StftPlan, LOSS_POWER_FLOOR};

    fn ramp(shape: &[usize], seed: usize) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| (((i + seed) * 37 % 23) as f64) / 11.0 - 1.0 + 0.013).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn gated_conv_gradients() {
        let inputs = [ramp(&[2, 11], 0), ramp(&[4, 2, 3], 5), ramp(&[4], 9)];
        let err = grad_check(
            |g, v| {
                let y = g.conv1d(&v[0], &v[1], Some(&v[2]), 2)?;
                let a = g.rows(&y, 0, 2)?;
                let b = g.rows(&y, 2, 2)?;
                let t = g.tanh(&a);
                let s = g.sigmoid(&b);
                let z = g.mul(&t, &s)?;
                let sq = g.square(&z);
                Ok(g.mean(&sq))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fused_gate_matches_composition() {
        let h = ramp(&[4, 7], 2);
        let err = grad_check(
            |g, v| {
                let z = g.gate(&v[0])?;
                let sq = g.square(&z);
                Ok(g.sum(&sq))
            },
            &[h.clone()],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
        let mut e = Eager;
        let hv = e.constant(h);
        let fused = e.gate(&hv).unwrap();
        let a = e.rows(&hv, 0, 2).unwrap();
        let b = e.rows(&hv, 2, 2).unwrap();
        let (ta, sb) = (e.tanh(&a), e.sigmoid(&b));
        let composed = e.mul(&ta, &sb).unwrap();
        assert_eq!(fused, composed);
    }

    #[test]
    fn fast_tanh_is_accurate() {
        for i in -4000..4000 {
            let x = i as f64 * 0.01 + 1e-9;
            assert!((graph::tanh(x) - x.tanh()).abs() <= 1e-15 * x.tanh().abs().max(1e-300) + 2e-16, "{x}");
        }
        assert_eq!(graph::tanh(0.0), 0.0);
        assert_eq!(graph::tanh(1e3), 1.0);
    }

    #[test]
    fn resample_and_stft_gradients() {
        let r = Resampler::shared(1000, 2000, Default::default()).unwrap();
        let plan = StftPlan::shared(32, 24, 8, LOSS_POWER_FLOOR).unwrap();
        let err = grad_check(
            |g, v| {
                let up = g.resample(&v[0], &r);
                let m = g.stft_mag(&up, &plan)?;
                let l = g.ln(&m);
                let a = g.abs(&l);
                Ok(g.mean(&a))
            },
            &[ramp(&[1, 40], 3)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn concat_fit_and_division() {
        let err = grad_check(
            |g, v| {
                let c = g.concat_rows(&v[0], &v[1])?;
                let f = g.fit_cols(&c, 4);
                let d = g.add_scalar(&f, 3.0);
                let q = g.div(&f, &d)?;
                let s = g.scale(&q, 0.5);
                let lr = g.leaky_relu(&s, 0.2);
                Ok(g.sum(&lr))
            },
            &[ramp(&[1, 6], 1), ramp(&[2, 6], 2)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn unreachable_and_constant_nodes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::row(vec![5.0, 5.0]));
        let c = tape.constant(Tensor::row(vec![3.0, 4.0]));
        let p = tape.mul(&a, &c).unwrap();
        let loss = tape.sum(&p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).data(), &[3.0, 4.0]);
        assert_eq!(tape.grad(b).data(), &[0.0, 0.0]);
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn detach_stops_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![2.0]));
        let d = tape.detach(&a);
        let p = tape.mul(&a, &d).unwrap();
        let loss = tape.sum(&p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).data(), &[2.0]);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![-1.0]));
        let l = tape.ln(&a);
        let s = tape.sum(&l);
        assert!(matches!(tape.backward(s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn eager_matches_tape() {
        let x = ramp(&[2, 9], 4);
        let w = ramp(&[3, 2, 3], 8);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
        let y = tape.conv1d(&xv, &wv, None, 4).unwrap();
        let y = tape.relu(&y);
        let mut eager = Eager;
        let xe = eager.constant(x);
        let we = eager.param(&w);
        let ye = eager.conv1d(&xe, &we, None, 4).unwrap();
        let ye = eager.relu(&ye);
        assert_eq!(tape.value(&y), eager.value(&ye));
    }
}
