use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst relative disagreement between the tape gradient and central
/// differences of `f` over every element of every input.
///
/// The relative error of an element is `|a - n| / max(|a|, |n|, floor)`
/// where `floor = 1e-2 * max|n|` over that input, so elements whose true
/// gradient is negligible next to the rest of the tensor are compared on
/// the tensor's own scale.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(super::Graph::value(&tape, &out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-2 * scale).max(f64::MIN_POSITIVE);
        for (a, n) in analytic.data().iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(floor);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    Ok(worst)
}
