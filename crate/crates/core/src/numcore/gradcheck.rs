use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients against central differences.
///
/// `build` records a computation over the supplied leaves. Non-scalar outputs
/// are reduced with a fixed pseudo-random projection so that ops whose plain
/// sum has zero gradient (normalization) are still exercised. Returns the
/// maximum of `|analytic - numeric| / max(1, |analytic|)` over every input
/// element.
pub fn finite_difference_gradcheck<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("gradcheck eps must be positive".into()));
    }
    let run = |values: &[Tensor], with_grad: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(with_grad)))
            .collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = run(inputs, true)?;
    let n_out = tape.value(out).numel();
    let probe: Vec<f64> = if n_out == 1 {
        vec![1.0]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    tape.backward(out, &probe)?;

    let project = |values: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = run(values, false)?;
        Ok(tape.value(out).data().iter().zip(&probe).map(|(a, b)| a * b).sum())
    };

    let mut worst = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for e in 0..inputs[i].numel() {
            let orig = inputs[i].data()[e];
            perturbed[i].data_mut()[e] = orig + eps;
            let plus = project(&perturbed)?;
            perturbed[i].data_mut()[e] = orig - eps;
            let minus = project(&perturbed)?;
            perturbed[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[e] - numeric).abs() / analytic[e].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
