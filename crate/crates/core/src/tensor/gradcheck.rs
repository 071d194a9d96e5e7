use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the function on a fresh tape from one leaf per input. Returns
/// the maximum over all input coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item()?.to_f64().expect("finite"))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let step = T::lit(eps);
    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (which, &var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(var)
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![T::zero(); inputs[which].len()]);
        for j in 0..inputs[which].len() {
            let orig = inputs[which].data()[j];
            probe[which].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[which].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[which].data_mut()[j] = orig;
            // The effective step is what survived rounding in T.
            let h = ((orig + step) - (orig - step)).to_f64().expect("finite");
            if h == 0.0 {
                return Err(Error::domain("grad_check", "finite-difference step vanished"));
            }
            let numeric = (up - down) / h;
            let a = analytic[j].to_f64().expect("finite");
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
