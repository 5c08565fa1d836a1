//! Central-difference verification of reverse-mode gradients.

use super::{lit, Real, Tape, Tensor, TensorData};
use crate::error::Result;

/// Compares the analytic gradient of a scalar-valued tensor function against
/// central differences, over every coordinate of every input.
///
/// Returns the maximum of `|analytic - numeric| / max(1e-12, |analytic| +
/// |numeric|)`. Run in `f64` with `h ~ 1e-5` for meaningful results.
pub fn grad_check_multi<T, F>(f: F, inputs: &[TensorData<T>], h: T) -> Result<T>
where
    T: Real,
    F: Fn(&Tape<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    let eval = |points: &[TensorData<T>], with_grad: bool| -> Result<(T, Vec<Option<Vec<T>>>)> {
        let tape = Tape::new();
        let leaves: Vec<Tensor<T>> = points
            .iter()
            .map(|p| tape.input(p, with_grad))
            .collect::<Result<_>>()?;
        let loss = f(&tape, &leaves)?;
        if !with_grad {
            return Ok((loss.item(), Vec::new()));
        }
        loss.backward()?;
        let grads = leaves.iter().map(|l| l.grad()).collect();
        Ok((loss.item(), grads))
    };

    let (_, analytic) = eval(inputs, true)?;

    let floor = lit::<T>(1e-12);
    let two_h = h + h;
    let mut worst = T::zero();
    let mut probe: Vec<TensorData<T>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let ga = analytic[ti].as_ref();
        for j in 0..input.data.len() {
            let orig = input.data[j];
            probe[ti].data[j] = orig + h;
            let (fp, _) = eval(&probe, false)?;
            probe[ti].data[j] = orig - h;
            let (fm, _) = eval(&probe, false)?;
            probe[ti].data[j] = orig;

            let numeric = (fp - fm) / two_h;
            let a = ga.map_or(T::zero(), |g| g[j]);
            let err = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// [`grad_check_multi`] for a single input tensor.
pub fn grad_check<T, F>(f: F, x: &TensorData<T>, h: T) -> Result<T>
where
    T: Real,
    F: Fn(&Tape<T>, &Tensor<T>) -> Result<Tensor<T>>,
{
    grad_check_multi(|tape, xs| f(tape, &xs[0]), std::slice::from_ref(x), h)
}
