//! Central finite-difference checks for hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Param;
use crate::error::Result;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Norm below which gradients are compared absolutely. Some true
/// gradients are exactly zero (a conv bias feeding batch norm), and their
/// finite-difference estimates are pure roundoff.
pub const FLOOR: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||, FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    diff / scale.max(FLOOR)
}

/// Worst relative error between analytic and numerical gradients of
/// `sum(r * layer(x))` for a fixed random `r`, over the input and every
/// listed parameter tensor.
pub fn layer_gradient_error<L>(
    layer: &mut L,
    x: &Tensor,
    forward: impl Fn(&L, &Tensor) -> Result<Tensor>,
    backward: impl Fn(&mut L, &Tensor, &Tensor) -> Result<Tensor>,
    params: impl Fn(&mut L) -> Vec<&mut Param>,
) -> Result<f64> {
    let y = forward(layer, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = Tensor::new(
        y.shape().to_vec(),
        (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let objective = |layer: &L, x: &Tensor| -> Result<f64> {
        let y = forward(layer, x)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };

    params(layer).into_iter().for_each(Param::zero_grad);
    let dx = backward(layer, x, &r)?;
    let analytic: Vec<Vec<f64>> = params(layer)
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut numeric_dx = vec![0.0; x.len()];
    let mut xp = x.clone();
    for (i, slot) in numeric_dx.iter_mut().enumerate() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = objective(layer, &xp)?;
        xp.data_mut()[i] = orig - STEP;
        let down = objective(layer, &xp)?;
        xp.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * STEP);
    }
    let mut worst = rel_err(dx.data(), &numeric_dx);

    for (pi, expected) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; expected.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = params(layer)[pi].value.data()[j];
            params(layer)[pi].value.data_mut()[j] = orig + STEP;
            let up = objective(layer, x)?;
            params(layer)[pi].value.data_mut()[j] = orig - STEP;
            let down = objective(layer, x)?;
            params(layer)[pi].value.data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(expected, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) fn check_layer<L>(
    layer: &mut L,
    x: &Tensor,
    forward: impl Fn(&L, &Tensor) -> Result<Tensor>,
    backward: impl Fn(&mut L, &Tensor, &Tensor) -> Result<Tensor>,
    params: impl Fn(&mut L) -> Vec<&mut Param>,
    tol: f64,
) {
    let err = layer_gradient_error(layer, x, forward, backward, params).unwrap();
    assert!(err < tol, "gradient relative error {err:e} exceeds {tol:e}");
}
