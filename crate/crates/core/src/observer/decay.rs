//! Error contraction between two latent trajectories driven by the same
//! inputs.

use super::model::ObserverModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DecayReport {
    /// `e_k = ||xi_a,k - xi_b,k||_inf` for `k = 0..=K`.
    pub errors: Vec<f64>,
    /// `max A`.
    pub rho: f64,
    /// `rho^k e_0`.
    pub envelope: Vec<f64>,
    /// Envelope plus the accumulated floating-point rounding allowance.
    pub bound: Vec<f64>,
}

impl DecayReport {
    /// First `k` at which `e_k` exceeds the bound.
    pub fn first_violation(&self) -> Option<usize> {
        self.errors
            .iter()
            .zip(&self.bound)
            .position(|(e, b)| e > b)
    }

    pub fn holds(&self) -> bool {
        self.first_violation().is_none()
    }
}

fn inf_norm(t: &Tensor<f64>) -> f64 {
    t.max_abs()
}

/// Runs `k_max` forecast steps from `xi_a0` and `xi_b0`, using `xs[k % len]`
/// as the driving latent at step `k`.
pub fn latent_error_decay(
    model: &ObserverModel<f64>,
    xi_a0: &Tensor<f64>,
    xi_b0: &Tensor<f64>,
    xs: &[Tensor<f64>],
    k_max: usize,
) -> Result<DecayReport> {
    if xs.is_empty() {
        return Err(Error::Contract("decay needs at least one driving input".into()));
    }
    xi_a0.expect_shape(xi_b0.shape(), "second initial state")?;
    let rho = model
        .a_tensor()
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    // per-operation unit roundoff with slack for the norm evaluation
    let u = 1.01 * f64::EPSILON / 2.0;

    let e0 = inf_norm(&xi_a0.zip_map(xi_b0, |a, b| a - b)?);
    let mut errors = vec![e0];
    let mut envelope = vec![e0];
    let mut bound = vec![e0];
    let (mut xa, mut xb) = (xi_a0.clone(), xi_b0.clone());
    for k in 1..=k_max {
        let x = &xs[(k - 1) % xs.len()];
        let na = model.forecast_step_tensor(&xa, x)?;
        let nb = model.forecast_step_tensor(&xb, x)?;
        let slack = u * (rho.abs() * (inf_norm(&xa) + inf_norm(&xb)) + inf_norm(&na) + inf_norm(&nb));
        errors.push(inf_norm(&na.zip_map(&nb, |a, b| a - b)?));
        envelope.push(rho * envelope[k - 1]);
        bound.push(rho * bound[k - 1] + slack);
        xa = na;
        xb = nb;
    }
    Ok(DecayReport {
        errors,
        rho,
        envelope,
        bound,
    })
}
