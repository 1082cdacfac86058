use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// What [`Adam::step`] did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a non-finite value; nothing was changed.
    Skipped,
}

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Bias-corrected adaptive-moment update from the stored gradients.
    /// Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<StepOutcome> {
        if store.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let finite = store
            .iter()
            .all(|p| p.grad.as_ref().is_none_or(|g| g.all_finite()));
        if !finite {
            return Ok(StepOutcome::Skipped);
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad.as_ref() else { continue };
            let params = p.value.data_mut();
            for (((w, &gi), mi), vi) in params
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + ob1 * gi;
                *vi = b2 * *vi + ob2 * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;

    fn store(vals: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = vals.len();
        s.add("w", Tensor::from_vec(&[n], vals).unwrap(), Init::Uniform).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: Vec<f64>) {
        let id = s.ids().next().unwrap();
        let n = g.len();
        s.get_mut(id).grad = Some(Tensor::from_vec(&[n], g).unwrap());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(vec![1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &s);
        for _ in 0..5 {
            set_grad(&mut s, vec![0.0, 0.0]);
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(vec![0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &s);
        set_grad(&mut s, vec![3.0, -0.5]);
        opt.step(&mut s).unwrap();
        let w = s.iter().next().unwrap().value.data().to_vec();
        // m_hat = g, v_hat = g^2 after bias correction
        assert!((w[0] + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((w[1] - 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_size_limit() {
        let mut s = store(vec![0.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.001), &s);
        let mut prev = 0.0;
        for k in 0..2000 {
            set_grad(&mut s, vec![0.2]);
            opt.step(&mut s).unwrap();
            let w = s.iter().next().unwrap().value.data()[0];
            let delta = prev - w;
            prev = w;
            if k > 10 {
                // corrected moments equal g and g^2 exactly for a constant gradient
                assert!((delta - 0.001).abs() < 1e-9, "step {k}: {delta}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut s = store(vec![1.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &s);
        set_grad(&mut s, vec![f64::NAN]);
        assert_eq!(opt.step(&mut s).unwrap(), StepOutcome::Skipped);
        assert_eq!(opt.step, 0);
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0]);
    }
}
