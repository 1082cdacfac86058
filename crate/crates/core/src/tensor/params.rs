use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Parameter initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Standard normal.
    Normal,
    /// Uniform on `[0, 1)`.
    Uniform,
    /// Uniform on `±1/sqrt(fan_in)` (He-uniform with negative slope `sqrt(5)`).
    KaimingUniform,
    #[serde(skip)]
    Constant(f64),
}

impl Init {
    pub fn sample<T: Scalar>(self, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
        match self {
            Init::Normal => Tensor::from_fn(shape, |_| {
                let v: f64 = StandardNormal.sample(rng);
                T::of(v)
            }),
            Init::Uniform => Tensor::from_fn(shape, |_| T::of(rng.gen::<f64>())),
            Init::KaimingUniform => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
            }
            Init::Constant(c) => Tensor::full(shape, T::of(c)),
        }
    }
}

/// Fan-in the way layer initializers compute it: `shape[1] * prod(shape[2..])`.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 => shape[0],
        _ => shape[1..].iter().product(),
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub init: Init,
    pub grad: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors of one model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    names: HashSet<String>,
}

/// The tape handles for every parameter of a store, as bound for one pass.
#[derive(Clone, Debug)]
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            names: HashSet::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, init: Init) -> Result<ParamId> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter {
            name,
            value,
            init,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn init(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let value = init.sample(shape, fan_in, rng);
        self.add(name, value, init)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Binding {
        Binding(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), requires_grad))
                .collect(),
        )
    }

    /// Moves gradients for bound parameters into their `grad` slots;
    /// unreachable parameters get zeros.
    pub fn assign_grads(&mut self, binding: &Binding, grads: &mut Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(binding.vars()) {
            p.grad = Some(
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape())),
            );
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    init: p.init,
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            names: self.names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f64>::new();
        store.add("a.weight", Tensor::ones(&[2]), Init::Uniform).unwrap();
        assert!(store.add("a.weight", Tensor::ones(&[2]), Init::Uniform).is_err());
    }

    #[test]
    fn seeded_init_is_bit_identical() {
        for init in [Init::Normal, Init::Uniform, Init::KaimingUniform] {
            let a: Tensor<f32> = init.sample(&[4, 3, 3, 3], 27, &mut ChaCha8Rng::seed_from_u64(9));
            let b: Tensor<f32> = init.sample(&[4, 3, 3, 3], 27, &mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kaiming_bound() {
        let t: Tensor<f64> = Init::KaimingUniform.sample(&[64, 16, 3, 3], 144, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(t.max_abs() <= 1.0 / 12.0);
        assert_eq!(fan_in(&[64, 16, 3, 3]), 144);
    }
}
