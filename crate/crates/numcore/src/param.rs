//! Named trainable tensors and their binding onto a tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// A value grid with an optional gradient slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    #[serde(skip)]
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.shape()
    }
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, p: Param<T>) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    /// Adds a `fan_in x fan_out` matrix drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng>(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::from_fn(fan_in, fan_out, |_, _| T::of(rng.gen_range(-bound..=bound)));
        self.add(Param::new(name, value))
    }

    /// Adds a `1 x n` bias drawn from the same range as its weight matrix.
    pub fn uniform_bias<R: Rng>(&mut self, name: impl Into<String>, fan_in: usize, n: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::from_fn(1, n, |_, _| T::of(rng.gen_range(-bound..=bound)));
        self.add(Param::new(name, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p)).collect(),
        }
    }

    /// Registers every parameter as a constant leaf.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
        }
    }

    /// Adds the tape gradients of a previous [`ParamSet::bind`] into the
    /// parameters' gradient slots.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.requires_grad {
                continue;
            }
            let g = tape.grad(v);
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Copies values from a same-layout set.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value = b.value.clone();
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamSet<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(NumError::ShapeMismatch {
                op: "param_layout",
                left: vec![self.params.len()],
                right: vec![other.params.len()],
            });
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.shape() != b.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "param_layout",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    requires_grad: p.requires_grad,
                })
                .collect(),
        }
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: &[Tensor<T>]) {
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v.clone();
        }
    }
}

/// Tape handles for a bound [`ParamSet`], addressable by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = ParamSet::<f64>::new();
        let id = set.uniform("w", 16, 8, &mut rng);
        let bound = 0.25;
        assert!(set.get(id).value.data().iter().all(|v| v.abs() <= bound));
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let mut again = ParamSet::<f64>::new();
        again.uniform("w", 16, 8, &mut rng2);
        assert_eq!(set, again);
    }

    #[test]
    fn gradients_pulled_from_tape() {
        let mut set = ParamSet::<f64>::new();
        let w = set.add(Param::new("w", Tensor::row_vector(vec![2.0, -1.0])));
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let sq = tape.mul(bound[w], bound[w]).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        set.accumulate_grads(&tape, &bound);
        assert_eq!(set.get(w).grad.as_ref().unwrap().data(), &[4.0, -2.0]);
    }
}
