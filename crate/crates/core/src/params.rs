//! Named parameter storage shared by every model component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named, trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Per-tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// FNV-1a; a stable per-name RNG stream independent of registration order.
fn name_stream(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform Glorot initialization `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
/// drawn from a stream determined by `(seed, name)` only.
pub fn glorot_uniform(name: &str, rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_stream(name));
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::matrix(rows, cols, data)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Registers a tensor under a unique name. The tensor becomes trainable.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.tensors.push(t.with_grad(true));
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize, seed: u64) -> Result<ParamId> {
        let t = glorot_uniform(name, rows, cols, seed)?;
        self.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.insert(name, Tensor::matrix(rows, cols, vec![v; rows * cols])?)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Bound { vars }
    }

    /// Copies the gradients of the last backward pass into dense per-parameter
    /// buffers (zeros where no gradient reached, `None` for frozen tensors).
    pub fn collect_grads(&self, tape: &Tape, bound: &Bound) -> Vec<Option<Vec<f64>>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| {
                t.requires_grad().then(|| {
                    tape.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; t.numel()])
                })
            })
            .collect()
    }

    pub fn accumulate_grads(&mut self, grads: &[Option<Vec<f64>>]) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            if let Some(g) = g {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Verifies that `other` has the same names and shapes, in the same order.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint(format!(
                "parameter sets differ ({} vs {} tensors)",
                self.len(),
                other.len()
            )));
        }
        for (name, (a, b)) in self
            .names
            .iter()
            .zip(self.tensors.iter().zip(&other.tensors))
        {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_is_bounded_and_order_independent() {
        let a = glorot_uniform("w", 4, 8, 7).unwrap();
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() < bound));
        let mut s1 = ParamStore::new();
        s1.glorot("x", 3, 3, 7).unwrap();
        let w1 = s1.glorot("w", 4, 8, 7).unwrap();
        let mut s2 = ParamStore::new();
        let w2 = s2.glorot("w", 4, 8, 7).unwrap();
        assert_eq!(s1.get(w1).data(), s2.get(w2).data());
        assert_ne!(glorot_uniform("w", 4, 8, 8).unwrap().data(), a.data());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.constant("b", 1, 2, 0.0).unwrap();
        assert!(s.constant("b", 1, 2, 0.0).is_err());
    }
}
