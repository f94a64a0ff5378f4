use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What a stored tensor is used for. Running statistics are state, not
/// learnable parameters, and are excluded from parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
    /// Learnable table that is not a layer weight (position embeddings).
    Table,
}

impl Role {
    pub fn learnable(self) -> bool {
        !matches!(self, Role::BnMean | Role::BnVar)
    }
}

#[derive(Clone)]
pub struct Entry<T> {
    pub role: Role,
    pub value: Tensor<T>,
}

/// Named tensors of one model, in name order.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, role: Role, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` defined twice")));
        }
        self.entries.insert(name, Entry { role, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Option<&Entry<T>> {
        self.entries.get(name)
    }

    /// Replaces a value, keeping its role. The shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter `{name}` has shape {:?}, cannot assign {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Sets every tensor whose name starts with `prefix` and ends with
    /// `suffix` to zero. Returns how many were touched.
    pub fn zero_matching(&mut self, prefix: &str, suffix: &str) -> usize {
        let mut n = 0;
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) && name.ends_with(suffix) {
                e.value = e.value.map(|_| T::zero());
                n += 1;
            }
        }
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn learnable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.role.learnable())
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Learnable element count of tensors whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.role.learnable() && k.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.count("")
    }

    /// Order-sensitive hash over names and values.
    pub fn checksum(&self) -> u64 {
        self.entries
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, (k, e)| {
                let mut h = h;
                for b in k.bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
                (h ^ e.value.checksum()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }

    /// Copies every entry of `other` in under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore<T>) -> Result<()> {
        for (k, e) in &other.entries {
            self.insert(format!("{prefix}{k}"), e.role, e.value.clone())?;
        }
        Ok(())
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, e)| k.strip_prefix(prefix).map(|s| (s.to_string(), e.clone())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            role: e.role,
                            value: e.value.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Creates parameters in a fixed order from one seeded generator, so the
/// same seed always yields the same store.
pub struct Init<T> {
    pub store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<T> {
    pub fn new(seed: u64) -> Self {
        Init {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn weight(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Result<()> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng)?;
        self.store.insert(name, Role::Weight, t)
    }

    pub fn tensor(&mut self, name: impl Into<String>, role: Role, value: Tensor<T>) -> Result<()> {
        self.store.insert(name, role, value)
    }

    /// Small random values for learnable tables.
    pub fn table(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64) -> Result<()> {
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng)?;
        self.store.insert(name, Role::Table, t)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

/// A graph paired with the parameter values a forward pass reads.
pub struct Run<'a, T: Scalar, G: Graph<T>> {
    pub g: &'a mut G,
    pub params: &'a ParamStore<T>,
}

impl<'a, T: Scalar, G: Graph<T>> Run<'a, T, G> {
    pub fn new(g: &'a mut G, params: &'a ParamStore<T>) -> Self {
        Run { g, params }
    }

    pub fn p(&mut self, name: &str) -> Result<G::Var> {
        let v = self.params.get(name)?;
        Ok(self.g.param(name, v))
    }

    pub fn raw(&self, name: &str) -> Result<&'a Tensor<T>> {
        self.params.get(name)
    }
}
