use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{fnv1a, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub frozen: bool,
}

/// Named parameter tensors of one model component, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

/// Gradients keyed by parameter name.
pub type GradMap<S> = BTreeMap<String, Tensor<S>>;

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.frozen = pred(&p.name);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Binds a parameter onto a tape; frozen parameters get no gradient.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, S>, id: ParamId) -> Var {
        let p = &self.params[id.0];
        tape.param(&p.value, !p.frozen)
    }

    /// Copies this store's gradients out of a backward sweep.
    pub fn collect_grads(&self, grads: &Gradients<S>, into: &mut GradMap<S>) {
        for p in &self.params {
            if p.frozen {
                continue;
            }
            if let Some(g) = grads.of_param(&p.value) {
                match into.get_mut(&p.name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        into.insert(p.name.clone(), g.clone());
                    }
                }
            }
        }
    }

    /// Checksum over the exact bits of the selected parameters.
    pub fn checksum_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut bytes = Vec::new();
        for p in self.params.iter().filter(|p| pred(&p.name)) {
            bytes.extend_from_slice(p.name.as_bytes());
            bytes.extend_from_slice(&p.value.bit_checksum().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    /// Replaces every value from `(name, tensor)` pairs, checking shapes.
    pub fn load(&mut self, entries: &BTreeMap<String, Tensor<S>>) -> Result<()> {
        for p in &mut self.params {
            let t = entries
                .get(&p.name)
                .ok_or_else(|| Error::Archive(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{}: checkpoint {:?} vs model {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
