use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.is_ascii()
        && name.split('.').all(|part| {
            !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if !valid_name(name) {
            return Err(Error::InvalidParamName(name.to_string()));
        }
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor: tensor.with_requires_grad(true),
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a tensor drawn from `U(-scale, scale)`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
        self.register(name, t)
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|id| &self.params[id.0])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    /// Toggles `requires_grad` for every parameter under `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.tensor.set_requires_grad(!frozen);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Copies every parameter of `other` whose name exists here (shapes must match).
    pub fn copy_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (_, src) in other.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            let id = self.id(&src.name)?;
            let dst = &mut self.params[id.0].tensor;
            if dst.shape() != src.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "copy_from",
                    shapes: vec![dst.shape().to_vec(), src.tensor.shape().to_vec()],
                });
            }
            dst.data_mut().copy_from_slice(src.tensor.data());
            copied += 1;
        }
        Ok(copied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_validated_and_unique() {
        let mut s = ParamStore::new();
        s.register_zeros("prosody.lstm_fwd.w_ih", &[2, 2]).unwrap();
        assert!(matches!(
            s.register_zeros("prosody.lstm_fwd.w_ih", &[2, 2]),
            Err(Error::DuplicateParam(_))
        ));
        for bad in ["", "a..b", ".a", "a.", "ü.x", "a b"] {
            assert!(
                matches!(s.register_zeros(bad, &[1]), Err(Error::InvalidParamName(_))),
                "{bad}"
            );
        }
        assert!(s.tensor(s.id("prosody.lstm_fwd.w_ih").unwrap()).requires_grad());
    }

    #[test]
    fn freezing_by_prefix() {
        let mut s = ParamStore::new();
        let a = s.register_zeros("prosody.a", &[1]).unwrap();
        let b = s.register_zeros("encoder.b", &[1]).unwrap();
        s.set_frozen("prosody.", true);
        assert!(!s.tensor(a).requires_grad());
        assert!(s.tensor(b).requires_grad());
    }
}
