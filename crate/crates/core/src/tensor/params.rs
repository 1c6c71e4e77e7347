use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::{fnv1a, fnv1a_extend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter store. Insertion order is the canonical order used for
/// serialisation and checksums.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Param(alloc::format!("duplicate parameter `{name}`")));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Look up `name` and check its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self.id(name).ok_or_else(|| Error::Param(alloc::format!("missing parameter `{name}`")))?;
        let got = self.values[id.0].shape();
        if got != shape {
            return Err(Error::Shape { op: "parameter", lhs: got.to_vec(), rhs: shape.to_vec() });
        }
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// FNV-1a over name, shape and value bits of the selected parameters.
    pub fn fingerprint(&self, ids: impl IntoIterator<Item = ParamId>) -> u64 {
        let mut h = fnv1a(b"params");
        for id in ids {
            h = fnv1a_extend(h, self.names[id.0].as_bytes());
            let t = &self.values[id.0];
            for d in t.shape() {
                h = fnv1a_extend(h, &(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h = fnv1a_extend(h, &v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn fingerprint_all(&self) -> u64 {
        self.fingerprint(self.ids())
    }
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(len: usize) -> Self {
        Self { grads: (0..len).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn set(&mut self, id: ParamId, grad: Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(grad);
    }

    /// True when the parameter received a gradient with at least one nonzero entry.
    pub fn is_nonzero(&self, id: ParamId) -> bool {
        self.get(id).is_some_and(|g| g.data().iter().any(|&v| v != 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
