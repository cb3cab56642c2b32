//! Named parameter storage and the checkpoint file format.
//!
//! A checkpoint is an 8-byte little-endian manifest length, a JSON manifest
//! `{"tensors": [{"name", "offset", "shape"}]}`, then every value as a
//! little-endian `f64`. Offsets count values, not bytes, from the start of
//! the data section.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tape handles of a bound [`ParamStore`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<S>>>,
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), lookup: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::InvalidParameter(format!("duplicate parameter name '{name}'")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(Arc::new(value));
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.lookup.get(name).map(|&i| &*self.tensors[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), &**t))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Binding {
        Binding(self.tensors.iter().map(|t| tape.shared(Arc::clone(t), true)).collect())
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_constant(&self, tape: &mut Tape<S>) -> Binding {
        Binding(self.tensors.iter().map(|t| tape.shared(Arc::clone(t), false)).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let tensors = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| {
                let e = ManifestEntry { name: name.clone(), offset, shape: t.shape().to_vec() };
                offset += t.len();
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest { tensors }).expect("manifest serializes");
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for t in &self.tensors {
            for v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut manifest = vec![0u8; len];
        r.read_exact(&mut manifest)?;
        let manifest: Manifest =
            serde_json::from_slice(&manifest).map_err(|e| Error::Parse(format!("checkpoint manifest: {e}")))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() % 8 != 0 {
            return Err(Error::Parse("checkpoint data is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut store = Self::new();
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let slice = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Parse(format!("tensor '{}' runs past the data section", e.name)))?;
            store.add(e.name, Tensor::from_f64(&e.shape, slice)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Copies values from `other` by name, requiring matching shapes.
    pub fn load_values(&mut self, other: &ParamStore<S>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .by_name(name)
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing parameter '{name}'")))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::shape(
                    "load_values",
                    format!("'{name}': {:?} vs {:?}", src.shape(), self.tensors[i].shape()),
                ));
            }
            self.tensors[i] = Arc::new(src.clone());
        }
        Ok(())
    }
}
