//! Named parameter collections and their on-disk format.
//!
//! Typed parameter structs implement [`Params`] so the optimizer, gradient
//! accumulation, and serialization can walk every tensor in a fixed,
//! deterministic order. [`ParamTree`] is the flat named form used for
//! checkpoints: magic `KINN1`, a JSON header (names, shapes, dtype, byte
//! offsets), then the raw little-endian payload.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything made of named tensors. `walk`/`walk_mut` must visit the same
/// tensors in the same order for structurally equal values; everything else
/// is derived from that.
pub trait Params<T: Scalar>: Clone {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>));

    fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.walk("", &mut |name, t| out.push((name, t)));
        out
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.walk_mut("", &mut |name, t| out.push((name, t)));
        out
    }

    fn num_params(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }

    /// Structurally identical copy with every entry zeroed (gradient and
    /// optimizer-state buffers).
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.walk_mut("", &mut |_, t| t.fill(T::zero()));
        out
    }

    /// `self += k * other` entrywise; both sides must share the structure.
    fn add_scaled_params(&mut self, other: &Self, k: T) {
        let theirs = other.entries();
        let mut i = 0;
        self.walk_mut("", &mut |name, t| {
            debug_assert_eq!(name, theirs[i].0);
            t.add_scaled(theirs[i].1, k);
            i += 1;
        });
        debug_assert_eq!(i, theirs.len());
    }

    fn scale_params(&mut self, k: T) {
        self.walk_mut("", &mut |_, t| t.scale(k));
    }

    fn to_tree(&self) -> ParamTree<T> {
        ParamTree::from_entries(
            self.entries().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        )
        .expect("parameter names are unique by construction")
    }

    /// Overwrite every tensor from a tree saved by the same architecture.
    fn load_tree(&mut self, tree: &ParamTree<T>) -> Result<()> {
        let mut err = None;
        self.walk_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match tree.get(&name) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => {
                    err = Some(Error::Shape(format!(
                        "checkpoint entry {name}: shape {:?} vs expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Format(format!("checkpoint is missing entry {name}"))),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// A bare tensor counts as a one-entry parameter set (used by the gradient
/// checker to sweep op inputs the same way it sweeps weights).
impl<T: Scalar> Params<T> for Tensor<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "x"), self);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "x"), self);
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Flat named tensor collection with a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree<T> {
    entries: Vec<(String, Tensor<T>)>,
}

const MAGIC: &[u8; 5] = b"KINN1";

#[derive(Serialize, Deserialize)]
struct TreeHeader {
    dtype: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    byte_len: usize,
}

impl<T: Scalar> ParamTree<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut headers = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let offset = payload.len();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            headers.push(TensorHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                byte_len: payload.len() - offset,
            });
        }
        let header = TreeHeader { dtype: T::DTYPE.to_string(), tensors: headers };
        let header_json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(5 + 8 + header_json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != MAGIC {
            return Err(Error::Format("not a KINN1 parameter file".into()));
        }
        let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let header_end = 13 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Format("truncated KINN1 header".into()));
        }
        let header: TreeHeader = serde_json::from_slice(&bytes[13..header_end])?;
        if header.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "dtype mismatch: file has {}, expected {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let payload = &bytes[header_end..];
        let mut entries = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let end = th.offset + th.byte_len;
            if end > payload.len() {
                return Err(Error::Format(format!("truncated payload for {}", th.name)));
            }
            let raw = &payload[th.offset..end];
            if raw.len() % T::BYTE_WIDTH != 0 {
                return Err(Error::Format(format!("ragged payload for {}", th.name)));
            }
            let data: Vec<T> =
                raw.chunks_exact(T::BYTE_WIDTH).map(|c| T::read_le(c)).collect();
            entries.push((th.name, Tensor::from_vec(&th.shape, data)?));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> ParamTree<f64> {
        ParamTree::from_entries(vec![
            ("layer.weight".into(), Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-17, 7.0]).unwrap()),
            ("layer.bias".into(), Tensor::from_vec(&[3], vec![0.1, 0.2, -0.3]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let tree = sample_tree();
        let bytes = tree.to_bytes();
        assert_eq!(&bytes[..5], b"KINN1");
        let back = ParamTree::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(tree, back);
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::<f64>::zeros(&[1]);
        assert!(ParamTree::from_entries(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }

    #[test]
    fn wrong_dtype_rejected() {
        let bytes = sample_tree().to_bytes();
        assert!(ParamTree::<f32>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample_tree().to_bytes();
        bytes[0] = b'X';
        assert!(ParamTree::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn tensor_as_params_walks_itself() {
        let t = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(t.entries().len(), 1);
        assert_eq!(t.num_params(), 4);
        let mut g = t.zeros_like();
        g.add_scaled_params(&t, 1.0);
    }
}
