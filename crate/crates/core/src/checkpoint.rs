//! `.ckpt` files: a JSON index followed by a raw little-endian `f64` payload.
//!
//! Layout: magic `MFCK`, `u32` index length, UTF-8 JSON index, payload. The index
//! maps every tensor name to its shape and byte offset within the payload and
//! carries the lineage hashes used to detect stale artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, Tensor};

const MAGIC: &[u8; 4] = b"MFCK";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Version string embedded in every artifact.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Index {
    kind: String,
    version: String,
    frozen: bool,
    config_hash: String,
    parent_hash: Option<String>,
    corpus_hash: Option<String>,
    meta: serde_json::Value,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub version: String,
    pub frozen: bool,
    pub config_hash: String,
    /// Hash of the checkpoint this one was derived from (base model for adaptation).
    pub parent_hash: Option<String>,
    pub corpus_hash: Option<String>,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            version: version_string(),
            frozen: false,
            config_hash: config_hash.into(),
            parent_hash: None,
            corpus_hash: None,
            meta: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            tensors.insert(
                name.clone(),
                TensorEntry {
                    shape: t.shape().to_vec(),
                    offset,
                },
            );
            offset += 8 * t.numel() as u64;
        }
        let index = Index {
            kind: self.kind.clone(),
            version: self.version.clone(),
            frozen: self.frozen,
            config_hash: self.config_hash.clone(),
            parent_hash: self.parent_hash.clone(),
            corpus_hash: self.corpus_hash.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&index)?;
        let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let decode = |offset: usize, msg: &str| Error::Decode {
            path: path.to_path_buf(),
            offset,
            msg: msg.to_string(),
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(decode(0, "missing MFCK magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| decode(8, "truncated index"))?;
        let index: Index =
            serde_json::from_slice(json).map_err(|e| decode(8, &format!("bad index: {e}")))?;
        let base = 8 + len;
        let mut tensors = BTreeMap::new();
        for (name, entry) in index.tensors {
            let n: usize = entry.shape.iter().product();
            let start = base + entry.offset as usize;
            let raw = bytes
                .get(start..start + 8 * n)
                .ok_or_else(|| decode(start, &format!("truncated payload for {name}")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| decode(start, &e.to_string()))?;
            tensors.insert(name, t);
        }
        Ok(Self {
            kind: index.kind,
            version: index.version,
            frozen: index.frozen,
            config_hash: index.config_hash,
            parent_hash: index.parent_hash,
            corpus_hash: index.corpus_hash,
            meta: index.meta,
            tensors,
        })
    }

    /// SHA-256 of the serialized file.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Tensors stored under `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn put_section<'a>(
        &mut self,
        prefix: &str,
        tensors: impl IntoIterator<Item = (&'a String, &'a Tensor)>,
    ) {
        for (n, t) in tensors {
            self.tensors.insert(format!("{prefix}{n}"), t.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("vc", "abc");
        c.parent_hash = Some("parent".into());
        c.meta = serde_json::json!({"epoch": 3});
        c.tensors
            .insert("a.w".into(), Tensor::matrix(2, 2, vec![1.0, -2.5, 3.0, 1e-300]).unwrap());
        c.tensors.insert("a.b".into(), Tensor::row(vec![0.5, f64::MIN_POSITIVE]));
        c
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn truncated_payload_names_offset() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 4];
        match Checkpoint::from_bytes(cut, Path::new("x.ckpt")) {
            Err(Error::Decode { offset, .. }) => assert!(offset > 8),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOPE0000", Path::new("x")),
            Err(Error::Decode { offset: 0, .. })
        ));
    }
}
