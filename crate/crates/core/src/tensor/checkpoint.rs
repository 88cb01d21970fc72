//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `SYMFCKPT` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | config hash (`u64`, first 8 bytes of SHA-256 of the config text) |
//! | 4 + n | config text length (`u32`) and UTF-8 TOML |
//! | 4 + m | manifest length (`u32`) and UTF-8 manifest |
//! | 8 · k | every array as `f64`, in manifest order |
//!
//! Manifest lines are either `name<TAB>d1,d2,...` for an array or
//! `@key<TAB>value` for metadata. Optimizer moments are stored as arrays
//! named `adam.m:<param>` / `adam.v:<param>` with step counts in
//! `@adam.step:<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::{AdamW, Moments};
use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SYMFCKPT";
pub const VERSION: u32 = 1;

/// First eight bytes of the SHA-256 digest of `text`, read little-endian.
pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            ..Self::default()
        }
    }

    pub fn config_hash(&self) -> u64 {
        config_hash(&self.config)
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.arrays.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn add_params(&mut self, store: &ParamStore) {
        for (_, name, value) in store.iter() {
            self.push(name, value.clone());
        }
    }

    /// Model parameters, i.e. every array that is not optimizer state.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.arrays
            .iter()
            .filter(|(n, _)| !n.contains(':'))
            .map(|(n, t)| (n.as_str(), t))
    }

    /// Parameters whose name starts with `prefix`, with the prefix removed.
    pub fn params_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> {
        self.params()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn add_optimizer(&mut self, opt: &AdamW, store: &ParamStore) {
        for (id, name, _) in store.iter() {
            if let Some(st) = opt.moments(id) {
                self.push(
                    format!("adam.m:{name}"),
                    Tensor::from_parts(vec![st.m.len()], st.m.clone()),
                );
                self.push(
                    format!("adam.v:{name}"),
                    Tensor::from_parts(vec![st.v.len()], st.v.clone()),
                );
                self.set_meta(&format!("adam.step:{name}"), st.step);
            }
        }
    }

    pub fn restore_optimizer(&self, opt: &mut AdamW, store: &ParamStore) -> Result<()> {
        for (id, name, _) in store.iter() {
            let Some(step) = self.meta(&format!("adam.step:{name}")) else {
                continue;
            };
            let step = step
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad optimizer step for {name}")))?;
            let m = self.get(&format!("adam.m:{name}"));
            let v = self.get(&format!("adam.v:{name}"));
            let (Some(m), Some(v)) = (m, v) else {
                return Err(Error::Checkpoint(format!("missing optimizer moments for {name}")));
            };
            opt.set_moments(
                id,
                Moments {
                    step,
                    m: m.data().to_vec(),
                    v: v.data().to_vec(),
                },
            );
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            manifest.push_str(&format!("@{k}\t{v}\n"));
        }
        for (name, t) in &self.arrays {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("{name}\t{}\n", dims.join(",")));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash().to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hash = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let config = r.string()?;
        if config_hash(&config) != hash {
            return Err(Error::Checkpoint(
                "config hash does not match embedded config".into(),
            ));
        }
        let manifest = r.string()?;
        let mut ckpt = Checkpoint::new(config);
        for line in manifest.lines() {
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::Checkpoint(format!("bad manifest line {line:?}")))?;
            if let Some(key) = key.strip_prefix('@') {
                ckpt.meta.insert(key.to_string(), value.to_string());
                continue;
            }
            let shape = value
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape in manifest line {line:?}")))?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("array {key}: {e}")))?;
            ckpt.arrays.push((key.to_string(), t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last array",
                bytes.len() - r.pos
            )));
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("header text is not UTF-8".into()))
    }
}
