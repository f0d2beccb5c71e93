//! Binary container of named `f32` arrays with a metadata block and a
//! configuration text, used for checkpoints and synthesized Mel output.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"PFAC"
//! u32    format version
//! u32    config length, then UTF-8 config text
//! u32    metadata entry count, then per entry: u32 len + key, u32 len + value
//! u32    array count, then per array:
//!          u32 len + name, u32 ndim, ndim × u64 dims, prod(dims) × f32
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ndmath::{Adam, Array, ParamStore};

use super::Model;

pub const MAGIC: &[u8; 4] = b"PFAC";
pub const FORMAT_VERSION: u32 = 1;
const ADAM_FIRST: &str = "optimizer.m/";
const ADAM_SECOND: &str = "optimizer.v/";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayContainer {
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Array<f32>)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated container at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl ArrayContainer {
    pub fn get(&self, name: &str) -> Option<&Array<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend((self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend((self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            put_str(&mut out, name);
            out.extend((a.shape().len() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a pitchflow array container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let config = r.string()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            meta.insert(k, r.string()?);
        }
        let n = r.u32()?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            arrays.push((name, Array::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, meta, arrays })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Model parameters, configuration, training step and optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<(String, Array<f32>)>,
    pub optimizer: Option<(u64, Vec<Array<f32>>, Vec<Array<f32>>)>,
}

impl Checkpoint {
    pub fn capture(config: &Config, store: &ParamStore<f32>, step: u64, seed: u64, adam: Option<&Adam<f32>>) -> Self {
        Self {
            config: config.clone(),
            step,
            seed,
            params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            optimizer: adam.map(|a| {
                let (m, v) = a.moments();
                (a.steps_taken(), m.to_vec(), v.to_vec())
            }),
        }
    }

    pub fn to_container(&self) -> ArrayContainer {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), "checkpoint".into());
        meta.insert("variant".into(), self.config.model.variant.name().into());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("seed".into(), self.seed.to_string());
        let mut arrays = self.params.clone();
        if let Some((steps, m, v)) = &self.optimizer {
            meta.insert("optimizer_steps".into(), steps.to_string());
            for ((name, _), (m, v)) in self.params.iter().zip(m.iter().zip(v)) {
                arrays.push((format!("{ADAM_FIRST}{name}"), m.clone()));
                arrays.push((format!("{ADAM_SECOND}{name}"), v.clone()));
            }
        }
        ArrayContainer {
            config: self.config.to_toml(),
            meta,
            arrays,
        }
    }

    pub fn from_container(c: ArrayContainer) -> Result<Self> {
        if c.meta.get("kind").map(String::as_str) != Some("checkpoint") {
            return Err(Error::Checkpoint("container is not a model checkpoint".into()));
        }
        let num = |key: &str| -> Result<u64> {
            c.meta
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad `{key}`: {e}")))
        };
        let (step, seed) = (num("step")?, num("seed")?);
        let config = Config::parse(&c.config)?;
        let mut params = Vec::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, a) in c.arrays.iter().cloned() {
            if let Some(p) = name.strip_prefix(ADAM_FIRST) {
                first.insert(p.to_string(), a);
            } else if let Some(p) = name.strip_prefix(ADAM_SECOND) {
                second.insert(p.to_string(), a);
            } else {
                params.push((name, a));
            }
        }
        let optimizer = match c.meta.get("optimizer_steps") {
            Some(_) => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (name, _) in &params {
                    let missing = || Error::Checkpoint(format!("optimizer state missing for `{name}`"));
                    m.push(first.remove(name).ok_or_else(missing)?);
                    v.push(second.remove(name).ok_or_else(missing)?);
                }
                Some((num("optimizer_steps")?, m, v))
            }
            None => None,
        };
        Ok(Self {
            config,
            step,
            seed,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(ArrayContainer::load(path)?)
    }

    /// Rebuilds the model from the stored configuration and copies every
    /// parameter in, checking names and shapes.
    pub fn restore(&self) -> Result<(Model, ParamStore<f32>)> {
        let mut store = ParamStore::new();
        let model = Model::new(&self.config.model, &mut store, &mut crate::rng_from_seed(self.seed))?;
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} arrays, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if store.value(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: shape {:?} in checkpoint, {:?} in model",
                    value.shape(),
                    store.value(id).shape()
                )));
            }
            store.set_value(id, value.clone());
        }
        Ok((model, store))
    }

    /// Optimizer with the saved moments, if any were stored.
    pub fn restore_optimizer(&self, store: &ParamStore<f32>) -> Result<Option<Adam<f32>>> {
        let Some((steps, m, v)) = &self.optimizer else { return Ok(None) };
        let mut adam = Adam::new(store);
        adam.restore(*steps, m.clone(), v.clone())?;
        Ok(Some(adam))
    }
}
