//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "LCVT" | u32 version = 1 | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 rank | u32 dims[rank] | f32 payload
//! u32 metadata length | metadata (UTF-8 "key=value\n" lines, sorted by key)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"LCVT";
pub const VERSION: u32 = 1;

/// Sorted string key/value pairs stored after the tensors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata(BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("checkpoint metadata lacks {key:?}")))
    }

    pub fn parse_required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::config(format!("checkpoint metadata {key:?} is malformed")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("metadata line without '=': {line:?}"))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Metadata(map))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Decoded checkpoint contents, independent of any model structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<TensorRecord>,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: Metadata) -> Self {
        let tensors = store
            .iter()
            .map(|(_, p)| TensorRecord {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint { tensors, metadata }
    }

    /// Parameters in file order, widened to `f64`, all unfrozen.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let data = t.values.iter().map(|&v| v as f64).collect();
            store.add(t.name.clone(), Tensor::new(&t.dims, data)?)?;
        }
        Ok(store)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = self.metadata.render();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        let mut seen = std::collections::HashSet::new();
        for i in 0..count {
            let name_at = r.pos as u64;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::format(name_at + 4, format!("tensor {i} name is not UTF-8")))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::format(name_at, format!("duplicate tensor name {name:?}")));
            }
            let rank_at = r.pos as u64;
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::format(rank_at, format!("tensor {name:?} has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let at = r.pos as u64;
                let d = r.u32("dimension")? as usize;
                if d == 0 {
                    return Err(Error::format(at, format!("tensor {name:?} has a zero dimension")));
                }
                dims.push(d);
            }
            let n: usize = dims.iter().product();
            let payload = r.take(n * 4, "tensor payload")?;
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(TensorRecord { name, dims, values });
        }
        let meta_at = r.pos as u64;
        let len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(len, "metadata")?)
            .map_err(|_| Error::format(meta_at + 4, "metadata is not UTF-8"))?;
        let metadata = Metadata::parse(text).map_err(|m| Error::format(meta_at + 4, m))?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes after metadata", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint { tensors, metadata })
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store
            .add(
                "a.weight",
                Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 1e-8, 5.0, -7.25]).unwrap(),
            )
            .unwrap();
        store
            .add("a.bias", Tensor::new(&[3], vec![0.0, 1.0, 2.0]).unwrap())
            .unwrap();
        let mut meta = Metadata::new();
        meta.set("stage", "contrastive");
        meta.set("epoch", 3);
        Checkpoint::from_store(&store, meta)
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"LCVT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(&bytes[16..24], b"a.weight");
    }

    #[test]
    fn decode_encode_is_identity() {
        let bytes = sample().encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn every_truncation_rejected() {
        let bytes = sample().encode();
        for cut in 0..bytes.len() {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bytes = sample().encode();
        bytes[4] = 2;
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = sample().encode();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).is_err());
    }
}
