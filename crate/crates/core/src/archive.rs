//! Binary tensor archive with a JSON metadata sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "NTA1" | u32 entry count | entries...
//! entry: u32 name_len | name utf-8 | u8 dtype (1 = f32) | u8 ndim |
//!        u32 dims[ndim] | f32 data[prod(dims)]
//! ```
//!
//! Entries are written in name-sorted order, so identical contents always
//! produce identical bytes. The sidecar lives at `<path>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NTA1";
const DTYPE_F32: u8 = 1;

/// Named collection of f32 tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, ArrayD<f32>>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f32>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayD<f32>> {
        self.get(name)
            .ok_or_else(|| Error::invalid_state(format!("archive entry `{name}` missing")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// FNV-1a hash over names, shapes and data bytes in sorted order.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, arr) in &self.entries {
            h.update(name.as_bytes());
            for &d in arr.shape() {
                h.update(&(d as u32).to_le_bytes());
            }
            let std = arr.as_standard_layout();
            for v in std.iter() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, arr) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(DTYPE_F32);
            buf.push(arr.ndim() as u8);
            for &d in arr.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let std = arr.as_standard_layout();
            for v in std.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    /// Writes atomically (temp file + rename).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = tmp_path(path);
        let mut file =
            fs::File::create(&tmp).map_err(|e| Error::io(tmp.clone(), e))?;
        file.write_all(&self.encode())
            .map_err(|e| Error::io(tmp.clone(), e))?;
        file.sync_all().map_err(|e| Error::io(tmp.clone(), e))?;
        drop(file);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|detail| Error::Parse {
            path: path.to_path_buf(),
            detail,
        })
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> std::result::Result<&[u8], String> {
            if *pos + n > bytes.len() {
                return Err("truncated archive".into());
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err("bad magic; not a tensor archive".into());
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len =
                u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| "entry name is not utf-8".to_string())?;
            let dtype = take(&mut pos, 1)?[0];
            if dtype != DTYPE_F32 {
                return Err(format!("unsupported dtype {dtype}"));
            }
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(
                    u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize,
                );
            }
            let n: usize = dims.iter().product();
            let raw = take(&mut pos, n * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| format!("bad tensor shape: {e}"))?;
            entries.insert(name, arr);
        }
        if pos != bytes.len() {
            return Err("trailing bytes after last entry".into());
        }
        Ok(TensorArchive { entries })
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Conventional sidecar path: `<archive>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Serializes metadata to the archive's JSON sidecar (atomic write).
pub fn write_sidecar<M: Serialize>(archive_path: &Path, meta: &M) -> Result<()> {
    let path = sidecar_path(archive_path);
    let tmp = tmp_path(&path);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::invalid_state(format!("metadata serialization failed: {e}")))?;
    fs::write(&tmp, json.as_bytes()).map_err(|e| Error::io(tmp.clone(), e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar<M: DeserializeOwned>(archive_path: &Path) -> Result<M> {
    let path = sidecar_path(archive_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.clone(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        detail: e.to_string(),
    })
}

/// Incremental FNV-1a (64-bit).
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a of a byte string.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.update(bytes);
    h.finish()
}
