//! Parameter checkpoints: a JSON manifest naming each parameter plus one
//! raw little-endian f32 blob per parameter. Each blob starts with a u64
//! dimension count followed by one u64 extent per dimension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::error::{NumError, Result};
use super::params::{Param, ParamStore};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    params: Vec<ManifestEntry>,
}

fn blob_name(index: usize, name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{index:04}_{safe}.bin")
}

pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (i, p) in store.iter().enumerate() {
        let file = blob_name(i, &p.name);
        let mut buf = Vec::with_capacity(8 * (1 + p.shape.len()) + 4 * p.data.len());
        buf.extend_from_slice(&(p.shape.len() as u64).to_le_bytes());
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(dir.join(&file))?.write_all(&buf)?;
        entries.push(ManifestEntry {
            name: p.name.clone(),
            file,
            shape: p.shape.clone(),
        });
    }
    let manifest = Manifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        params: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let json = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(NumError::InvalidArgument(format!(
            "unsupported checkpoint schema version {}",
            manifest.schema_version
        )));
    }
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let mut buf = Vec::new();
        fs::File::open(dir.join(&e.file))?.read_to_end(&mut buf)?;
        let param = decode_blob(&e.name, &buf)?;
        if param.shape != e.shape {
            return Err(NumError::ShapeMismatch {
                node: 0,
                expected: e.shape.clone(),
                got: param.shape,
            });
        }
        store.add(&e.name, &param.shape, param.data);
    }
    Ok(store)
}

fn decode_blob(name: &str, buf: &[u8]) -> Result<Param> {
    let err = || NumError::InvalidArgument(format!("truncated blob for {name}"));
    if buf.len() < 8 {
        return Err(err());
    }
    let ndim = u64::from_le_bytes(buf[0..8].try_into().unwrap()) as usize;
    let header = 8 * (1 + ndim);
    if buf.len() < header {
        return Err(err());
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 8 * (1 + i);
        shape.push(u64::from_le_bytes(buf[off..off + 8].try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    if buf.len() != header + 4 * n {
        return Err(err());
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = header + 4 * i;
        data.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()));
    }
    Ok(Param {
        name: name.to_string(),
        shape,
        data,
    })
}
