//! Binary checkpoint format for parameter stores.
//!
//! Layout: an 8-byte magic, a little-endian u64 giving the length of a JSON
//! manifest, the manifest itself, then raw little-endian f64 payloads in
//! manifest order. Each entry stores its value tensor, followed by the two
//! Adam moment tensors when the parameter is trainable. The manifest carries
//! an opaque `meta` JSON value so callers can attach model configuration,
//! epoch counters, and similar bookkeeping without extending the format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFSCKPT\x01";

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    trainable: bool,
    steps: u64,
}

/// Writes `store` and an opaque `meta` value to `path`.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let entries: Vec<Entry> = store
        .iter()
        .map(|(_, p)| Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f64".to_string(),
            trainable: p.trainable,
            steps: p.steps,
        })
        .collect();
    let manifest = Manifest {
        meta: meta.clone(),
        entries,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::invalid(format!("manifest: {e}")))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_u64::<LittleEndian>(manifest_bytes.len() as u64)
        .map_err(io)?;
    w.write_all(&manifest_bytes).map_err(io)?;
    for (_, p) in store.iter() {
        let mut tensors = vec![&p.value];
        if p.trainable {
            tensors.push(&p.m);
            tensors.push(&p.v);
        }
        for t in tensors {
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads a checkpoint, returning the parameter store and the `meta` value it
/// was saved with.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for checkpoint magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let manifest_len = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::format(path, "missing manifest length"))? as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::format(path, "manifest truncated"))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::format(path, format!("manifest is not valid JSON: {e}")))?;

    let mut store = ParamStore::new();
    for entry in &manifest.entries {
        if entry.dtype != "f64" {
            return Err(Error::format(
                path,
                format!("parameter '{}' has unsupported dtype '{}'", entry.name, entry.dtype),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        if numel == 0 {
            return Err(Error::format(
                path,
                format!("parameter '{}' has an empty shape", entry.name),
            ));
        }
        let mut read_tensor = |what: &str| -> Result<Tensor> {
            let mut data = vec![0.0f64; numel];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(|_| {
                Error::format(
                    path,
                    format!("payload truncated reading {what} of '{}'", entry.name),
                )
            })?;
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::format(
                    path,
                    format!("non-finite values in {what} of '{}'", entry.name),
                ));
            }
            Ok(Tensor::from_vec(&entry.shape, data))
        };
        let value = read_tensor("value")?;
        let id = store.add(&entry.name, value, entry.trainable);
        if entry.trainable {
            let m = read_tensor("first moment")?;
            let v = read_tensor("second moment")?;
            let p = store.get_mut(id);
            p.m = m;
            p.v = v;
        }
        store.get_mut(id).steps = entry.steps;
    }

    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => return Err(Error::io(path, e)),
    }
    Ok((store, manifest.meta))
}
