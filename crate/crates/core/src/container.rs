//! Self-describing binary bundle: 8-byte magic, little-endian `u64` header
//! length, UTF-8 JSON header, then raw little-endian `f64` array data.
//!
//! The header's `arrays` entry lists `{name, shape, offset}` with offsets in
//! bytes from the start of the data section.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

const MAX_HEADER_BYTES: u64 = 64 << 20;

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `header` (a JSON object) plus `arrays` to `path`.
///
/// The file is written beside the target and renamed into place.
pub fn write(path: &Path, magic: &[u8; 8], mut header: Value, arrays: &[(&str, &Tensor)]) -> Result<()> {
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(arrays.len());
    for (name, t) in arrays {
        manifest.push(ArrayEntry {
            name: (*name).to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 8 * t.len() as u64;
    }
    let object = header
        .as_object_mut()
        .ok_or_else(|| Error::InvalidUse("container header must be a JSON object".into()))?;
    object.insert("arrays".into(), serde_json::to_value(&manifest)?);
    let header_bytes = serde_json::to_vec(&header)?;

    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(magic)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, t) in arrays {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a container, returning its header (without `arrays`) and arrays in file order.
pub fn read(path: &Path, magic: &[u8; 8]) -> Result<(Value, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut found = [0u8; 8];
    r.read_exact(&mut found)
        .map_err(|_| corrupt(path, "file too short for magic bytes"))?;
    if &found != magic {
        return Err(corrupt(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| corrupt(path, "truncated header length"))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > MAX_HEADER_BYTES {
        return Err(corrupt(path, format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| corrupt(path, "truncated header"))?;
    let mut header: Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| corrupt(path, format!("header is not valid JSON: {e}")))?;
    let manifest: Vec<ArrayEntry> = header
        .as_object_mut()
        .and_then(|o| o.remove("arrays"))
        .ok_or_else(|| corrupt(path, "header has no array manifest"))
        .and_then(|v| {
            serde_json::from_value(v).map_err(|e| corrupt(path, format!("bad array manifest: {e}")))
        })?;

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut arrays = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * count;
        if entry.shape.is_empty() || count == 0 || end > data.len() {
            return Err(corrupt(
                path,
                format!("array '{}' with shape {:?} does not fit the data section", entry.name, entry.shape),
            ));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        arrays.push((entry.name, Tensor::new(entry.shape, values)?));
    }
    Ok((header, arrays))
}
