//! Flat binary container of named arrays with a JSON header.
//!
//! Layout: magic `WMK1`, little-endian u64 header length, the JSON header,
//! then the raw little-endian array payload. Values round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, TensorData};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WMK1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in elements.
    offset: usize,
}

/// A parsed container: its kind tag, free-form metadata, and named arrays
/// in file order.
pub struct Container<T> {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, TensorData<T>)>,
}

pub fn save_container<T: Real>(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    arrays: &[(String, TensorData<T>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0usize;
    for (name, td) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: td.shape.clone(),
            offset,
        });
        offset += td.data.len();
    }
    let header = Header {
        kind: kind.to_string(),
        dtype: T::DTYPE.to_string(),
        meta,
        arrays: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut payload = Vec::with_capacity(offset * T::BYTES);
    for (_, td) in arrays {
        for &v in &td.data {
            v.write_le(&mut payload);
        }
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    file.write_all(&payload).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_container<T: Real>(path: &Path) -> Result<Container<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a WMK1 container", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Checkpoint(format!("{}: truncated header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: dtype is {}, expected {}",
            path.display(),
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = &bytes[12 + header_len..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset * T::BYTES;
        let end = start + count * T::BYTES;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{}: array '{}' runs past the payload",
                path.display(),
                entry.name
            )));
        }
        let data: Vec<T> = payload[start..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        arrays.push((
            entry.name.clone(),
            TensorData::new(entry.shape.clone(), data)
                .map_err(|_| Error::Checkpoint(format!("array '{}' shape mismatch", entry.name)))?,
        ));
    }
    Ok(Container {
        kind: header.kind,
        meta: header.meta,
        arrays,
    })
}
