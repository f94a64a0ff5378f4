//! `.stn` tensor files and parameter directories.
//!
//! Layout of one file, all integers little-endian:
//!
//! ```text
//! "STNS" | rank: u32 | rank × dim: u32 | prod(dims) × f32, row-major
//! ```
//!
//! A parameter directory holds one `.stn` per tensor plus `manifest.json`
//! naming each tensor's role.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Role};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STNS";
const MAX_RANK: u32 = 16;

pub fn encode_stn<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let b = bytes
        .get(at..at + 4)
        .ok_or_else(|| format_err(bytes.len().max(at), format!("truncated {what}")))?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode_stn<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"STNS\"", &bytes[..4])));
    }
    let rank = read_u32(bytes, 4, "rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(format_err(4, format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: usize = 1;
    for i in 0..rank as usize {
        let at = 8 + 4 * i;
        let d = read_u32(bytes, at, "dims")?;
        if d == 0 {
            return Err(format_err(at, format!("dim {i} is zero")));
        }
        count = count
            .checked_mul(d as usize)
            .ok_or_else(|| format_err(at, "element count overflows"))?;
        shape.push(d as usize);
    }
    let start = 8 + 4 * rank as usize;
    let need = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| format_err(start, "element count overflows"))?;
    if bytes.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated data: shape {shape:?} needs {need} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(format_err(need, format!("{} trailing bytes", bytes.len() - need)));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| T::cast(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_stn<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_stn(t))?;
    Ok(())
}

pub fn read_stn<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_stn(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    role: Role,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    tensors: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn save_params<T: Scalar>(dir: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(store.len());
    for (name, e) in store.iter() {
        let file = format!("{name}.stn");
        write_stn(dir.join(&file), &e.value)?;
        tensors.push(ManifestEntry {
            name: name.to_string(),
            file,
            role: e.role,
            shape: e.value.shape().to_vec(),
        });
    }
    let m = Manifest {
        format: "stn".into(),
        tensors,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

pub fn load_params<T: Scalar>(dir: impl AsRef<Path>) -> Result<ParamStore<T>> {
    let dir = dir.as_ref();
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut store = ParamStore::new();
    for e in m.tensors {
        let t: Tensor<T> = read_stn(dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Config(format!(
                "{}: manifest shape {:?} but file holds {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        store.insert(e.name, e.role, t)?;
    }
    Ok(store)
}

/// Copies every tensor of `loaded` into `target`, requiring identical names
/// and shapes.
pub fn assign_params<T: Scalar>(target: &mut ParamStore<T>, loaded: &ParamStore<T>) -> Result<()> {
    let want: Vec<&str> = target.names().collect();
    let got: Vec<&str> = loaded.names().collect();
    if want != got {
        return Err(Error::Config(format!(
            "parameter set mismatch: model has {} tensors, directory has {}",
            want.len(),
            got.len()
        )));
    }
    for (name, e) in loaded.iter() {
        target.set(name, e.value.clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_f64(vec![1, 2], &[1.0, -2.0]).unwrap();
        let b = encode_stn(&t);
        assert_eq!(&b[..4], b"STNS");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
        assert_eq!(decode_stn::<f32>(&b).unwrap(), t);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f32>::zeros(vec![3]).unwrap();
        let b = encode_stn(&t);
        match decode_stn::<f32>(&b[..b.len() - 2]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, b.len() - 2),
            other => panic!("unexpected {other:?}"),
        }
        match decode_stn::<f32>(&b[..6]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_stn::<f32>(b"XXXX"), Err(Error::Format { offset: 0, .. })));
    }
}
