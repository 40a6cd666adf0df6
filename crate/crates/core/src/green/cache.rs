//! On-disk cache of Green tables: a flat little-endian `f64` file plus a JSON
//! sidecar describing its layout. Loading never changes results; a table read
//! from disk is bit-identical to a freshly computed one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "INTERLACE_LAB_CACHE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Sidecar {
    format_version: u32,
    dim: usize,
    extent: u32,
    tol: f64,
    len: usize,
    layout: String,
}

pub(crate) fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn stem(dim: usize, extent: u32, tol: f64) -> String {
    format!("green-d{dim}-m{extent}-tol{tol:e}")
}

fn sidecar(dim: usize, extent: u32, tol: f64, len: usize) -> Sidecar {
    Sidecar {
        format_version: FORMAT_VERSION,
        dim,
        extent,
        tol,
        len,
        layout: "absolute coordinates, row-major, last axis fastest".into(),
    }
}

pub(crate) fn load(dir: &Path, dim: usize, extent: u32, tol: f64, len: usize) -> Result<Option<Vec<f64>>> {
    let base = dir.join(stem(dim, extent, tol));
    let (bin, json) = (base.with_extension("bin"), base.with_extension("json"));
    if !bin.exists() || !json.exists() {
        return Ok(None);
    }
    let meta: Sidecar =
        serde_json::from_slice(&fs::read(&json)?).map_err(|e| Error::Cache(format!("{}: {e}", json.display())))?;
    if meta != sidecar(dim, extent, tol, len) {
        return Err(Error::Cache(format!("{} does not describe the requested table", json.display())));
    }
    let bytes = fs::read(&bin)?;
    if bytes.len() != len * 8 {
        return Err(Error::Cache(format!("{} has {} bytes, expected {}", bin.display(), bytes.len(), len * 8)));
    }
    let values =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes"))).collect();
    Ok(Some(values))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn store(dir: &Path, dim: usize, extent: u32, tol: f64, values: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let base = dir.join(stem(dim, extent, tol));
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&base.with_extension("bin"), &bytes)?;
    let meta =
        serde_json::to_vec_pretty(&sidecar(dim, extent, tol, values.len())).map_err(|e| Error::Cache(e.to_string()))?;
    write_atomic(&base.with_extension("json"), &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![1.516_386_059_151_978, 0.1 + 0.2, f64::MIN_POSITIVE];
        store(dir.path(), 3, 1, 1e-10, &values).unwrap();
        let back = load(dir.path(), 3, 1, 1e-10, 3).unwrap().unwrap();
        assert_eq!(
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(load(dir.path(), 3, 2, 1e-10, 3).unwrap().is_none());
        assert!(load(dir.path(), 3, 1, 1e-10, 4).is_err());
    }
}
