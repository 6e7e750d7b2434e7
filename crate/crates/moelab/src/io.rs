//! Artifact persistence helpers: atomic writes, hashing, JSON/JSONL.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex-encoded SHA-256 of a byte string, truncated to 16 characters. Used
/// to stamp artifacts with their configuration and model provenance.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(16);
    for b in digest.iter().take(8) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of a serializable value via its canonical JSON bytes.
pub fn hash_of<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(short_hash(&bytes))
}

/// Write bytes atomically: write a temp file in the target directory, then
/// rename over the final path. An interrupted run never leaves a truncated
/// artifact at the final location.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp.{}", std::process::id()));
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp_path)
            .map_err(|e| Error::io(tmp_path.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(tmp_path.display().to_string(), e))?;
        f.sync_all()
            .map_err(|e| Error::io(tmp_path.display().to_string(), e))?;
    }
    fs::rename(&tmp_path, path).map_err(|e| Error::io(display, e))?;
    Ok(())
}

/// Serialize a value as pretty JSON (trailing newline) and write atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Read and deserialize a JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}
