//! Content-addressed result cache.
//!
//! Each entry is one file `<kind>/<key>.json` whose first line records the
//! key and the SHA-256 of the payload that follows. A payload whose digest
//! no longer matches is reported as tampered rather than silently rebuilt.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "muxsource-cache-v1";

/// SHA-256 (hex) of the canonical JSON form of `value`.
pub fn content_key<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Write `bytes` next to `path` and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.json"))
    }

    pub fn store<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<PathBuf> {
        let payload = serde_json::to_vec(value)?;
        let digest = hex::encode(Sha256::digest(&payload));
        let mut bytes = format!("{MAGIC} {key} {digest}\n").into_bytes();
        bytes.extend_from_slice(&payload);
        let path = self.path(kind, key);
        write_atomic(&path, &bytes).map_err(|e| Error::Cache(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// `Ok(None)` on a miss; an error when the entry exists but fails verification.
    pub fn load<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Result<Option<T>> {
        let path = self.path(kind, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::Cache(format!("cannot read {}: {e}", path.display()))),
        };
        let bad = |why: &str| Error::Cache(format!("{}: {why}", path.display()));
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("unreadable header"))?;
        let payload = &bytes[split + 1..];
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 || fields[0] != MAGIC {
            return Err(bad("unrecognised header"));
        }
        if fields[1] != key {
            return Err(bad("entry key does not match its file name"));
        }
        if hex::encode(Sha256::digest(payload)) != fields[2] {
            return Err(bad("payload digest mismatch (entry was modified)"));
        }
        serde_json::from_slice(payload).map(Some).map_err(|e| bad(&format!("corrupt payload: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let key = content_key(&("a", 1)).unwrap();
        assert!(cache.load::<Vec<u32>>("t", &key).unwrap().is_none());
        let path = cache.store("t", &key, &vec![1u32, 2, 3]).unwrap();
        assert_eq!(cache.load::<Vec<u32>>("t", &key).unwrap(), Some(vec![1, 2, 3]));
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("[1,2,3]", "[1,2,4]");
        fs::write(&path, text).unwrap();
        assert!(matches!(cache.load::<Vec<u32>>("t", &key), Err(Error::Cache(_))));
    }
}
