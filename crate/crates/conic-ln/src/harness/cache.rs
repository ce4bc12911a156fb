use super::config::hex;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Write through a temporary file in the same directory and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    stage: String,
    key: String,
    checksum: String,
    payload: BTreeMap<String, String>,
}

fn checksum(payload: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in payload {
        h.update((k.len() as u64).to_le_bytes());
        h.update(k.as_bytes());
        h.update((v.len() as u64).to_le_bytes());
        h.update(v.as_bytes());
    }
    hex(&h.finalize())
}

/// Content-addressed store of named text blobs, one JSON file per stage key.
#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

#[derive(Debug)]
pub enum Lookup {
    Hit(BTreeMap<String, String>),
    Miss,
    /// The entry existed but could not be trusted; the reason is attached.
    Corrupt(String),
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache { dir: dir.into() }
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{stage}-{key}.json"))
    }

    pub fn get(&self, stage: &str, key: &str) -> Lookup {
        let path = self.path(stage, key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Lookup::Miss,
            Err(e) => return Lookup::Corrupt(format!("{}: {e}", path.display())),
        };
        match serde_json::from_str::<Entry>(&text) {
            Ok(e) if e.stage == stage && e.key == key && e.checksum == checksum(&e.payload) => Lookup::Hit(e.payload),
            Ok(_) => Lookup::Corrupt(format!("{}: checksum or key mismatch", path.display())),
            Err(e) => Lookup::Corrupt(format!("{}: {e}", path.display())),
        }
    }

    pub fn put(&self, stage: &str, key: &str, payload: &BTreeMap<String, String>) -> Result<()> {
        let entry = Entry {
            stage: stage.to_string(),
            key: key.to_string(),
            checksum: checksum(payload),
            payload: payload.clone(),
        };
        let text = serde_json::to_string(&entry).expect("entry serializes");
        write_atomic(&self.path(stage, key), text.as_bytes())
    }
}
