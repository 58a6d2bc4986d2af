//! Output plumbing: provenance stamps, content hashes and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL: &str = "peloton";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What every artifact records about how it was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            seed,
            config_hash,
        }
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), self.tool.into()),
            ("version".into(), self.version.into()),
            ("seed".into(), self.seed.to_string()),
            ("config_hash".into(), self.config_hash.clone()),
        ]
    }

    pub fn map(&self) -> BTreeMap<String, String> {
        self.pairs().into_iter().collect()
    }

    /// `#key=value` header lines for CSV outputs.
    pub fn comment_lines(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("#{k}={v}\n")).collect()
    }
}

/// Writes via a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub race_seed: Option<u64>,
}

/// Files written by one invocation, in write order.
#[derive(Debug, Serialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub command: &'static str,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(provenance: Provenance, command: &'static str) -> Self {
        Self {
            provenance,
            command,
            files: Vec::new(),
        }
    }

    /// Writes `bytes` under `dir` and records the file.
    pub fn add(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.add_race(dir, name, bytes, None)
    }

    pub fn add_race(
        &mut self,
        dir: &Path,
        name: &str,
        bytes: &[u8],
        race: Option<(&str, u64)>,
    ) -> Result<(), CliError> {
        write_atomic(&dir.join(name), bytes)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            race_id: race.map(|r| r.0.to_string()),
            race_seed: race.map(|r| r.1),
        });
        Ok(())
    }

    pub fn finish(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
