//! Run manifests: what a command read, what it wrote, and under which configuration.
//!
//! Manifests chain: an input digest of one run equals an output digest of the run that
//! produced the file.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
    pub started: String,
    pub finished: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a file, or of every file under a directory in sorted path order.
pub fn digest_path(path: &Path) -> Result<FileDigest> {
    let sha256 = if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for f in files {
            if f.file_name().is_some_and(|n| n.to_string_lossy().ends_with("manifest.json")) {
                continue;
            }
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
        }
        hex::encode(h.finalize())
    } else {
        sha256_file(path)?
    };
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hash of the canonical JSON form of a configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config)?;
    Ok(sha256_hex(value.to_string().as_bytes()))
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: Option<u64>) -> Self {
        let now = now_rfc3339();
        RunManifest {
            command: command.to_string(),
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now.clone(),
            finished: now,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest_path(path)?);
        Ok(())
    }

    /// Stamp the finish time and write `manifest.json` into `dir`.
    pub fn write(self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        self.write_file(&path)?;
        Ok(path)
    }

    /// Like [`RunManifest::write`] for commands whose output is a single file. Names should
    /// end in `manifest.json` so directory digests skip them.
    pub fn write_file(mut self, path: &Path) -> Result<()> {
        self.finished = now_rfc3339();
        fs::write(path, serde_json::to_string_pretty(&self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// True if some input of `self` was produced by `upstream`.
    pub fn chains_from(&self, upstream: &RunManifest) -> bool {
        self.inputs
            .iter()
            .any(|i| upstream.outputs.iter().any(|o| o.sha256 == i.sha256))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_hash_is_stable() {
        #[derive(Serialize)]
        struct C {
            a: u32,
            b: &'static str,
        }
        let h1 = config_hash(&C { a: 1, b: "x" }).unwrap();
        assert_eq!(h1, config_hash(&C { a: 1, b: "x" }).unwrap());
        assert_ne!(h1, config_hash(&C { a: 2, b: "x" }).unwrap());
    }

    #[test]
    fn chaining() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("out.jsonl");
        fs::write(&f, "{}\n").unwrap();
        let mut up = RunManifest::start("ingest", "h".into(), None);
        up.output(&f).unwrap();
        let mut down = RunManifest::start("train", "h".into(), Some(1));
        down.input(&f).unwrap();
        assert!(down.chains_from(&up));
        let path = down.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert!(back.chains_from(&up));
    }

    #[test]
    fn directory_digest_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "1").unwrap();
        let before = digest_path(dir.path()).unwrap();
        fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        assert_eq!(digest_path(dir.path()).unwrap().sha256, before.sha256);
    }
}
