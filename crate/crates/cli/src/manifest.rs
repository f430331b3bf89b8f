//! Run manifests.
//!
//! A manifest id is a SHA-256 over the command, the resolved config, the
//! seed, the input file digests and the crate versions. It is known before
//! any work starts, so every output can carry it: CSV files get a
//! `# manifest <id>` first line and JSON files a `fingerprint` field. Wall
//! time is recorded in the manifest file but is not part of the id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    /// Command-specific facts worth keeping with the outputs.
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("costate-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("costate-core".to_string(), costate_core::VERSION.to_string()),
    ])
}

/// Collects outputs of one command and writes its manifest at the end.
pub struct RunRecorder {
    manifest: Manifest,
    out_dir: PathBuf,
    started: Instant,
}

impl RunRecorder {
    pub fn new(command: &str, config_text: &str, seed: u64, inputs: &[&Path], out_dir: &Path) -> Result<Self, CliError> {
        let mut digests = Vec::new();
        for path in inputs {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            digests.push(FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let config_sha256 = sha256_hex(config_text.as_bytes());
        let versions = versions();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(config_sha256.as_bytes());
        h.update(seed.to_le_bytes());
        for d in &digests {
            h.update(d.sha256.as_bytes());
        }
        for (k, v) in &versions {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self {
            manifest: Manifest {
                id: hex::encode(h.finalize()),
                command: command.to_string(),
                config_sha256,
                seed,
                versions,
                inputs: digests,
                outputs: Vec::new(),
                started_unix_s,
                wall_time_s: 0.0,
                notes: BTreeMap::new(),
            },
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.notes.insert(key.to_string(), value);
    }

    fn record(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let digest = FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        };
        self.manifest.outputs.retain(|d| d.path != digest.path);
        self.manifest.outputs.push(digest);
        Ok(())
    }

    /// Writes a CSV output headed by the manifest comment line.
    pub fn write_csv<F, E>(&mut self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), E>,
        E: std::fmt::Display,
    {
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# manifest {}", self.manifest.id).map_err(|e| CliError::io(&path, e))?;
        body(&mut w).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        drop(w);
        self.record(&path)?;
        Ok(path)
    }

    /// Writes a text output verbatim (JSON files carry the id themselves).
    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.record(&path)?;
        Ok(path)
    }

    /// Writes `<command>.manifest.json` and returns its path.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let name = format!("{}.manifest.json", self.manifest.command.replace(' ', "-"));
        let path = self.out_dir.join(name);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_depends_on_config_and_seed_only() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunRecorder::new("screen", "x = 1", 3, &[], dir.path()).unwrap();
        let b = RunRecorder::new("screen", "x = 1", 3, &[], dir.path()).unwrap();
        let c = RunRecorder::new("screen", "x = 1", 4, &[], dir.path()).unwrap();
        let d = RunRecorder::new("screen", "x = 2", 3, &[], dir.path()).unwrap();
        assert_eq!(a.id(), b.id());
        assert_ne!(a.id(), c.id());
        assert_ne!(a.id(), d.id());
    }

    #[test]
    fn outputs_carry_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunRecorder::new("analyze", "", 0, &[], dir.path()).unwrap();
        let id = r.id().to_string();
        let p = r
            .write_csv("out.csv", |w| -> std::io::Result<()> { writeln!(w, "a,b\n1,2") })
            .unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# manifest {id}"));
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(r.finish().unwrap()).unwrap()).unwrap();
        assert_eq!(m.id, id);
        assert_eq!(m.outputs.len(), 1);
    }
}
