//! Run manifests: the resolved flag set, seeds and sha256 digests of every
//! file a command read or wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

pub const MANIFEST_SUFFIX: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Command line after config expansion.
    pub argv: Vec<String>,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_manifest(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(MANIFEST_SUFFIX))
}

/// Checks `path` against the first manifest in its directory or the two
/// above it that lists it as an output.
pub fn verify_digest(path: &Path, sha: &str) -> Result<()> {
    let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
    for dir in abs.ancestors().skip(1).take(3) {
        let Ok(entries) = fs::read_dir(dir) else {
            continue;
        };
        let mut manifests: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_manifest(p) && p != &abs)
            .collect();
        manifests.sort();
        for m in manifests {
            let Ok(run) = RunManifest::load(&m) else {
                continue;
            };
            let Ok(rel) = abs.strip_prefix(dir) else {
                continue;
            };
            let rel = rel.to_string_lossy().replace('\\', "/");
            if let Some(d) = run.outputs.iter().find(|d| d.path == rel) {
                if d.sha256 != sha {
                    return Err(HarnessError::DigestMismatch {
                        path: path.to_path_buf(),
                        manifest: m,
                        expected: d.sha256.clone(),
                        found: sha.to_string(),
                    }
                    .into());
                }
                return Ok(());
            }
        }
    }
    Ok(())
}

/// Book-keeping for one command invocation.
pub struct Run {
    pub command: String,
    pub out_dir: PathBuf,
    pub manifest_name: String,
    pub argv: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    start: Instant,
}

impl Run {
    pub fn new(
        command: &str,
        out_dir: &Path,
        manifest_name: String,
        argv: Vec<String>,
    ) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            manifest_name,
            argv,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Reads an input file, verifying it against upstream manifests.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        if !path.is_file() {
            return Err(HarnessError::MissingInput(path.to_path_buf()).into());
        }
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let sha = sha256_hex(&bytes);
        verify_digest(path, &sha)?;
        let p = path.to_string_lossy().into_owned();
        if !self.inputs.iter().any(|d| d.path == p) {
            self.inputs.push(FileDigest {
                path: p,
                sha256: sha,
                bytes: bytes.len() as u64,
            });
        }
        Ok(bytes)
    }

    pub fn read_input_string(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read_input(path)?;
        String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Writes `out_dir/rel` and records its digest.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record(rel, bytes);
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Records a file some other routine wrote under `out_dir`.
    pub fn record_output(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = fs::read(&p).with_context(|| format!("reading back {}", p.display()))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        let d = FileDigest {
            path: rel.replace('\\', "/"),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        };
        self.outputs.retain(|o| o.path != d.path);
        self.outputs.push(d);
    }

    /// Writes the manifest; call once every output is in place.
    pub fn finish<T: Serialize>(self, flags: &T) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: self.argv,
            flags: serde_json::to_value(flags)?,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        let p = self.out_dir.join(&self.manifest_name);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(manifest)
    }
}
