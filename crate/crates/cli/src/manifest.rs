//! Content-hashed manifests written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use neuedit::hash::{sha256_hex, ContentHasher};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the subcommand, enough to replay the run.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    /// Hash over the sorted `outputs` list.
    pub output_hash: String,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, config: &crate::config::RunConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            args,
            config: serde_json::to_value(config)?,
            config_hash: config.content_hash()?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_hash: String::new(),
        })
    }

    pub fn add_input_file(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    pub fn add_input_tree(&mut self, dir: &Path) -> Result<()> {
        for entry in hash_tree(dir, &[])? {
            self.inputs.push(FileEntry {
                path: format!("{}/{}", dir.display(), entry.path),
                sha256: entry.sha256,
            });
        }
        Ok(())
    }

    /// Record outputs and their combined hash.
    pub fn set_outputs(&mut self, outputs: Vec<FileEntry>) {
        self.output_hash = combined_hash(&outputs);
        self.outputs = outputs;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Every regular file under `dir` with paths relative to it, sorted, minus
/// the names in `skip`.
pub fn hash_tree(dir: &Path, skip: &[&str]) -> Result<Vec<FileEntry>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
            CliError::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walkdir yields children of its root")
            .to_string_lossy()
            .replace('\\', "/");
        if skip.contains(&rel.as_str()) {
            continue;
        }
        out.push(FileEntry {
            sha256: hash_file(entry.path())?,
            path: rel,
        });
    }
    Ok(out)
}

pub fn combined_hash(entries: &[FileEntry]) -> String {
    let mut h = ContentHasher::new();
    for e in entries {
        h.str(&e.path).str(&e.sha256);
    }
    h.finish()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Raw little-endian `f64` blob.
pub fn write_f64_blob(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_f64_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(neuedit::Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        }
        .into());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// `dir/name` with `name` appended to the file stem, e.g. `base.ckpt` →
/// `base.loss.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
