use crate::error::{io_err, CliError};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const INDEX_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// Output directory of one command run.
pub struct OutDir {
    root: PathBuf,
    inputs: BTreeMap<String, InputRef>,
}

#[derive(Debug, Clone, Serialize)]
struct InputRef {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Index<'a> {
    command: &'a str,
    version: &'a str,
    inputs: &'a BTreeMap<String, InputRef>,
    files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn pretty_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records an input file (with digest) or directory in the index.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = if path.is_file() { Some(sha256_file(path)?) } else { None };
        self.inputs.insert(
            name.to_string(),
            InputRef {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, pretty_json(value)?).map_err(io_err(&p))
    }

    pub fn write_config<T: Serialize>(&self, value: &T) -> Result<(), CliError> {
        self.write_json(CONFIG_FILE, value)
    }

    /// Writes the `manifest.json` index of every file under the directory.
    pub fn finish(&self, command: &str) -> Result<(), CliError> {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::Io {
                path: self.root.display().to_string(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            if rel == Path::new(INDEX_FILE) {
                continue;
            }
            let bytes = entry.metadata().map_err(|e| CliError::Io {
                path: entry.path().display().to_string(),
                source: e.into(),
            })?;
            files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len(),
                sha256: sha256_file(entry.path())?,
            });
        }
        self.write_json(
            INDEX_FILE,
            &Index {
                command,
                version: env!("CARGO_PKG_VERSION"),
                inputs: &self.inputs,
                files,
            },
        )
    }
}

/// Directory arguments resolve to the named file inside them.
pub fn file_or_in_dir(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}
