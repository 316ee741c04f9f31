use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SUBDIRS: [&str; 4] = ["manifests", "patches", "checkpoints", "reports"];

/// Run directory held under an exclusive lock file for its lifetime.
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
    produced: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("run directory {} is locked by another invocation ({} exists)", root.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        let dir = Self {
            root,
            lock,
            produced: Vec::new(),
        };
        for sub in SUBDIRS {
            let p = dir.root.join(sub);
            fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.root.join(sub).join(name)
    }

    /// Records a produced file for `files.json`.
    pub fn produced(&mut self, path: PathBuf) {
        self.produced.push(path);
    }

    /// Writes `files.json` listing every recorded file relative to the root.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.produced.sort();
        let mut entries = Vec::new();
        for p in &self.produced {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            entries.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes).as_slice()),
            });
        }
        let out = self.root.join("files.json");
        fs::write(&out, serde_json::to_string_pretty(&entries)? + "\n").with_context(|| format!("writing {}", out.display()))?;
        Ok(out)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
