//! Provenance headers written at the top of every artifact.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("hategraph ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Provenance {
    pub tool: String,
    pub stage: String,
    pub config_sha256: String,
    pub seeds: Vec<(String, u64)>,
}

impl Provenance {
    /// `settings` must already be in a canonical order.
    pub fn new(stage: &str, settings: &[(String, String)], seeds: &[(&str, u64)]) -> Self {
        let mut hasher = Sha256::new();
        for (k, v) in settings {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Provenance {
            tool: TOOL_VERSION.to_owned(),
            stage: stage.to_owned(),
            config_sha256,
            seeds: seeds.iter().map(|&(k, v)| (k.to_owned(), v)).collect(),
        }
    }

    pub fn header(&self) -> String {
        let seeds = if self.seeds.is_empty() {
            "none".to_owned()
        } else {
            self.seeds
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "# {} stage={}\n# config_sha256={}\n# seeds: {}\n",
            self.tool, self.stage, self.config_sha256, seeds
        )
    }
}

/// Opens `path` for writing (creating parent directories) and writes the
/// provenance header.
pub fn create_artifact(path: &Path, prov: &Provenance) -> Result<BufWriter<File>> {
    let mut w = create_plain(path)?;
    w.write_all(prov.header().as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(w)
}

/// SHA-256 of a file, or of every file under a directory keyed by its
/// relative path.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
            hasher.update([0]);
        }
    } else {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        hasher.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
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

pub fn create_plain(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}
