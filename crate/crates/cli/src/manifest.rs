//! Run manifest: what was run, with which settings, and what it produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const FILE_NAME: &str = "manifest.txt";
pub const ARTIFACT_FORMAT: u32 = 1;

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: Option<String>,
    /// Settings as `key = value` lines.
    pub settings: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != FILE_NAME) {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            seed: cfg.seed.0,
            config_hash: Some(cfg.hash()?),
            settings: cfg.canonical(),
        })
    }

    /// Writes `manifest.txt` into `dir`, listing every other file there with
    /// its SHA-256.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        files_under(dir, &mut files)?;
        files.sort();
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "mrp_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "artifact_format = {ARTIFACT_FORMAT}");
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(h) = &self.config_hash {
            let _ = writeln!(s, "config_sha256 = {h}");
        }
        let _ = writeln!(s, "\n[settings]\n{}", self.settings.trim_end());
        let _ = writeln!(s, "\n[outputs]");
        for f in &files {
            let bytes = std::fs::read(f).map_err(|e| CliError::io(f, e))?;
            let rel = f.strip_prefix(dir).unwrap_or(f);
            let _ = writeln!(s, "{}  {}", sha256_hex(&bytes), rel.display());
        }
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, s).map_err(|e| CliError::io(&path, e))
    }
}
