use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn hash_entry(path: &Path) -> std::io::Result<FileHash> {
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub preset: Option<String>,
    pub config_file: Option<FileHash>,
    /// Every setting after defaults, preset, file and flags were applied.
    pub config: Value,
    /// Which layer supplied each setting.
    #[serde(default)]
    pub origins: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn start(command: &str, preset: Option<&str>, config_file: Option<&Path>, config: Value, seed: u64, threads: usize) -> CliResult<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            preset: preset.map(str::to_string),
            config_file: config_file.map(hash_entry).transpose()?,
            config,
            origins: BTreeMap::new(),
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(hash_entry(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(hash_entry(path)?);
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.finished = now();
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// A fresh, timestamped directory under `root` that never reuses an existing name.
pub fn fresh_dir(root: &Path, stem: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(root)?;
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let base = format!("{stem}-{stamp}");
    let mut n = 1;
    loop {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e.into()),
        }
    }
}
