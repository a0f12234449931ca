use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, AugmentError, Result};
use crate::engine::{discretize, PanoEnvironment};
use crate::geometry::VIEW_COUNT;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryLine {
    pub scan: String,
    pub viewpoint: String,
    pub env_dir: PathBuf,
}

/// Generated environments available for each original viewpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvRegistry {
    entries: BTreeMap<(String, String), Vec<PathBuf>>,
}

impl EnvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variant unless the same directory is already listed.
    pub fn insert(&mut self, scan: &str, viewpoint: &str, env_dir: PathBuf) {
        let v = self.entries.entry((scan.to_string(), viewpoint.to_string())).or_default();
        if !v.contains(&env_dir) {
            v.push(env_dir);
        }
    }

    pub fn variants(&self, scan: &str, viewpoint: &str) -> &[PathBuf] {
        self.entries
            .get(&(scan.to_string(), viewpoint.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn viewpoint_count(&self) -> usize {
        self.entries.len()
    }

    /// Total environment directories across all viewpoints.
    pub fn env_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Number of discretized view images the registered environments hold.
    pub fn view_image_count(&self) -> usize {
        self.env_count() * VIEW_COUNT
    }

    pub fn scans(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.keys().map(|(s, _)| s.clone()).collect();
        s.dedup();
        s
    }

    pub fn lines(&self) -> impl Iterator<Item = RegistryLine> + '_ {
        self.entries.iter().flat_map(|((scan, vp), dirs)| {
            dirs.iter().map(move |d| RegistryLine {
                scan: scan.clone(),
                viewpoint: vp.clone(),
                env_dir: d.clone(),
            })
        })
    }

    /// Parses a registry file. Relative `env_dir` values are resolved
    /// against the file's directory. Directories are not inspected.
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let file = File::open(path).map_err(io_err(path))?;
        let mut reg = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: RegistryLine = serde_json::from_str(&line).map_err(|e| AugmentError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let dir = if l.env_dir.is_absolute() { l.env_dir } else { base.join(l.env_dir) };
            reg.insert(&l.scan, &l.viewpoint, dir);
        }
        Ok(reg)
    }

    /// [`EnvRegistry::read`], then requires every directory to hold a
    /// finished environment.
    pub fn load(path: &Path) -> Result<Self> {
        let reg = Self::read(path)?;
        for l in reg.lines() {
            if !PanoEnvironment::is_complete(&l.env_dir) {
                return Err(AugmentError::InvalidEnvironment {
                    path: l.env_dir,
                    message: "not a finished environment".into(),
                });
            }
        }
        Ok(reg)
    }

    /// Loads every environment and checks that all 36 views can be cut
    /// from its panorama.
    pub fn verify(&self) -> Result<()> {
        for l in self.lines() {
            let invalid = |message: String| AugmentError::InvalidEnvironment {
                path: l.env_dir.clone(),
                message,
            };
            let env = PanoEnvironment::load(&l.env_dir).map_err(|e| invalid(e.to_string()))?;
            discretize(&env).map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            for l in self.lines() {
                writeln!(out, "{}", serde_json::to_string(&l).expect("registry lines serialize")).map_err(io_err(&tmp))?;
            }
            out.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}
