use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, sample_replacements, AugmentConfig, AugmentError, EnvRegistry, Result, SamplingMode, TrajectorySample};
use crate::engine::pool::run_jobs;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub traj_id: String,
    /// One character per path position, `1` where replaced.
    pub bitmask: String,
    pub env_paths: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanStats {
    pub trajectories: usize,
    pub viewpoints: usize,
    pub replaced: usize,
    pub skipped: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub config_hash: String,
    pub ratio_m: f64,
    pub mode: SamplingMode,
    /// The scans replacement was confined to, if any.
    pub subset_scans: Option<BTreeSet<String>>,
    pub trajectories: usize,
    pub viewpoints: usize,
    pub replaced: usize,
    pub skipped: usize,
    pub global_ratio: f64,
    pub per_scan: BTreeMap<String, ScanStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    pub manifest: Vec<ManifestRecord>,
    pub stats: AugmentStats,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Reads line-delimited trajectories. Records without a `traj_id` are
/// identified by their zero-based position among the records.
pub fn read_trajectories(path: &Path) -> Result<Vec<(String, TrajectorySample)>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrajectorySample = serde_json::from_str(&line).map_err(|e| AugmentError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = t.traj_id.clone().unwrap_or_else(|| out.len().to_string());
        t.validate(&id)?;
        out.push((id, t));
    }
    Ok(out)
}

const CHUNK: usize = 4096;

/// Samples every trajectory and aggregates the statistics. The manifest
/// follows input order regardless of `workers`.
pub fn augment_dataset(
    trajectories: &[(String, TrajectorySample)],
    config: &AugmentConfig,
    registry: &EnvRegistry,
    workers: usize,
) -> Result<AugmentOutput> {
    config.validate()?;
    let chunks: Vec<&[(String, TrajectorySample)]> = trajectories.chunks(CHUNK).collect();
    let sampled = run_jobs(chunks, workers.max(1), |_, chunk| {
        chunk
            .iter()
            .map(|(id, t)| sample_replacements(t, id, config, registry))
            .collect::<Vec<_>>()
    });

    let mut manifest = Vec::with_capacity(trajectories.len());
    let mut per_scan: BTreeMap<String, ScanStats> = BTreeMap::new();
    for ((id, t), r) in trajectories.iter().zip(sampled.into_iter().flatten()) {
        let s = per_scan.entry(t.scan.clone()).or_default();
        s.trajectories += 1;
        s.viewpoints += t.path.len();
        s.replaced += r.replaced();
        s.skipped += r.skipped;
        manifest.push(ManifestRecord {
            traj_id: id.clone(),
            bitmask: r.bitmask_string(),
            env_paths: r.env_paths.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
        });
    }
    for s in per_scan.values_mut() {
        s.ratio = ratio(s.replaced, s.viewpoints);
    }
    let viewpoints = per_scan.values().map(|s| s.viewpoints).sum();
    let replaced = per_scan.values().map(|s| s.replaced).sum();
    let stats = AugmentStats {
        config_hash: config.hash(),
        ratio_m: config.ratio_m,
        mode: config.mode,
        subset_scans: config.scan_subset.clone(),
        trajectories: trajectories.len(),
        viewpoints,
        replaced,
        skipped: per_scan.values().map(|s| s.skipped).sum(),
        global_ratio: ratio(replaced, viewpoints),
        per_scan,
    };
    Ok(AugmentOutput { manifest, stats })
}

fn write_atomic(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        fill(&mut out).map_err(io_err(&tmp))?;
        out.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl AugmentOutput {
    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.manifest {
            out.extend(serde_json::to_vec(r).expect("manifest records serialize"));
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, manifest_path: &Path, stats_path: &Path) -> Result<()> {
        let bytes = self.manifest_bytes();
        write_atomic(manifest_path, |w| w.write_all(&bytes))?;
        let stats = serde_json::to_string_pretty(&self.stats).expect("stats serialize");
        write_atomic(stats_path, |w| writeln!(w, "{stats}"))
    }
}

/// Reads `trajectories_path` completely, then writes the manifest and
/// stats. Nothing is written if the input cannot be read, and the outputs
/// may not overwrite the input.
pub fn augment_files(
    trajectories_path: &Path,
    registry: &EnvRegistry,
    config: &AugmentConfig,
    workers: usize,
    manifest_path: &Path,
    stats_path: &Path,
) -> Result<AugmentOutput> {
    let same = |p: &Path| match (fs::canonicalize(p), fs::canonicalize(trajectories_path)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same(manifest_path) || same(stats_path) {
        return Err(AugmentError::InvalidConfig("outputs would overwrite the trajectory file".into()));
    }
    let trajectories = read_trajectories(trajectories_path)?;
    let out = augment_dataset(&trajectories, config, registry, workers)?;
    out.write(manifest_path, stats_path)?;
    Ok(out)
}
