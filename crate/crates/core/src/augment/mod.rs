//! Observation replacement for navigation trajectories: an environment
//! registry, a seeded per-trajectory sampler and the dataset driver.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod dataset;
mod registry;

pub use dataset::{
    augment_dataset, augment_files, read_trajectories, AugmentOutput, AugmentStats, ManifestRecord, ScanStats,
};
pub use registry::{EnvRegistry, RegistryLine};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trajectory {id}: {message}")]
    InvalidTrajectory { id: String, message: String },
    #[error("environment {path}: {message}")]
    InvalidEnvironment { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Falls back to the record's position in its file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traj_id: Option<String>,
    pub instruction: String,
    pub scan: String,
    pub path: Vec<String>,
    pub split: Split,
}

impl TrajectorySample {
    pub fn validate(&self, id: &str) -> Result<()> {
        let bad = |message: &str| AugmentError::InvalidTrajectory {
            id: id.to_string(),
            message: message.to_string(),
        };
        if self.path.is_empty() {
            return Err(bad("empty path"));
        }
        if self.path.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("repeated consecutive viewpoint"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Bernoulli,
    ExactCount,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantChoice {
    #[default]
    First,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub ratio_m: f64,
    pub mode: SamplingMode,
    pub scan_subset: Option<BTreeSet<String>>,
    pub seed: u64,
    pub variant_choice: VariantChoice,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ratio_m: 0.3,
            mode: SamplingMode::Bernoulli,
            scan_subset: None,
            seed: 0,
            variant_choice: VariantChoice::First,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio_m) {
            return Err(AugmentError::InvalidConfig(format!("ratio_m {} is outside [0, 1]", self.ratio_m)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// RNG for one named stream under `seed`.
fn derived_rng(domain: &str, seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d);
    ChaCha8Rng::from_seed(s)
}

/// Per-viewpoint decision for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub bitmask: Vec<bool>,
    /// Environment for each replaced position, in path order.
    pub env_paths: Vec<PathBuf>,
    /// Path positions with no registered environment.
    pub skipped: usize,
    pub in_subset: bool,
}

impl Replacement {
    pub fn replaced(&self) -> usize {
        self.bitmask.iter().filter(|b| **b).count()
    }

    pub fn bitmask_string(&self) -> String {
        self.bitmask.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

/// Number of replacements exact-count mode makes on a path of `len`.
pub fn exact_count(ratio_m: f64, len: usize) -> usize {
    // products such as 0.29 * 100 land just below the integer
    ((ratio_m * len as f64) + 1e-9).floor() as usize
}

/// Chooses which viewpoints of `traj` to replace. `traj_id` keys the RNG.
pub fn sample_replacements(
    traj: &TrajectorySample,
    traj_id: &str,
    config: &AugmentConfig,
    registry: &EnvRegistry,
) -> Replacement {
    let n = traj.path.len();
    let mut out = Replacement {
        bitmask: vec![false; n],
        env_paths: Vec::new(),
        skipped: 0,
        in_subset: true,
    };
    if config.scan_subset.as_ref().is_some_and(|s| !s.contains(&traj.scan)) {
        out.in_subset = false;
        return out;
    }
    let variants: Vec<&[PathBuf]> = traj.path.iter().map(|vp| registry.variants(&traj.scan, vp)).collect();
    out.skipped = variants.iter().filter(|v| v.is_empty()).count();

    let mut rng = derived_rng("panosynth-augment", config.seed, traj_id);
    match config.mode {
        SamplingMode::Bernoulli => {
            for (i, v) in variants.iter().enumerate() {
                let hit = rng.random::<f64>() < config.ratio_m;
                out.bitmask[i] = hit && !v.is_empty();
            }
        }
        SamplingMode::ExactCount => {
            let eligible: Vec<usize> = (0..n).filter(|&i| !variants[i].is_empty()).collect();
            let k = exact_count(config.ratio_m, n).min(eligible.len());
            for i in eligible.into_iter().choose_multiple(&mut rng, k) {
                out.bitmask[i] = true;
            }
        }
    }
    for (i, v) in variants.iter().enumerate() {
        if out.bitmask[i] {
            let pick = match config.variant_choice {
                VariantChoice::First => &v[0],
                VariantChoice::UniformRandom => v.choose(&mut rng).expect("eligible positions have variants"),
            };
            out.env_paths.push(pick.clone());
        }
    }
    out
}

/// A uniformly random `n`-subset of the distinct scans, fixed by `seed`.
pub fn select_scan_subset(all_scans: &[String], n: usize, seed: u64) -> Result<BTreeSet<String>> {
    let distinct: BTreeSet<&String> = all_scans.iter().collect();
    if n > distinct.len() {
        return Err(AugmentError::InvalidConfig(format!(
            "cannot select {n} scans out of {}",
            distinct.len()
        )));
    }
    let mut rng = derived_rng("panosynth-scans", seed, "");
    Ok(distinct.into_iter().cloned().choose_multiple(&mut rng, n).into_iter().collect())
}
