use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use panosynth_core::augment::{SamplingMode, VariantChoice};
use panosynth_core::backend::{HttpConfig, KnownRegionTolerance, RetryPolicy};
use panosynth_core::engine::OutpaintConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const CONFIG_ENV: &str = "PANOSYNTH_CONFIG";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Procedural,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
    pub steps: u32,
    pub guidance: f64,
    pub max_image_px: u32,
    pub drift_band_px: u32,
    pub drift_band_max_delta: u8,
    pub drift_interior_max_delta: u8,
    pub reject_drift: bool,
}

impl Default for BackendSection {
    fn default() -> Self {
        let http = HttpConfig::new("");
        Self {
            kind: BackendKind::Procedural,
            url: None,
            timeout_s: http.timeout.as_secs_f64(),
            max_retries: http.retry.max_retries,
            retry_base_ms: http.retry.base_delay.as_millis() as u64,
            max_in_flight: http.max_in_flight,
            steps: http.steps,
            guidance: http.guidance,
            max_image_px: http.max_image_px,
            drift_band_px: http.tolerance.band_px,
            drift_band_max_delta: http.tolerance.band_max_delta,
            drift_interior_max_delta: http.tolerance.interior_max_delta,
            reject_drift: http.tolerance.reject,
        }
    }
}

impl BackendSection {
    pub fn http_config(&self, url: String) -> HttpConfig {
        let defaults = RetryPolicy::default();
        HttpConfig {
            timeout: Duration::from_secs_f64(self.timeout_s),
            retry: RetryPolicy {
                max_retries: self.max_retries,
                base_delay: Duration::from_millis(self.retry_base_ms),
                max_delay: defaults.max_delay,
            },
            max_in_flight: self.max_in_flight,
            steps: self.steps,
            guidance: self.guidance,
            tolerance: KnownRegionTolerance {
                band_px: self.drift_band_px,
                band_max_delta: self.drift_band_max_delta,
                interior_max_delta: self.drift_interior_max_delta,
                reject: self.reject_drift,
            },
            max_image_px: self.max_image_px,
            ..HttpConfig::new(url)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub ratio: f64,
    pub mode: SamplingMode,
    pub seed: u64,
    pub variant_choice: VariantChoice,
    pub scans: Option<usize>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            ratio: 0.3,
            mode: SamplingMode::Bernoulli,
            seed: 0,
            variant_choice: VariantChoice::First,
            scans: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub captions: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub workers: usize,
    pub backend: BackendSection,
    pub outpaint: OutpaintConfig,
    pub augment: AugmentSection,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            backend: BackendSection::default(),
            outpaint: OutpaintConfig::default(),
            augment: AugmentSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` if given, otherwise returns the defaults. Relative
    /// paths in the file are resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut config.paths;
        for slot in [
            &mut p.captions,
            &mut p.out_dir,
            &mut p.registry,
            &mut p.trajectories,
            &mut p.manifest,
            &mut p.stats,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(config)
    }
}

/// First of `flag` and `configured`, or a usage error naming the flag.
pub fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| UsageError(format!("--{name} is required (or set it under [paths] in the config)")).into())
}
