//! Blocking HTTP client for a generation service speaking the [`wire`](super::wire) protocol.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use image::{GrayImage, RgbImage};
use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, CaptionRequest, CaptionResponse, ErrorBody, GenerateRequest, Health, ImageResponse, OutpaintRequest};
use super::{check_mask, BackendError, Capability, GenerationBackend, InFlightLimit};
use crate::canvas::distance_transform;

pub const BASE_URL_ENV: &str = "PANOSYNTH_BACKEND_URL";

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(16)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// How far returned pixels outside the mask may move from the request.
///
/// Pixels within `band_px` of the masked region may differ by up to
/// `band_max_delta` per channel; all other known pixels by `interior_max_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownRegionTolerance {
    pub band_px: u32,
    pub band_max_delta: u8,
    pub interior_max_delta: u8,
    /// Fail the call instead of repairing it.
    pub reject: bool,
}

impl Default for KnownRegionTolerance {
    fn default() -> Self {
        Self {
            band_px: 4,
            band_max_delta: 12,
            interior_max_delta: 0,
            reject: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DriftReport {
    pub known: usize,
    pub violations: usize,
    pub max_delta: u8,
}

/// Compares the known pixels of `sent` and `received` against `tol`.
pub fn known_region_drift(sent: &RgbImage, mask: &GrayImage, received: &RgbImage, tol: &KnownRegionTolerance) -> DriftReport {
    let (w, h) = sent.dimensions();
    let unknown: Vec<bool> = mask.pixels().map(|p| p.0[0] != 0).collect();
    let near = if unknown.iter().any(|&u| u) {
        distance_transform(&unknown, w as usize, h as usize)
    } else {
        vec![f64::INFINITY; unknown.len()]
    };
    let band_sq = (tol.band_px as f64).powi(2);
    let mut report = DriftReport::default();
    for (i, (a, b)) in sent.pixels().zip(received.pixels()).enumerate() {
        if unknown[i] {
            continue;
        }
        report.known += 1;
        let delta = (0..3).map(|c| a.0[c].abs_diff(b.0[c])).max().unwrap_or(0);
        report.max_delta = report.max_delta.max(delta);
        let limit = if near[i] <= band_sq {
            tol.band_max_delta
        } else {
            tol.interior_max_delta
        };
        if delta > limit {
            report.violations += 1;
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub steps: u32,
    pub guidance: f64,
    pub tolerance: KnownRegionTolerance,
    /// Largest accepted image side; the service's advertised limit wins if smaller.
    pub max_image_px: u32,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            steps: wire::DEFAULT_STEPS,
            guidance: wire::DEFAULT_GUIDANCE,
            tolerance: KnownRegionTolerance::default(),
            max_image_px: 4096,
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(BASE_URL_ENV).ok().filter(|s| !s.is_empty()).map(Self::new)
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    limit: InFlightLimit,
    health: Health,
    drift_events: AtomicU64,
}

impl HttpBackend {
    /// Queries `/healthz` and returns a client bound to the advertised model.
    pub fn connect(config: HttpConfig) -> Result<Self, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = Self {
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            agent,
            health: Health {
                capabilities: Vec::new(),
                model_id: String::new(),
                max_image_px: None,
            },
            drift_events: AtomicU64::new(0),
        };
        backend.health = backend.call(|agent, url| agent.get(url).call(), "/healthz")?;
        if backend.health.model_id.is_empty() {
            return Err(BackendError::ProtocolViolation("healthz: empty model_id".into()));
        }
        Ok(backend)
    }

    pub fn health(&self) -> &Health {
        &self.health
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Outpaint responses whose known region exceeded the tolerance.
    pub fn drift_events(&self) -> u64 {
        self.drift_events.load(Ordering::Relaxed)
    }

    pub fn max_image_px(&self) -> u32 {
        match self.health.max_image_px {
            Some(m) => m.min(self.config.max_image_px),
            None => self.config.max_image_px,
        }
    }

    fn check_size(&self, w: u32, h: u32) -> Result<(), BackendError> {
        let max = self.max_image_px();
        if w == 0 || h == 0 {
            return Err(BackendError::InvalidRequest(format!("empty image {w}x{h}")));
        }
        if w > max || h > max {
            return Err(BackendError::InvalidRequest(format!("{w}x{h} exceeds the {max}px limit")));
        }
        Ok(())
    }

    fn require(&self, capability: Capability) -> Result<(), BackendError> {
        if self.health.capabilities.contains(&capability) {
            Ok(())
        } else {
            Err(BackendError::Unsupported(capability))
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        self.call(|agent, url| agent.post(url).send_json(body), path)
    }

    fn call<Resp: DeserializeOwned>(
        &self,
        send: impl Fn(&ureq::Agent, &str) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
        path: &str,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.config.base_url, path);
        let attempts = self.config.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.retry.delay(attempt - 1);
                debug!("retrying {path} in {delay:?} after: {last}");
                std::thread::sleep(delay);
            }
            let outcome = {
                let _permit = self.limit.acquire();
                send(&self.agent, &url).and_then(|mut resp| {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_string()?;
                    Ok((status, text))
                })
            };
            let (status, text) = match outcome {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if (200..300).contains(&status) {
                return serde_json::from_str(&text)
                    .map_err(|e| BackendError::ProtocolViolation(format!("{path}: malformed response: {e}")));
            }
            let err = serde_json::from_str::<ErrorBody>(&text).unwrap_or_else(|_| ErrorBody {
                code: "unknown".into(),
                message: text.chars().take(200).collect(),
            });
            if status == 429 || status == 503 {
                last = format!("status {status}: {}", err.message);
                continue;
            }
            return Err(BackendError::Service {
                status,
                code: err.code,
                message: err.message,
            });
        }
        Err(BackendError::Unavailable {
            attempts,
            message: last,
        })
    }
}

impl GenerationBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}", self.health.model_id)
    }

    fn capabilities(&self) -> Vec<Capability> {
        self.health.capabilities.clone()
    }

    fn generate(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError> {
        self.require(Capability::Generate)?;
        self.check_size(width, height)?;
        let req = GenerateRequest {
            prompt: prompt.to_string(),
            seed,
            width,
            height,
            steps: self.config.steps,
            guidance: self.config.guidance,
        };
        let resp: ImageResponse = self.post("/generate", &req)?;
        let img = wire::decode_rgb(&resp.image)?;
        if img.dimensions() != (width, height) {
            return Err(BackendError::ProtocolViolation(format!(
                "generate returned {}x{}, asked for {width}x{height}",
                img.width(),
                img.height()
            )));
        }
        Ok(img)
    }

    fn outpaint(&self, image: &RgbImage, mask: &GrayImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        self.require(Capability::Outpaint)?;
        check_mask(image, mask)?;
        self.check_size(image.width(), image.height())?;
        let req = OutpaintRequest {
            image: wire::encode_rgb(image),
            mask: wire::encode_gray(mask),
            prompt: prompt.to_string(),
            seed,
            steps: self.config.steps,
            guidance: self.config.guidance,
        };
        let resp: ImageResponse = self.post("/outpaint", &req)?;
        let mut out = wire::decode_rgb(&resp.image)?;
        if out.dimensions() != image.dimensions() {
            return Err(BackendError::ProtocolViolation(format!(
                "outpaint returned {}x{}, sent {}x{}",
                out.width(),
                out.height(),
                image.width(),
                image.height()
            )));
        }
        let drift = known_region_drift(image, mask, &out, &self.config.tolerance);
        if drift.violations > 0 {
            self.drift_events.fetch_add(1, Ordering::Relaxed);
            warn!(
                "outpaint changed {} of {} known pixels beyond tolerance (max delta {})",
                drift.violations, drift.known, drift.max_delta
            );
            if self.config.tolerance.reject {
                return Err(BackendError::ProtocolViolation(format!(
                    "{} known pixels drifted by up to {}",
                    drift.violations, drift.max_delta
                )));
            }
        }
        for ((o, i), m) in out.pixels_mut().zip(image.pixels()).zip(mask.pixels()) {
            if m.0[0] == 0 {
                *o = *i;
            }
        }
        Ok(out)
    }

    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        self.require(Capability::Caption)?;
        self.check_size(image.width(), image.height())?;
        let req = CaptionRequest {
            image: wire::encode_rgb(image),
        };
        let resp: CaptionResponse = self.post("/caption", &req)?;
        let text = resp.text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(BackendError::ProtocolViolation("empty caption".into()));
        }
        Ok(text)
    }
}
