//! The image-generation boundary.
//!
//! [`GenerationBackend`] is implemented by [`procedural::ProceduralBackend`]
//! (offline, deterministic) and [`http::HttpBackend`] (the JSON wire protocol
//! in [`wire`]). [`mock::MockServer`] serves that protocol in-process on top
//! of any backend.

use std::sync::{Arc, Condvar, Mutex};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod mock;
pub mod procedural;
pub mod wire;

pub use http::{HttpBackend, HttpConfig, KnownRegionTolerance, RetryPolicy};
pub use procedural::ProceduralBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Generate,
    Outpaint,
    Caption,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("service error {status} ({code}): {message}")]
    Service { status: u16, code: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend does not support {0:?}")]
    Unsupported(Capability),
}

impl BackendError {
    /// Transport-level failures that a later retry might fix.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

/// An image generation service.
///
/// `generate` must return exactly `width x height`; `outpaint` must return an
/// image the size of its input and should keep pixels where `mask` is 0.
/// Mask polarity: 255 = generate here, 0 = keep.
pub trait GenerationBackend: Send + Sync {
    /// Name and version, recorded in provenance.
    fn identity(&self) -> String;

    fn capabilities(&self) -> Vec<Capability>;

    fn generate(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError>;

    fn outpaint(&self, image: &RgbImage, mask: &GrayImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError>;

    fn caption(&self, image: &RgbImage) -> Result<String, BackendError>;

    fn supports(&self, capability: Capability) -> bool {
        self.capabilities().contains(&capability)
    }
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for Arc<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn capabilities(&self) -> Vec<Capability> {
        (**self).capabilities()
    }

    fn generate(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError> {
        (**self).generate(prompt, seed, width, height)
    }

    fn outpaint(&self, image: &RgbImage, mask: &GrayImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        (**self).outpaint(image, mask, prompt, seed)
    }

    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        (**self).caption(image)
    }
}

pub(crate) fn check_mask(image: &RgbImage, mask: &GrayImage) -> Result<(), BackendError> {
    if image.dimensions() != mask.dimensions() {
        return Err(BackendError::InvalidRequest(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(BackendError::InvalidRequest("empty image".into()));
    }
    Ok(())
}

/// Counting semaphore bounding concurrent backend requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut used = self.used.lock().expect("in-flight lock poisoned");
        while *used >= self.max {
            used = self.freed.wait(used).expect("in-flight lock poisoned");
        }
        *used += 1;
        InFlightPermit { limit: self }
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().expect("in-flight lock poisoned")
    }
}

pub struct InFlightPermit<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut used = self.limit.used.lock().expect("in-flight lock poisoned");
        *used -= 1;
        self.limit.freed.notify_one();
    }
}

/// Wraps a backend so that at most `max` calls run at once.
pub struct Throttled<B> {
    inner: B,
    limit: InFlightLimit,
}

impl<B: GenerationBackend> Throttled<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self {
            inner,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    pub fn limit(&self) -> &InFlightLimit {
        &self.limit
    }
}

impl<B: GenerationBackend> GenerationBackend for Throttled<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn capabilities(&self) -> Vec<Capability> {
        self.inner.capabilities()
    }

    fn generate(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError> {
        let _permit = self.limit.acquire();
        self.inner.generate(prompt, seed, width, height)
    }

    fn outpaint(&self, image: &RgbImage, mask: &GrayImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        let _permit = self.limit.acquire();
        self.inner.outpaint(image, mask, prompt, seed)
    }

    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        let _permit = self.limit.acquire();
        self.inner.caption(image)
    }
}
