//! JSON messages exchanged with a generation service.
//!
//! Images travel as base64 (standard alphabet, padded) PNG. Masks are 8-bit
//! grayscale PNG where 255 marks pixels to generate.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BackendError, Capability};

pub const DEFAULT_STEPS: u32 = 50;
pub const DEFAULT_GUIDANCE: f64 = 7.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutpaintRequest {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
    pub model_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub capabilities: Vec<Capability>,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_image_px: Option<u32>,
}

fn encode_png(img: DynamicImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    STANDARD.encode(buf.into_inner())
}

fn decode_png(data: &str, what: &str) -> Result<DynamicImage, BackendError> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| BackendError::ProtocolViolation(format!("{what}: bad base64: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| BackendError::ProtocolViolation(format!("{what}: bad PNG: {e}")))
}

pub fn encode_rgb(img: &RgbImage) -> String {
    encode_png(DynamicImage::ImageRgb8(img.clone()))
}

pub fn encode_gray(img: &GrayImage) -> String {
    encode_png(DynamicImage::ImageLuma8(img.clone()))
}

/// Decodes an RGB PNG. Other colour types are converted.
pub fn decode_rgb(data: &str) -> Result<RgbImage, BackendError> {
    Ok(decode_png(data, "image")?.into_rgb8())
}

pub fn decode_gray(data: &str) -> Result<GrayImage, BackendError> {
    Ok(decode_png(data, "mask")?.into_luma8())
}
