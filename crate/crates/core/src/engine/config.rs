use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::ViewGrid;

/// Parameters of one panorama traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutpaintConfig {
    /// Rightward rotation per ring step, as a fraction of `hfov`.
    pub p_r: f64,
    /// Upward rotation, as a fraction of `vfov`.
    pub p_u: f64,
    /// Downward rotation, as a fraction of `vfov`.
    pub p_d: f64,
    pub seed: u64,
    /// Interpolated coverage at which an extracted pixel counts as known.
    pub coverage_threshold: f64,
    /// Feather width in canvas pixels.
    pub blend_width_px: f64,
    pub view_grid: ViewGrid,
    pub min_known_fraction: f64,
    /// Canvas width; the height is half of it.
    pub canvas_width: u32,
}

impl Default for OutpaintConfig {
    fn default() -> Self {
        Self {
            p_r: 0.5,
            p_u: 0.5,
            p_d: 0.5,
            seed: 0,
            coverage_threshold: 0.5,
            blend_width_px: 32.0,
            view_grid: ViewGrid::default(),
            min_known_fraction: 0.25,
            canvas_width: 2048,
        }
    }
}

impl OutpaintConfig {
    pub fn canvas_height(&self) -> u32 {
        self.canvas_width / 2
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        for (name, p) in [("p_r", self.p_r), ("p_u", self.p_u), ("p_d", self.p_d)] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("{name} = {p} is outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return bad(format!("coverage_threshold = {} is outside [0, 1]", self.coverage_threshold));
        }
        if !(self.blend_width_px >= 0.0 && self.blend_width_px.is_finite()) {
            return bad(format!("blend_width_px = {} must be finite and >= 0", self.blend_width_px));
        }
        if !(0.0..1.0).contains(&self.min_known_fraction) {
            return bad(format!("min_known_fraction = {} is outside [0, 1)", self.min_known_fraction));
        }
        if self.canvas_width < 4 || !self.canvas_width.is_multiple_of(2) {
            return bad(format!("canvas_width = {} must be even and >= 4", self.canvas_width));
        }
        let up = self.p_u * self.view_grid.vfov_deg;
        let down = self.p_d * self.view_grid.vfov_deg;
        if up >= 90.0 || down >= 90.0 {
            return bad(format!("vertical steps of {up} and {down} degrees must stay below 90"));
        }
        self.view_grid
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Backend seed for step `index`, independent of every other step.
    pub fn step_seed(&self, index: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(b"panosynth-step\0");
        h.update(self.seed.to_le_bytes());
        h.update((index as u64).to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}
