//! Recursive outpainting: plan a traversal of the view grid, then grow a
//! panorama one view at a time from a single seed image.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::canvas::{CanvasError, EquirectCanvas};
use crate::ViewIndex;

mod config;
pub mod env;
mod generate;
mod plan;
pub mod pool;

pub use config::OutpaintConfig;
pub use env::{discretize, discretize_canvas, PanoEnvironment, Provenance, StepRecord};
pub use generate::{
    generate_panorama, generate_panorama_observed, generate_stitched, regenerate, StepObserver, StepSnapshot,
    ViewCaptions,
};
pub use plan::{plan_traversal, StepKind, TraversalStep};

/// Canvas state at the moment a traversal was abandoned.
#[derive(Clone)]
pub struct PartialCanvas {
    pub canvas: EquirectCanvas,
    /// Coverage fraction over (-60, 60) degrees.
    pub band_coverage: f64,
}

impl fmt::Debug for PartialCanvas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartialCanvas")
            .field("width", &self.canvas.width())
            .field("height", &self.canvas.height())
            .field("band_coverage", &self.band_coverage)
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("step {step} would start from {known_fraction:.3} known pixels, below the required {required}")]
    InsufficientOverlap {
        step: usize,
        known_fraction: f64,
        required: f64,
    },
    #[error("no caption for view {0}")]
    MissingCaption(ViewIndex),
    #[error("backend failed at step {step} (band coverage so far {:.3}): {source}", partial.band_coverage)]
    Backend {
        step: usize,
        #[source]
        source: BackendError,
        partial: Box<PartialCanvas>,
    },
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error("view {view} is only {valid_fraction:.4} covered")]
    IncompleteView { view: ViewIndex, valid_fraction: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}
