//! Panorama synthesis by recursive, caption-conditioned outpainting, and
//! observation-replacement augmentation for navigation trajectories.
//!
//! The spherical math in [`geometry`] is generic over the float type; the
//! image pipeline works in `f64` through the aliases defined here.

pub mod augment;
pub mod backend;
pub mod canvas;
pub mod captions;
pub mod engine;
pub mod geometry;
pub mod scalar;

pub use scalar::Scalar;

pub type SphericalDirection = geometry::SphericalDirection<f64>;
pub type ViewSpec = geometry::ViewSpec<f64>;
pub type ViewGrid = geometry::ViewGrid<f64>;
pub type ViewPixel = geometry::ViewPixel<f64>;

pub type SphericalDirectionF32 = geometry::SphericalDirection<f32>;
pub type ViewSpecF32 = geometry::ViewSpec<f32>;
pub type ViewGridF32 = geometry::ViewGrid<f32>;

pub use geometry::ViewIndex;
