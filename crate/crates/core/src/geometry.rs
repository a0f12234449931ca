//! Directions on the unit sphere, the equirectangular pixel mapping and
//! gnomonic (pinhole) projection between a view frustum and the sphere.
//!
//! Conventions used throughout the crate:
//!
//! * heading is measured in degrees clockwise (seen from above) from a fixed
//!   reference, elevation is positive upward;
//! * the camera frame is `x` right, `y` up, `z` forward at heading 0;
//! * equirectangular images put heading 0 at `x = 0` increasing rightward and
//!   elevation +90 at `y = 0`;
//! * continuous pixel coordinates place pixel `(i, j)` at `(i + 0.5, j + 0.5)`;
//!   the image spans `[0, width] x [0, height]`;
//! * cameras never roll.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_degrees, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite angle: heading {heading}, elevation {elevation}")]
    NonFinite { heading: f64, elevation: f64 },
    #[error("elevation {0} outside [-90, 90]")]
    ElevationOutOfRange(f64),
    #[error("field of view {0} must lie strictly between 0 and 180 degrees")]
    FieldOfView(f64),
    #[error("view dimensions must be positive, got {width}x{height}")]
    EmptyView { width: u32, height: u32 },
    #[error("equirectangular canvas must be 2:1, got {width}x{height}")]
    NotTwoToOne { width: u32, height: u32 },
    #[error("pixel ({x}, {y}) outside equirectangular canvas {width}x{height}")]
    PixelOutOfRange { x: f64, y: f64, width: u32, height: u32 },
    #[error("view index out of range: heading {heading}, elevation {elevation}")]
    ViewIndex { heading: i64, elevation: i64 },
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// A pointing direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct SphericalDirection<T> {
    heading_deg: T,
    elevation_deg: T,
}

/// Result of [`SphericalDirection::rotate`]; `clamped` is set when the
/// elevation hit a pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotated<T> {
    pub direction: SphericalDirection<T>,
    pub clamped: bool,
}

impl<T: Scalar> SphericalDirection<T> {
    pub fn new(heading_deg: T, elevation_deg: T) -> Result<Self> {
        if !heading_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(GeometryError::NonFinite {
                heading: heading_deg.as_f64(),
                elevation: elevation_deg.as_f64(),
            });
        }
        if elevation_deg.abs() > T::lit(90.0) {
            return Err(GeometryError::ElevationOutOfRange(elevation_deg.as_f64()));
        }
        Ok(Self {
            heading_deg: wrap_degrees(heading_deg),
            elevation_deg,
        })
    }

    /// Builds a direction without validation. The heading is still wrapped
    /// and the elevation clamped, so the invariants hold for finite input.
    pub(crate) fn new_unchecked(heading_deg: T, elevation_deg: T) -> Self {
        let limit = T::lit(90.0);
        Self {
            heading_deg: wrap_degrees(heading_deg),
            elevation_deg: elevation_deg.max(-limit).min(limit),
        }
    }

    pub fn heading_deg(&self) -> T {
        self.heading_deg
    }

    pub fn elevation_deg(&self) -> T {
        self.elevation_deg
    }

    /// Unit vector in the `x` right, `y` up, `z` forward frame.
    pub fn to_unit_vector(&self) -> [T; 3] {
        let (sh, ch) = self.heading_deg.to_radians().sin_cos();
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        [sh * ce, se, ch * ce]
    }

    /// Direction of an arbitrary non-zero vector. Returns `None` for the zero
    /// vector or non-finite input.
    pub fn from_vector(v: [T; 3]) -> Option<Self> {
        let horizontal = (v[0] * v[0] + v[2] * v[2]).sqrt();
        if !(horizontal.is_finite() && v[1].is_finite()) || (horizontal == T::zero() && v[1] == T::zero()) {
            return None;
        }
        let elevation = v[1].atan2(horizontal).to_degrees();
        let heading = if horizontal == T::zero() {
            T::zero()
        } else {
            v[0].atan2(v[2]).to_degrees()
        };
        Some(Self::new_unchecked(heading, elevation))
    }

    /// Great-circle angle to `other`, in degrees.
    pub fn angle_to(&self, other: &Self) -> T {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos).to_degrees()
    }

    /// Turns the camera by `d_heading` (positive = right) and `d_elevation`
    /// (positive = up). Heading wraps, elevation clamps at the poles.
    pub fn rotate(&self, d_heading: T, d_elevation: T) -> Rotated<T> {
        let limit = T::lit(90.0);
        let target = self.elevation_deg + d_elevation;
        let clamped = target.abs() > limit;
        Rotated {
            direction: Self::new_unchecked(self.heading_deg + d_heading, target),
            clamped,
        }
    }
}

/// Free-function form of [`SphericalDirection::rotate`].
pub fn rotate<T: Scalar>(dir: SphericalDirection<T>, d_heading: T, d_elevation: T) -> Rotated<T> {
    dir.rotate(d_heading, d_elevation)
}

/// Validated dimensions of a 2:1 equirectangular image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquirectFrame {
    width: u32,
    height: u32,
}

impl EquirectFrame {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(GeometryError::NotTwoToOne { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn to_px<T: Scalar>(&self, dir: &SphericalDirection<T>) -> (T, T) {
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        let mut x = dir.heading_deg / T::lit(360.0) * w;
        if x >= w {
            x = x - w;
        }
        let y = (T::lit(90.0) - dir.elevation_deg) / T::lit(180.0) * h;
        (x, y)
    }

    pub fn to_dir<T: Scalar>(&self, x: T, y: T) -> Result<SphericalDirection<T>> {
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if !(x >= T::zero() && x < w && y >= T::zero() && y <= h) {
            return Err(GeometryError::PixelOutOfRange {
                x: x.as_f64(),
                y: y.as_f64(),
                width: self.width,
                height: self.height,
            });
        }
        Ok(SphericalDirection::new_unchecked(
            x / w * T::lit(360.0),
            T::lit(90.0) - y / h * T::lit(180.0),
        ))
    }
}

pub fn dir_to_equirect_px<T: Scalar>(
    dir: &SphericalDirection<T>,
    canvas_w: u32,
    canvas_h: u32,
) -> Result<(T, T)> {
    Ok(EquirectFrame::new(canvas_w, canvas_h)?.to_px(dir))
}

pub fn equirect_px_to_dir<T: Scalar>(x: T, y: T, canvas_w: u32, canvas_h: u32) -> Result<SphericalDirection<T>> {
    EquirectFrame::new(canvas_w, canvas_h)?.to_dir(x, y)
}

/// A zero-roll pinhole camera aimed at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ViewSpec<T> {
    pub center: SphericalDirection<T>,
    pub hfov_deg: T,
    pub vfov_deg: T,
    pub width_px: u32,
    pub height_px: u32,
}

impl<T: Scalar> ViewSpec<T> {
    pub fn new(center: SphericalDirection<T>, hfov_deg: T, vfov_deg: T, width_px: u32, height_px: u32) -> Result<Self> {
        for fov in [hfov_deg, vfov_deg] {
            if !(fov > T::zero() && fov < T::lit(180.0)) {
                return Err(GeometryError::FieldOfView(fov.as_f64()));
            }
        }
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::EmptyView {
                width: width_px,
                height: height_px,
            });
        }
        Ok(Self {
            center,
            hfov_deg,
            vfov_deg,
            width_px,
            height_px,
        })
    }

    /// Same camera, different aim.
    pub fn with_center(&self, center: SphericalDirection<T>) -> Self {
        Self { center, ..*self }
    }

    pub fn projector(&self) -> ViewProjector<T> {
        ViewProjector::new(self)
    }
}

/// Pixel position of a direction in a view; `u`/`v` are NaN when the
/// direction is behind the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPixel<T> {
    pub u: T,
    pub v: T,
    pub in_frustum: bool,
}

/// Precomputed camera basis for repeated projections through one view.
#[derive(Debug, Clone, Copy)]
pub struct ViewProjector<T> {
    forward: [T; 3],
    right: [T; 3],
    up: [T; 3],
    fx: T,
    fy: T,
    half_w: T,
    half_h: T,
}

fn dot<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl<T: Scalar> ViewProjector<T> {
    pub fn new(view: &ViewSpec<T>) -> Self {
        let (sh, ch) = view.center.heading_deg.to_radians().sin_cos();
        let (se, ce) = view.center.elevation_deg.to_radians().sin_cos();
        let half = T::lit(0.5);
        let half_w = T::lit(view.width_px as f64) * half;
        let half_h = T::lit(view.height_px as f64) * half;
        Self {
            forward: [sh * ce, se, ch * ce],
            right: [ch, T::zero(), -sh],
            up: [-sh * se, ce, -ch * se],
            fx: half_w / (view.hfov_deg.to_radians() * half).tan(),
            fy: half_h / (view.vfov_deg.to_radians() * half).tan(),
            half_w,
            half_h,
        }
    }

    /// World-frame ray (not normalized) through continuous pixel `(u, v)`.
    pub fn ray(&self, u: T, v: T) -> [T; 3] {
        let xc = (u - self.half_w) / self.fx;
        let yc = (self.half_h - v) / self.fy;
        let mut d = [T::zero(); 3];
        for (k, item) in d.iter_mut().enumerate() {
            *item = self.forward[k] + xc * self.right[k] + yc * self.up[k];
        }
        d
    }

    pub fn px_to_dir(&self, u: T, v: T) -> SphericalDirection<T> {
        SphericalDirection::from_vector(self.ray(u, v)).expect("camera ray is never zero")
    }

    /// Projects a world vector (need not be unit length).
    pub fn project_vector(&self, d: &[T; 3]) -> ViewPixel<T> {
        let z = dot(d, &self.forward);
        if z.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return ViewPixel {
                u: T::nan(),
                v: T::nan(),
                in_frustum: false,
            };
        }
        let u = self.half_w + self.fx * dot(d, &self.right) / z;
        let v = self.half_h - self.fy * dot(d, &self.up) / z;
        let two = T::lit(2.0);
        let in_frustum = u >= T::zero() && u <= two * self.half_w && v >= T::zero() && v <= two * self.half_h;
        ViewPixel { u, v, in_frustum }
    }

    pub fn dir_to_px(&self, dir: &SphericalDirection<T>) -> ViewPixel<T> {
        self.project_vector(&dir.to_unit_vector())
    }
}

/// Direction of the ray through continuous pixel `(u, v)`. Coordinates
/// outside the image extrapolate the same pinhole model.
pub fn view_px_to_dir<T: Scalar>(view: &ViewSpec<T>, u: T, v: T) -> SphericalDirection<T> {
    view.projector().px_to_dir(u, v)
}

pub fn dir_to_view_px<T: Scalar>(view: &ViewSpec<T>, dir: &SphericalDirection<T>) -> ViewPixel<T> {
    view.projector().dir_to_px(dir)
}

/// Number of grid headings.
pub const HEADING_COUNT: u8 = 12;
/// Angular spacing of the grid, both in heading and in elevation.
pub const GRID_STEP_DEG: f64 = 30.0;
pub const VIEW_COUNT: usize = 36;

/// One cell of the 12 x 3 view grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewIndex {
    heading_index: u8,
    elevation_index: i8,
}

impl ViewIndex {
    pub fn new(heading_index: i64, elevation_index: i64) -> Result<Self> {
        if !(0..HEADING_COUNT as i64).contains(&heading_index) || !(-1..=1).contains(&elevation_index) {
            return Err(GeometryError::ViewIndex {
                heading: heading_index,
                elevation: elevation_index,
            });
        }
        Ok(Self {
            heading_index: heading_index as u8,
            elevation_index: elevation_index as i8,
        })
    }

    pub fn heading_index(&self) -> u8 {
        self.heading_index
    }

    pub fn elevation_index(&self) -> i8 {
        self.elevation_index
    }

    /// All 36 indices, lowest elevation row first, headings ascending.
    pub fn all() -> impl Iterator<Item = ViewIndex> {
        (-1..=1).flat_map(|e| {
            (0..HEADING_COUNT).map(move |h| ViewIndex {
                heading_index: h,
                elevation_index: e,
            })
        })
    }

    /// Position in [`ViewIndex::all`].
    pub fn ordinal(&self) -> usize {
        (self.elevation_index as i64 + 1) as usize * HEADING_COUNT as usize + self.heading_index as usize
    }

    pub fn center<T: Scalar>(&self) -> SphericalDirection<T> {
        SphericalDirection::new_unchecked(
            T::lit(self.heading_index as f64 * GRID_STEP_DEG),
            T::lit(self.elevation_index as f64 * GRID_STEP_DEG),
        )
    }

    /// Grid view whose center is angularly nearest to `dir`. Ties (within
    /// 1e-9 degrees) go to the smaller heading index, then the smaller
    /// elevation index.
    pub fn nearest<T: Scalar>(dir: &SphericalDirection<T>) -> ViewIndex {
        Self::nearest_among(dir, Self::all()).expect("grid is non-empty")
    }

    /// Like [`ViewIndex::nearest`] restricted to `candidates`.
    pub fn nearest_among<T: Scalar>(
        dir: &SphericalDirection<T>,
        candidates: impl IntoIterator<Item = ViewIndex>,
    ) -> Option<ViewIndex> {
        let tie = 1e-9;
        let mut best: Option<(f64, ViewIndex)> = None;
        for idx in candidates {
            let d = dir.angle_to(&idx.center::<T>()).as_f64();
            best = match best {
                None => Some((d, idx)),
                Some((bd, bi)) => {
                    let closer = d < bd - tie;
                    let tied_and_earlier = (d - bd).abs() <= tie
                        && (idx.heading_index, idx.elevation_index) < (bi.heading_index, bi.elevation_index);
                    if closer || tied_and_earlier {
                        Some((d.min(bd), idx))
                    } else {
                        Some((bd.min(d), bi))
                    }
                }
            };
        }
        best.map(|(_, i)| i)
    }
}

impl std::fmt::Display for ViewIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.heading_index, self.elevation_index)
    }
}

/// Camera parameters shared by all 36 grid views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ViewGrid<T> {
    pub hfov_deg: T,
    pub vfov_deg: T,
    pub width_px: u32,
    pub height_px: u32,
}

impl<T: Scalar> Default for ViewGrid<T> {
    fn default() -> Self {
        Self {
            hfov_deg: T::lit(60.0),
            vfov_deg: T::lit(60.0),
            width_px: 512,
            height_px: 512,
        }
    }
}

impl<T: Scalar> ViewGrid<T> {
    pub fn validate(&self) -> Result<()> {
        self.view_at(SphericalDirection::new_unchecked(T::zero(), T::zero()))
            .map(|_| ())
    }

    pub fn view_at(&self, center: SphericalDirection<T>) -> Result<ViewSpec<T>> {
        ViewSpec::new(center, self.hfov_deg, self.vfov_deg, self.width_px, self.height_px)
    }

    pub fn view_spec(&self, index: ViewIndex) -> ViewSpec<T> {
        ViewSpec {
            center: index.center(),
            hfov_deg: self.hfov_deg,
            vfov_deg: self.vfov_deg,
            width_px: self.width_px,
            height_px: self.height_px,
        }
    }

    /// Half-width in degrees of the elevation band that the 36 grid views
    /// cover completely.
    ///
    /// The outer edge of a tilted view is a great circle; between two
    /// neighbouring grid headings it sags below `30 + vfov / 2`, so the band
    /// is `atan(tan(30 + vfov/2) * cos(15))` rather than the nominal value.
    pub fn covered_band_deg(&self) -> T {
        let top = T::lit(GRID_STEP_DEG) + self.vfov_deg * T::lit(0.5);
        if top >= T::lit(90.0) {
            return T::lit(90.0);
        }
        let sag = T::lit(GRID_STEP_DEG * 0.5).to_radians().cos();
        (top.to_radians().tan() * sag).atan().to_degrees()
    }
}
