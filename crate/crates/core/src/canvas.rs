//! The equirectangular panorama under construction.
//!
//! A canvas stores 8-bit RGB pixels plus a per-pixel coverage value in
//! `[0, 1]`. Views are pulled out of it with [`extract_view`] and written
//! back with [`composite_view`], which feathers new content into what is
//! already there.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::geometry::{EquirectFrame, GeometryError, ViewProjector};
use crate::{SphericalDirection, ViewSpec};

/// Colour of pixels that hold no content.
pub const SENTINEL: [u8; 3] = [0, 0, 0];
/// Coverage at or above which a canvas pixel counts as fully written.
pub const FULL_COVERAGE: f32 = 0.999;
/// Suffix of the lossless RGB panorama file.
pub const PANO_SUFFIX: &str = ".pano.png";
/// Suffix of the 8-bit coverage sidecar (255 = 1.0).
pub const COVERAGE_SUFFIX: &str = ".cov.png";

#[derive(Debug, Error)]
pub enum CanvasError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("view image is {got_w}x{got_h}, view expects {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("{0} view pixels are not valid; only complete images can be composited")]
    IncompleteImage(usize),
    #[error("invalid elevation band ({lo}, {hi})")]
    Band { lo: f64, hi: f64 },
    #[error("coverage threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("coverage buffer has {got} entries, expected {want}")]
    CoverageLength { got: usize, want: usize },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = CanvasError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct EquirectCanvas {
    frame: EquirectFrame,
    pixels: RgbImage,
    coverage: Vec<f32>,
}

impl EquirectCanvas {
    /// Blank canvas: every pixel is the sentinel colour with zero coverage.
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let frame = EquirectFrame::new(width, height)?;
        Ok(Self {
            frame,
            pixels: RgbImage::new(width, height),
            coverage: vec![0.0; width as usize * height as usize],
        })
    }

    /// Assembles a canvas from stored parts. Coverage is clamped to `[0, 1]`
    /// and uncovered pixels are reset to the sentinel.
    pub fn from_parts(pixels: RgbImage, mut coverage: Vec<f32>) -> Result<Self> {
        let frame = EquirectFrame::new(pixels.width(), pixels.height())?;
        let want = pixels.width() as usize * pixels.height() as usize;
        if coverage.len() != want {
            return Err(CanvasError::CoverageLength {
                got: coverage.len(),
                want,
            });
        }
        let mut pixels = pixels;
        for (c, px) in coverage.iter_mut().zip(pixels.pixels_mut()) {
            *c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
            if *c == 0.0 {
                px.0 = SENTINEL;
            }
        }
        Ok(Self {
            frame,
            pixels,
            coverage,
        })
    }

    /// Fills every pixel from a function of its direction and marks the whole
    /// canvas covered.
    pub fn painted(width: u32, height: u32, f: impl Fn(&SphericalDirection) -> [u8; 3]) -> Result<Self> {
        let mut canvas = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                let dir = canvas.pixel_direction(x, y);
                canvas.pixels.put_pixel(x, y, Rgb(f(&dir)));
            }
        }
        canvas.coverage.fill(1.0);
        Ok(canvas)
    }

    pub fn width(&self) -> u32 {
        self.frame.width()
    }

    pub fn height(&self) -> u32 {
        self.frame.height()
    }

    pub fn frame(&self) -> EquirectFrame {
        self.frame
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn coverage(&self) -> &[f32] {
        &self.coverage
    }

    pub fn coverage_at(&self, x: u32, y: u32) -> f32 {
        self.coverage[self.index(x, y)]
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels.get_pixel(x, y).0
    }

    /// Sets one pixel and its coverage; coverage 0 forces the sentinel.
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3], coverage: f32) {
        let i = self.index(x, y);
        let c = coverage.clamp(0.0, 1.0);
        self.coverage[i] = c;
        self.pixels.put_pixel(x, y, Rgb(if c == 0.0 { SENTINEL } else { rgb }));
    }

    /// Direction through the centre of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: u32, y: u32) -> SphericalDirection {
        self.frame
            .to_dir(x as f64 + 0.5, y as f64 + 0.5)
            .expect("pixel centre lies inside the canvas")
    }

    /// Elevation of the centre of row `y`.
    pub fn row_elevation(&self, y: u32) -> f64 {
        90.0 - (y as f64 + 0.5) * 180.0 / self.height() as f64
    }

    /// Number of pixels at full coverage.
    pub fn covered_pixel_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c >= FULL_COVERAGE).count()
    }

    /// Solid angle (steradians) of fully covered pixels.
    pub fn covered_solid_angle(&self) -> f64 {
        let (w, h) = (self.width() as usize, self.height() as usize);
        let pixel_area = (2.0 * std::f64::consts::PI / w as f64) * (std::f64::consts::PI / h as f64);
        (0..h)
            .map(|y| {
                let n = self.coverage[y * w..(y + 1) * w]
                    .iter()
                    .filter(|&&c| c >= FULL_COVERAGE)
                    .count();
                n as f64 * self.row_elevation(y as u32).to_radians().cos() * pixel_area
            })
            .sum()
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width() as usize + x as usize
    }

    /// Coverage-weighted bilinear sample at continuous canvas position
    /// `(x, y)`. Columns wrap, rows clamp. Returns the colour (meaningless
    /// when coverage is zero) and the interpolated coverage.
    pub fn sample(&self, x: f64, y: f64) -> ([f32; 3], f32) {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let raw = self.pixels.as_raw();
        let mut acc = [0f32; 3];
        let mut cov = 0f32;
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            if wy == 0.0 {
                continue;
            }
            let yy = (y0 + dy).clamp(0, h - 1) as usize;
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                if wx == 0.0 {
                    continue;
                }
                let xx = (x0 + dx).rem_euclid(w) as usize;
                let i = yy * w as usize + xx;
                let wt = wx * wy * self.coverage[i];
                if wt > 0.0 {
                    for c in 0..3 {
                        acc[c] += wt * raw[3 * i + c] as f32;
                    }
                    cov += wt;
                }
            }
        }
        if cov > 0.0 {
            for a in &mut acc {
                *a /= cov;
            }
        }
        (acc, cov)
    }

    /// Paths of the panorama and coverage files for `base`.
    pub fn file_paths(base: &Path) -> (PathBuf, PathBuf) {
        let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        (
            base.with_file_name(format!("{name}{PANO_SUFFIX}")),
            base.with_file_name(format!("{name}{COVERAGE_SUFFIX}")),
        )
    }

    /// Writes `<base>.pano.png` and `<base>.cov.png`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let (pano, cov) = Self::file_paths(base);
        self.pixels.save(&pano).map_err(|source| CanvasError::Image {
            path: pano.clone(),
            source,
        })?;
        self.coverage_image().save(&cov).map_err(|source| CanvasError::Image {
            path: cov.clone(),
            source,
        })?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (pano, cov) = Self::file_paths(base);
        let open = |p: &Path| image::open(p).map_err(|source| CanvasError::Image {
            path: p.to_path_buf(),
            source,
        });
        let pixels = open(&pano)?.into_rgb8();
        let coverage = open(&cov)?.into_luma8();
        if coverage.dimensions() != pixels.dimensions() {
            return Err(CanvasError::DimensionMismatch {
                got_w: coverage.width(),
                got_h: coverage.height(),
                want_w: pixels.width(),
                want_h: pixels.height(),
            });
        }
        let coverage = coverage.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::from_parts(pixels, coverage)
    }

    /// Coverage as an 8-bit image, 255 = fully covered.
    pub fn coverage_image(&self) -> GrayImage {
        ImageBuffer::from_fn(self.width(), self.height(), |x, y| {
            Luma([(self.coverage_at(x, y) * 255.0).round() as u8])
        })
    }
}

/// A perspective image with a per-pixel flag saying whether it holds real
/// content.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pixels: RgbImage,
    validity: Vec<bool>,
}

impl ViewImage {
    /// Image whose pixels are all valid.
    pub fn complete(pixels: RgbImage) -> Self {
        let n = pixels.width() as usize * pixels.height() as usize;
        Self {
            pixels,
            validity: vec![true; n],
        }
    }

    /// Invalid pixels are reset to the sentinel colour.
    pub fn with_validity(mut pixels: RgbImage, validity: Vec<bool>) -> Result<Self> {
        let want = pixels.width() as usize * pixels.height() as usize;
        if validity.len() != want {
            return Err(CanvasError::CoverageLength {
                got: validity.len(),
                want,
            });
        }
        for (px, &ok) in pixels.pixels_mut().zip(&validity) {
            if !ok {
                px.0 = SENTINEL;
            }
        }
        Ok(Self { pixels, validity })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn into_pixels(self) -> RgbImage {
        self.pixels
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.validity[y as usize * self.width() as usize + x as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.validity.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.validity.iter().all(|&v| v)
    }

    /// Outpainting mask: 255 where content must be generated, 0 where it is
    /// known.
    pub fn unknown_mask(&self) -> GrayImage {
        let raw = self.validity.iter().map(|&v| if v { 0 } else { 255 }).collect();
        GrayImage::from_raw(self.width(), self.height(), raw).expect("mask matches image size")
    }
}

fn check_dims(view: &ViewSpec, img: &ViewImage) -> Result<()> {
    if img.width() != view.width_px || img.height() != view.height_px {
        return Err(CanvasError::DimensionMismatch {
            got_w: img.width(),
            got_h: img.height(),
            want_w: view.width_px,
            want_h: view.height_px,
        });
    }
    Ok(())
}

/// Renders `view` from the canvas.
///
/// Each view pixel casts a ray and samples the canvas with coverage-weighted
/// bilinear interpolation. A pixel is valid when the interpolated coverage is
/// positive and at least `coverage_threshold`; invalid pixels hold the
/// sentinel.
pub fn extract_view(canvas: &EquirectCanvas, view: &ViewSpec, coverage_threshold: f64) -> Result<ViewImage> {
    if !(0.0..=1.0).contains(&coverage_threshold) {
        return Err(CanvasError::Threshold(coverage_threshold));
    }
    let projector = view.projector();
    let frame = canvas.frame();
    let (w, h) = (view.width_px, view.height_px);
    let mut pixels = RgbImage::new(w, h);
    let mut validity = vec![false; w as usize * h as usize];
    let threshold = coverage_threshold as f32;
    for j in 0..h {
        for i in 0..w {
            let dir = projector.px_to_dir(i as f64 + 0.5, j as f64 + 0.5);
            let (x, y) = frame.to_px(&dir);
            let (rgb, cov) = canvas.sample(x, y);
            if cov > 0.0 && cov >= threshold {
                validity[(j * w + i) as usize] = true;
                pixels.put_pixel(i, j, Rgb(rgb.map(|c| c.round().clamp(0.0, 255.0) as u8)));
            }
        }
    }
    Ok(ViewImage { pixels, validity })
}

/// Bilinear sample of a view image at continuous coordinates, clamped to the
/// image.
pub fn sample_view(img: &RgbImage, u: f64, v: f64) -> [f32; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fx = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as i64;
    let y0 = fy.floor() as i64;
    let tx = (fx - x0 as f64) as f32;
    let ty = (fy - y0 as f64) as f32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let raw = img.as_raw();
    let at = |x: i64, y: i64, c: usize| raw[3 * (y * w + x) as usize + c] as f32;
    let mut out = [0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = at(x0, y0, c) * (1.0 - tx) + at(x1, y0, c) * tx;
        let bottom = at(x0, y1, c) * (1.0 - tx) + at(x1, y1, c) * tx;
        *o = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Canvas window that contains a view's footprint. Columns wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub x_start: i64,
    pub x_len: usize,
    pub y_start: usize,
    pub y_len: usize,
}

impl Footprint {
    pub fn column(&self, canvas_w: u32, i: usize) -> u32 {
        (self.x_start + i as i64).rem_euclid(canvas_w as i64) as u32
    }

    pub fn full_width(&self, canvas_w: u32) -> bool {
        self.x_len >= canvas_w as usize
    }
}

/// Bounding window of the canvas pixels that can fall inside `view`.
pub fn footprint(canvas: &EquirectCanvas, view: &ViewSpec) -> Footprint {
    let projector = view.projector();
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    let north = projector.project_vector(&[0.0, 1.0, 0.0]).in_frustum;
    let south = projector.project_vector(&[0.0, -1.0, 0.0]).in_frustum;

    let samples = 128;
    let (vw, vh) = (view.width_px as f64, view.height_px as f64);
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    let mut e_min = f64::INFINITY;
    let mut e_max = f64::NEG_INFINITY;
    let center_h = view.center.heading_deg();
    for k in 0..=samples {
        let t = k as f64 / samples as f64;
        for (u, v) in [(t * vw, 0.0), (t * vw, vh), (0.0, t * vh), (vw, t * vh)] {
            let d = projector.px_to_dir(u, v);
            let delta = crate::scalar::heading_delta(d.heading_deg(), center_h);
            d_min = d_min.min(delta);
            d_max = d_max.max(delta);
            e_min = e_min.min(d.elevation_deg());
            e_max = e_max.max(d.elevation_deg());
        }
    }
    if north {
        e_max = 90.0;
    }
    if south {
        e_min = -90.0;
    }
    let pad = 2;
    let row = |e: f64| ((90.0 - e) / 180.0 * ch as f64).floor() as i64;
    let y0 = (row(e_max) - pad).max(0);
    let y1 = (row(e_min) + pad).min(ch - 1);
    let full = north || south || d_max - d_min >= 359.0;
    let (x_start, x_len) = if full {
        (0, cw as usize)
    } else {
        let col = |deg: f64| ((center_h + deg) / 360.0 * cw as f64).floor() as i64;
        let xs = col(d_min) - pad;
        let xe = col(d_max) + pad;
        let len = ((xe - xs + 1) as usize).min(cw as usize);
        (xs, len)
    };
    Footprint {
        x_start,
        x_len,
        y_start: y0 as usize,
        y_len: (y1 - y0 + 1) as usize,
    }
}

/// What a composite changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompositeStats {
    /// Pixels that were uncovered and are now covered.
    pub newly_covered: usize,
    /// Previously covered pixels that received some new content.
    pub blended: usize,
}

/// Writes a complete view image into the canvas.
///
/// Every canvas pixel whose direction lies in the view frustum samples the
/// image bilinearly. Uncovered pixels take the new content outright. Covered
/// pixels are blended with weight `a_f * a_o`, where `a_f` ramps from 0 at
/// the frustum boundary to 1 at `blend_width_px` view pixels inside it, and
/// `a_o` ramps from 1 at the edge of the newly exposed region down to 0 at
/// `blend_width_px` canvas pixels into the covered region. Covered pixels
/// farther than that from new content are left untouched. A blend width of
/// zero overwrites the whole frustum. Coverage becomes `max(old, weight)`.
pub fn composite_view(
    canvas: &mut EquirectCanvas,
    view: &ViewSpec,
    img: &ViewImage,
    blend_width_px: f64,
) -> Result<CompositeStats> {
    check_dims(view, img)?;
    let invalid = img.validity().iter().filter(|&&v| !v).count();
    if invalid > 0 {
        return Err(CanvasError::IncompleteImage(invalid));
    }
    let projector: ViewProjector<f64> = view.projector();
    let fp = footprint(canvas, view);
    let cw = canvas.width();
    let (vw, vh) = (view.width_px as f64, view.height_px as f64);

    // project the window once
    let n = fp.x_len * fp.y_len;
    let mut uv = vec![(f64::NAN, f64::NAN); n];
    let mut new_region = vec![false; n];
    for r in 0..fp.y_len {
        let y = (fp.y_start + r) as u32;
        for c in 0..fp.x_len {
            let x = fp.column(cw, c);
            let p = projector.dir_to_px(&canvas.pixel_direction(x, y));
            if p.in_frustum {
                let k = r * fp.x_len + c;
                uv[k] = (p.u, p.v);
                new_region[k] = canvas.coverage_at(x, y) < 0.5;
            }
        }
    }

    let feather = blend_width_px > 0.0;
    let dist = if feather {
        Some(distance_transform(&new_region, fp.x_len, fp.y_len))
    } else {
        None
    };

    let mut stats = CompositeStats::default();
    for r in 0..fp.y_len {
        let y = (fp.y_start + r) as u32;
        for c in 0..fp.x_len {
            let k = r * fp.x_len + c;
            let (u, v) = uv[k];
            if u.is_nan() {
                continue;
            }
            let x = fp.column(cw, c);
            let old_cov = canvas.coverage_at(x, y);
            let blend = match &dist {
                None => 1.0,
                Some(d2) => {
                    let edge = u.min(vw - u).min(v).min(vh - v).max(0.0);
                    let a_f = (edge / blend_width_px).min(1.0);
                    let a_o = (1.0 - d2[k].sqrt() / blend_width_px).clamp(0.0, 1.0);
                    a_f * a_o
                }
            };
            let alpha = (blend as f32).max(1.0 - old_cov);
            if alpha <= 0.0 {
                continue;
            }
            let new = sample_view(img.pixels(), u, v);
            let old = canvas.pixel(x, y);
            let mixed: [u8; 3] = std::array::from_fn(|ch| {
                (alpha * new[ch] + (1.0 - alpha) * old[ch] as f32).round().clamp(0.0, 255.0) as u8
            });
            if old_cov < FULL_COVERAGE && alpha.max(old_cov) >= FULL_COVERAGE {
                stats.newly_covered += 1;
            } else {
                stats.blended += 1;
            }
            canvas.set(x, y, mixed, old_cov.max(alpha));
        }
    }
    Ok(stats)
}

/// Squared Euclidean distance from every cell to the nearest `true` cell
/// (exact, separable lower-envelope transform). Cells with no site get
/// `f64::INFINITY`.
pub fn distance_transform(sites: &[bool], width: usize, height: usize) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { inf }).collect();
    let mut buf_in = vec![0.0; width.max(height)];
    let mut buf_out = vec![0.0; width.max(height)];
    for x in 0..width {
        for y in 0..height {
            buf_in[y] = grid[y * width + x];
        }
        edt_1d(&buf_in[..height], &mut buf_out[..height]);
        for y in 0..height {
            grid[y * width + x] = buf_out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        buf_in[..width].copy_from_slice(row);
        edt_1d(&buf_in[..width], &mut buf_out[..width]);
        row.copy_from_slice(&buf_out[..width]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            d.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Solid-angle weighted fraction of fully covered pixels whose row centre
/// lies in `[lo_deg, hi_deg]`.
pub fn coverage_fraction(canvas: &EquirectCanvas, band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo < hi && lo >= -90.0 && hi <= 90.0) {
        return Err(CanvasError::Band { lo, hi });
    }
    let w = canvas.width() as usize;
    let mut covered = 0.0;
    let mut total = 0.0;
    for y in 0..canvas.height() {
        let e = canvas.row_elevation(y);
        if e < lo || e > hi {
            continue;
        }
        let weight = e.to_radians().cos();
        let row = &canvas.coverage()[y as usize * w..(y as usize + 1) * w];
        let n = row.iter().filter(|&&c| c >= FULL_COVERAGE).count();
        covered += weight * n as f64;
        total += weight * w as f64;
    }
    Ok(if total > 0.0 { covered / total } else { 0.0 })
}

/// Mean absolute colour difference between the first and last canvas column,
/// over rows where both are fully covered, in `[0, 1]`. `None` when no row
/// qualifies.
pub fn seam_energy(canvas: &EquirectCanvas) -> Option<f64> {
    let last = canvas.width() - 1;
    let mut sum = 0.0;
    let mut rows = 0usize;
    for y in 0..canvas.height() {
        if canvas.coverage_at(0, y) < FULL_COVERAGE || canvas.coverage_at(last, y) < FULL_COVERAGE {
            continue;
        }
        let a = canvas.pixel(0, y);
        let b = canvas.pixel(last, y);
        let diff: f64 = (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum();
        sum += diff / (3.0 * 255.0);
        rows += 1;
    }
    (rows > 0).then(|| sum / rows as f64)
}
