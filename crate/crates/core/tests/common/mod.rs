#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use image::{GrayImage, RgbImage};
use panosynth_core::backend::{BackendError, Capability, GenerationBackend};
use panosynth_core::canvas::{coverage_fraction, sample_view, seam_energy, EquirectCanvas, FULL_COVERAGE};
use panosynth_core::engine::{
    discretize, generate_panorama, generate_panorama_observed, generate_stitched, regenerate, OutpaintConfig,
    PanoEnvironment, StepKind, StepSnapshot, ViewCaptions,
};
use panosynth_core::{SphericalDirection, ViewGrid, ViewIndex};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ROOMS: &[&str] = &["kitchen", "bedroom", "hallway", "living room", "bathroom", "study", "garage"];
const THINGS: &[&str] = &["a sofa", "a window", "a table", "shelves", "a lamp", "a rug", "a mirror", "plants"];

/// 36 captions drawn from a small vocabulary.
pub fn captions(seed: u64) -> ViewCaptions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ViewIndex::all()
        .map(|i| {
            let text = format!(
                "a {} with {} and {}",
                ROOMS.choose(&mut rng).unwrap(),
                THINGS.choose(&mut rng).unwrap(),
                THINGS.choose(&mut rng).unwrap()
            );
            (i, text)
        })
        .collect()
}

/// Counts calls and optionally fails from the `fail_from`-th call on.
pub struct Counting<B> {
    pub inner: B,
    pub calls: AtomicUsize,
    pub fail_from: Option<usize>,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            fail_from: None,
        }
    }

    fn tick(&self) -> Result<(), BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.fail_from {
            Some(k) if n >= k => Err(BackendError::Unavailable {
                attempts: 3,
                message: "injected".into(),
            }),
            _ => Ok(()),
        }
    }
}

impl<B: GenerationBackend> GenerationBackend for Counting<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn capabilities(&self) -> Vec<Capability> {
        self.inner.capabilities()
    }
    fn generate(&self, p: &str, s: u64, w: u32, h: u32) -> Result<RgbImage, BackendError> {
        self.tick()?;
        self.inner.generate(p, s, w, h)
    }
    fn outpaint(&self, i: &RgbImage, m: &GrayImage, p: &str, s: u64) -> Result<RgbImage, BackendError> {
        self.tick()?;
        self.inner.outpaint(i, m, p, s)
    }
    fn caption(&self, i: &RgbImage) -> Result<String, BackendError> {
        self.tick()?;
        self.inner.caption(i)
    }
}

fn great_circle_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (h1, e1) = (a.0.to_radians(), a.1.to_radians());
    let (h2, e2) = (b.0.to_radians(), b.1.to_radians());
    let s = ((e2 - e1) / 2.0).sin().powi(2) + e1.cos() * e2.cos() * ((h2 - h1) / 2.0).sin().powi(2);
    2.0 * s.sqrt().min(1.0).asin().to_degrees()
}

/// Nearest grid view by exhaustive search; ties go to the smaller
/// (heading, elevation) index pair.
pub fn brute_nearest(h: f64, e: f64) -> ViewIndex {
    let mut best: Option<(f64, (i64, i64))> = None;
    for hi in 0..12i64 {
        for ei in -1..=1i64 {
            let d = great_circle_deg((h, e), (hi as f64 * 30.0, ei as f64 * 30.0));
            let better = match best {
                None => true,
                Some((bd, bk)) => d < bd - 1e-9 || ((d - bd).abs() <= 1e-9 && (hi, ei) < bk),
            };
            if better {
                best = Some((d, (hi, ei)));
            }
        }
    }
    let (_, (hi, ei)) = best.unwrap();
    ViewIndex::new(hi, ei).unwrap()
}

/// Centroid direction of the view pixels whose canvas pixel is not yet
/// covered, sampled on an `n x n` lattice.
fn exposed_centroid(snap: &StepSnapshot<'_>, n: u32) -> Option<(f64, f64)> {
    let view = &snap.step.view;
    let canvas = snap.before;
    let (w, h) = (canvas.width() as f64, canvas.height() as f64);
    let mut sum = [0.0f64; 3];
    let mut count = 0;
    for j in 0..n {
        for i in 0..n {
            let u = (i as f64 + 0.5) * view.width_px as f64 / n as f64;
            let v = (j as f64 + 0.5) * view.height_px as f64 / n as f64;
            let d = view.projector().px_to_dir(u, v);
            let x = ((d.heading_deg() / 360.0 * w) as u32).min(canvas.width() - 1);
            let y = (((90.0 - d.elevation_deg()) / 180.0 * h) as u32).min(canvas.height() - 1);
            if canvas.coverage_at(x, y) < 0.5 {
                let (hr, er) = (d.heading_deg().to_radians(), d.elevation_deg().to_radians());
                sum[0] += hr.sin() * er.cos();
                sum[1] += er.sin();
                sum[2] += hr.cos() * er.cos();
                count += 1;
            }
        }
    }
    if count == 0 {
        return None;
    }
    let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
    let e = (sum[1] / norm).asin().to_degrees();
    let h = sum[0].atan2(sum[2]).to_degrees().rem_euclid(360.0);
    Some((h, e))
}

/// Previously covered pixels that changed must lie within `band` canvas
/// pixels of a pixel that was uncovered and inside the step's frustum.
fn check_mask_preservation(snap: &StepSnapshot<'_>, band: f64) -> (usize, usize) {
    let (before, after) = (snap.before, snap.after);
    let (w, h) = (before.width() as i64, before.height() as i64);
    let projector = snap.step.view.projector();
    let fresh = |x: i64, y: i64| -> bool {
        let xx = x.rem_euclid(w) as u32;
        if y < 0 || y >= h {
            return false;
        }
        let y = y as u32;
        before.coverage_at(xx, y) < 0.5 && projector.dir_to_px(&before.pixel_direction(xx, y)).in_frustum
    };
    // boundary pixels of the fresh region, bucketed by cell
    let cell = band.ceil().max(1.0) as i64;
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<(i64, i64)>> = Default::default();
    for y in 0..h {
        for x in 0..w {
            if fresh(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !fresh(x + dx, y + dy)) {
                buckets.entry((x / cell, y / cell)).or_default().push((x, y));
            }
        }
    }
    let cells_x = (w + cell - 1) / cell;
    let mut changed_old = 0;
    let mut outside_band = 0;
    for y in 0..h {
        for x in 0..w {
            let (xu, yu) = (x as u32, y as u32);
            if before.coverage_at(xu, yu) < FULL_COVERAGE {
                continue;
            }
            if before.pixel(xu, yu) == after.pixel(xu, yu) && before.coverage_at(xu, yu) == after.coverage_at(xu, yu) {
                continue;
            }
            changed_old += 1;
            let (cx, cy) = (x / cell, y / cell);
            let mut near = false;
            'search: for dy in -1..=1 {
                for dx in -1..=1 {
                    let key = ((cx + dx).rem_euclid(cells_x), cy + dy);
                    for &(px, py) in buckets.get(&key).map(Vec::as_slice).unwrap_or(&[]) {
                        let ddx = (px - x).abs().min(w - (px - x).abs()) as f64;
                        let ddy = (py - y) as f64;
                        if (ddx * ddx + ddy * ddy).sqrt() < band {
                            near = true;
                            break 'search;
                        }
                    }
                }
            }
            if !near {
                outside_band += 1;
            }
        }
    }
    (changed_old, outside_band)
}

fn assert_known_pixels_kept(snap: &StepSnapshot<'_>) {
    let Some(partial) = snap.partial else { return };
    for (i, (a, b)) in partial.pixels().pixels().zip(snap.reply.pixels()).enumerate() {
        if partial.validity()[i] {
            assert_eq!(a, b, "step {} pixel {i}: backend changed a known pixel", snap.index);
        }
    }
}

fn covered_solid_angle(c: &EquirectCanvas) -> f64 {
    let mut total = 0.0;
    for y in 0..c.height() {
        let e = (90.0 - (y as f64 + 0.5) * 180.0 / c.height() as f64).to_radians();
        let n = (0..c.width()).filter(|&x| c.coverage_at(x, y) >= FULL_COVERAGE).count();
        total += n as f64 * e.cos();
    }
    total
}

fn within(a: [u8; 3], b: [f32; 3], tol: f32) -> bool {
    (0..3).all(|c| (a[c] as f32 - b[c]).abs() <= tol + 1e-3)
}

pub struct SuiteReport {
    pub canvas: EquirectCanvas,
    pub seam: f64,
    pub stitched_seam: f64,
}

/// Every engine property checked against one backend.
pub fn run_engine_suite(backend: &dyn GenerationBackend, caption_seed: u64, config: &OutpaintConfig) -> SuiteReport {
    let caps = captions(caption_seed);
    let mut seed_reply: Option<RgbImage> = None;
    let mut last_area = 0.0;
    let mut steps = 0;
    let mut observer = |snap: &StepSnapshot<'_>| {
        steps += 1;
        let step = snap.step;
        if step.kind == StepKind::Seed {
            assert_eq!(snap.index, 0);
            assert_eq!(step.view.center.elevation_deg(), 0.0);
            assert_eq!(step.view.center.heading_deg(), 0.0);
            seed_reply = Some(snap.reply.clone());
        } else {
            let partial = snap.partial.expect("outpaint steps send a partial view");
            assert!(
                partial.valid_fraction() >= config.min_known_fraction,
                "step {} starts from {:.3} known",
                snap.index,
                partial.valid_fraction()
            );
            if let Some((h, e)) = exposed_centroid(snap, 97) {
                assert_eq!(step.prompt_source, brute_nearest(h, e), "step {} prompt source", snap.index);
            }
        }
        assert_known_pixels_kept(snap);
        let (changed, outside) = check_mask_preservation(snap, config.blend_width_px);
        assert_eq!(outside, 0, "step {}: {outside} of {changed} changed old pixels lie outside the feather band", snap.index);
        let area = covered_solid_angle(snap.after);
        assert!(area > last_area, "step {} did not grow coverage", snap.index);
        last_area = area;
    };
    let env = generate_panorama_observed("scan", "vp", &caps, config, backend, Some(&mut observer)).unwrap();
    assert_eq!(steps, 36);

    // determinism
    let again = generate_panorama("scan", "vp", &caps, config, backend).unwrap();
    assert!(env.canvas == again.canvas, "two runs differ");
    assert_eq!(env.provenance, again.provenance);

    // coverage
    let grid: ViewGrid = config.view_grid;
    let band = grid.covered_band_deg();
    assert_eq!(coverage_fraction(&env.canvas, (-band, band)).unwrap(), 1.0);
    let sphere = coverage_fraction(&env.canvas, (-90.0, 90.0)).unwrap();
    assert!((0.85..=0.88).contains(&sphere), "{sphere}");

    // discretize
    let views = discretize(&env).unwrap();
    assert_eq!(views.len(), 36);
    assert_eq!(views, env.views);
    for img in views.values() {
        assert_eq!((img.width(), img.height()), (grid.width_px, grid.height_px));
        assert!(img.is_complete());
    }
    let seed_img = seed_reply.unwrap();
    let front = &views[&ViewIndex::new(0, 0).unwrap()];
    let close = front
        .pixels()
        .pixels()
        .zip(seed_img.pixels())
        .filter(|(a, b)| (0..3).all(|c| a.0[c].abs_diff(b.0[c]) <= 2))
        .count();
    let frac = close as f64 / (seed_img.width() * seed_img.height()) as f64;
    assert!(frac >= 0.99, "view (0,0) matches the seed on {frac:.4}");
    for e in -1..=1 {
        for h in 0..12 {
            let a_idx = ViewIndex::new(h, e).unwrap();
            let b_idx = ViewIndex::new((h + 1) % 12, e).unwrap();
            let (a, b) = (&views[&a_idx], &views[&b_idx]);
            let (pa, pb) = (grid.view_spec(a_idx).projector(), grid.view_spec(b_idx).projector());
            let (mut n, mut ok) = (0usize, 0usize);
            for v in 0..grid.height_px {
                for u in grid.width_px / 2..grid.width_px {
                    let d = pa.px_to_dir(u as f64 + 0.5, v as f64 + 0.5);
                    let p = pb.dir_to_px(&d);
                    if !p.in_frustum {
                        continue;
                    }
                    n += 1;
                    if within(a.pixels().get_pixel(u, v).0, sample_view(b.pixels(), p.u, p.v), 4.0) {
                        ok += 1;
                    }
                }
            }
            let frac = ok as f64 / n as f64;
            assert!(n > 0 && frac >= 0.95, "overlap {a_idx}/{b_idx}: {frac:.4} of {n}");
        }
    }

    // persistence and regeneration
    let dir = tempfile::tempdir().unwrap();
    env.save(dir.path()).unwrap();
    assert!(PanoEnvironment::is_complete(dir.path()));
    let loaded = PanoEnvironment::load(dir.path()).unwrap();
    assert!(loaded.canvas == env.canvas);
    assert_eq!(loaded.views, env.views);
    assert_eq!(loaded.provenance, env.provenance);
    let rebuilt = regenerate(&loaded.provenance, backend).unwrap();
    assert!(rebuilt.canvas == env.canvas);

    // coherence
    let stitched = generate_stitched(&caps, config, backend).unwrap();
    let seam = seam_energy(&env.canvas).unwrap();
    let stitched_seam = seam_energy(&stitched).unwrap();
    assert!(seam <= 0.5 * stitched_seam, "seam {seam} vs stitched {stitched_seam}");

    SuiteReport {
        canvas: env.canvas,
        seam,
        stitched_seam,
    }
}

pub fn direction(h: f64, e: f64) -> SphericalDirection {
    SphericalDirection::new(h, e).unwrap()
}
