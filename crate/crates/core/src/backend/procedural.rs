//! Deterministic offline backend.
//!
//! Images are smooth colour fields derived from a hash of `(prompt, seed)`:
//! a base colour plus a few long-wavelength plane waves per channel. Outpaint
//! keeps known pixels verbatim and fills the rest with the same field plus a
//! harmonic correction that matches the known boundary.

use image::{GrayImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{check_mask, BackendError, Capability, GenerationBackend};

const WAVES_PER_CHANNEL: usize = 3;
const MIN_WAVELENGTH_PX: f64 = 512.0;
const MAX_WAVELENGTH_PX: f64 = 1536.0;

#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

/// The colour field behind one `(prompt, seed)` pair.
#[derive(Debug, Clone)]
pub struct ProceduralField {
    base: [f64; 3],
    waves: [[Wave; WAVES_PER_CHANNEL]; 3],
}

impl ProceduralField {
    pub fn new(prompt: &str, seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"panosynth-procedural-v1\0");
        hasher.update(prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(seed.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);

        let base = std::array::from_fn(|_| rng.random_range(48.0..208.0));
        let waves = std::array::from_fn(|_| {
            std::array::from_fn(|_| {
                let wavelength = rng.random_range(MIN_WAVELENGTH_PX..MAX_WAVELENGTH_PX);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    amplitude: rng.random_range(8.0..28.0),
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
        });
        Self { base, waves }
    }

    /// Unclamped channel values at the centre of pixel `(x, y)`.
    pub fn value(&self, x: u32, y: u32) -> [f64; 3] {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        std::array::from_fn(|c| {
            self.base[c]
                + self.waves[c]
                    .iter()
                    .map(|w| w.amplitude * (w.kx * px + w.ky * py + w.phase).sin())
                    .sum::<f64>()
        })
    }

    pub fn render(&self, width: u32, height: u32) -> RgbImage {
        RgbImage::from_fn(width, height, |x, y| Rgb(self.value(x, y).map(to_u8)))
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Offline stand-in for a diffusion service.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProceduralBackend;

impl ProceduralBackend {
    pub const IDENTITY: &'static str = "procedural/1";
}

pub fn procedural_generate(prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError> {
    if width == 0 || height == 0 {
        return Err(BackendError::InvalidRequest(format!("image size {width}x{height}")));
    }
    Ok(ProceduralField::new(prompt, seed).render(width, height))
}

/// Fills the pixels where `mask` is non-zero. Known pixels are copied
/// exactly.
pub fn procedural_outpaint(
    image: &RgbImage,
    mask: &GrayImage,
    prompt: &str,
    seed: u64,
) -> Result<RgbImage, BackendError> {
    check_mask(image, mask)?;
    let (w, h) = image.dimensions();
    let field = ProceduralField::new(prompt, seed);
    let n = (w * h) as usize;
    let fixed: Vec<bool> = mask.as_raw().iter().map(|&m| m == 0).collect();
    if fixed.iter().all(|&f| f) {
        return Ok(image.clone());
    }
    let base: Vec<[f64; 3]> = (0..n)
        .map(|i| field.value(i as u32 % w, i as u32 / w))
        .collect();
    let mut correction = vec![[0f32; 3]; n];
    for i in 0..n {
        if fixed[i] {
            let px = image.as_raw();
            correction[i] = std::array::from_fn(|c| (px[3 * i + c] as f64 - base[i][c]) as f32);
        }
    }
    harmonic_fill(&mut correction, &fixed, w as usize, h as usize);
    let mut out = image.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        if !fixed[i] {
            px.0 = std::array::from_fn(|c| to_u8(base[i][c] + correction[i][c] as f64));
        }
    }
    Ok(out)
}

/// Overwrites the unfixed entries of `values` with a solution of the
/// discrete Laplace equation whose Dirichlet data are the fixed entries
/// (Neumann at the image border), by multigrid V-cycles.
pub fn harmonic_fill(values: &mut [[f32; 3]], fixed: &[bool], w: usize, h: usize) {
    if !fixed.iter().any(|&f| f) {
        values.iter_mut().for_each(|v| *v = [0.0; 3]);
        return;
    }
    let free: Vec<bool> = fixed.iter().map(|&f| !f).collect();
    if !free.iter().any(|&f| f) {
        return;
    }
    let grid = Grid::new(w, h, free);
    // one spare zero cell stands in for neighbours beyond the border
    let mut u = values.to_vec();
    u.push([0.0; 3]);
    let zero = vec![[0f32; 3]; w * h + 1];
    for _ in 0..MAX_CYCLES {
        v_cycle(&grid, &mut u, &zero);
        if grid.max_residual(&u, &zero) < RESIDUAL_TOL {
            break;
        }
    }
    values.copy_from_slice(&u[..w * h]);
}

const MAX_CYCLES: usize = 40;
const RESIDUAL_TOL: f32 = 1e-3;
const SMOOTH_SWEEPS: usize = 2;
const RIM_SWEEPS: usize = 4;
const COARSEST: usize = 8;

/// A free cell with its 5-point stencil resolved.
struct Cell {
    index: u32,
    /// Neighbour indices; missing neighbours point at the spare zero cell.
    nbr: [u32; 4],
    k: f32,
    /// Coarse cells and bilinear weights around this cell.
    taps: [(u32, f32); 4],
}

struct Grid {
    w: usize,
    h: usize,
    free: Vec<bool>,
    /// Free cells, red ones first.
    cells: Vec<Cell>,
    /// Positions in `cells` of those within two cells of a fixed one.
    rim: Vec<usize>,
    coarse: Option<Box<Grid>>,
}

/// Cell-centred bilinear weights of the four coarse cells around fine cell `(x, y)`.
fn prolongation_taps(x: usize, y: usize, cw: usize, ch: usize) -> [(u32, f32); 4] {
    let (x0, tx) = if x.is_multiple_of(2) { (x as isize / 2 - 1, 0.75f32) } else { ((x / 2) as isize, 0.25) };
    let (y0, ty) = if y.is_multiple_of(2) { (y as isize / 2 - 1, 0.75f32) } else { ((y / 2) as isize, 0.25) };
    let cx = |d: isize| (x0 + d).clamp(0, cw as isize - 1) as usize;
    let cy = |d: isize| (y0 + d).clamp(0, ch as isize - 1) as usize;
    [
        ((cy(0) * cw + cx(0)) as u32, (1.0 - tx) * (1.0 - ty)),
        ((cy(0) * cw + cx(1)) as u32, tx * (1.0 - ty)),
        ((cy(1) * cw + cx(0)) as u32, (1.0 - tx) * ty),
        ((cy(1) * cw + cx(1)) as u32, tx * ty),
    ]
}

impl Grid {
    fn new(w: usize, h: usize, free: Vec<bool>) -> Self {
        let n = w * h;
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let coarse = (w.min(h) > COARSEST).then(|| {
            // a coarse cell is free only if all of its children are
            let mut cfree = vec![true; cw * ch];
            for i in (0..n).filter(|&i| !free[i]) {
                cfree[(i / w / 2) * cw + (i % w) / 2] = false;
            }
            Box::new(Grid::new(cw, ch, cfree))
        });
        let (red, black): (Vec<usize>, Vec<usize>) = (0..n)
            .filter(|&i| free[i])
            .partition(|&i| (i % w + i / w).is_multiple_of(2));
        let mut cells = Vec::with_capacity(red.len() + black.len());
        let mut rim = Vec::new();
        for i in red.into_iter().chain(black) {
            let (x, y) = (i % w, i / w);
            let spare = n as u32;
            let nbr = [
                if x > 0 { (i - 1) as u32 } else { spare },
                if x + 1 < w { (i + 1) as u32 } else { spare },
                if y > 0 { (i - w) as u32 } else { spare },
                if y + 1 < h { (i + w) as u32 } else { spare },
            ];
            let k = nbr.iter().filter(|&&j| j != spare).count() as f32;
            let near_fixed = (y.saturating_sub(2)..(y + 3).min(h))
                .any(|ny| (x.saturating_sub(2)..(x + 3).min(w)).any(|nx| !free[ny * w + nx]));
            if near_fixed {
                rim.push(cells.len());
            }
            cells.push(Cell {
                index: i as u32,
                nbr,
                k,
                taps: prolongation_taps(x, y, cw, ch),
            });
        }
        Self {
            w,
            h,
            free,
            cells,
            rim,
            coarse,
        }
    }

    #[inline]
    fn relax(cell: &Cell, u: &mut [[f32; 3]], f: &[[f32; 3]]) -> f32 {
        let i = cell.index as usize;
        let mut largest = 0f32;
        for c in 0..3 {
            let sum: f32 = cell.nbr.iter().map(|&j| u[j as usize][c]).sum();
            let new = (f[i][c] + sum) / cell.k;
            largest = largest.max((new - u[i][c]).abs());
            u[i][c] = new;
        }
        largest
    }

    /// Red-black Gauss-Seidel on `k u_i - sum u_j = f_i`; returns the largest update.
    fn smooth(&self, u: &mut [[f32; 3]], f: &[[f32; 3]], sweeps: usize) -> f32 {
        let mut largest = 0f32;
        for _ in 0..sweeps {
            largest = self.cells.iter().fold(0f32, |m, cell| m.max(Self::relax(cell, u, f)));
        }
        largest
    }

    fn smooth_rim(&self, u: &mut [[f32; 3]], f: &[[f32; 3]], sweeps: usize) {
        for _ in 0..sweeps {
            for &p in &self.rim {
                Self::relax(&self.cells[p], u, f);
            }
        }
    }

    #[inline]
    fn residual_at(cell: &Cell, u: &[[f32; 3]], f: &[[f32; 3]]) -> [f32; 3] {
        let i = cell.index as usize;
        std::array::from_fn(|c| {
            let sum: f32 = cell.nbr.iter().map(|&j| u[j as usize][c]).sum();
            f[i][c] + sum - cell.k * u[i][c]
        })
    }

    fn max_residual(&self, u: &[[f32; 3]], f: &[[f32; 3]]) -> f32 {
        self.cells
            .iter()
            .flat_map(|cell| Self::residual_at(cell, u, f))
            .fold(0f32, |m, v| m.max(v.abs()))
    }
}

/// One V-cycle on `grid`; `u` and `f` carry the spare cell at the end.
fn v_cycle(grid: &Grid, u: &mut [[f32; 3]], f: &[[f32; 3]]) {
    let Some(coarse) = grid.coarse.as_deref() else {
        for _ in 0..1000 {
            if grid.smooth(u, f, 1) < 1e-6 {
                break;
            }
        }
        return;
    };
    grid.smooth(u, f, SMOOTH_SWEEPS);
    let nc = coarse.w * coarse.h;
    let mut rc = vec![[0f32; 3]; nc + 1];
    for cell in &grid.cells {
        let r = Grid::residual_at(cell, u, f);
        for &(ci, wgt) in &cell.taps {
            if coarse.free[ci as usize] {
                for c in 0..3 {
                    rc[ci as usize][c] += wgt * r[c];
                }
            }
        }
    }
    let mut e = vec![[0f32; 3]; nc + 1];
    v_cycle(coarse, &mut e, &rc);
    for cell in &grid.cells {
        let i = cell.index as usize;
        for &(ci, wgt) in &cell.taps {
            for c in 0..3 {
                u[i][c] += wgt * e[ci as usize][c];
            }
        }
    }
    grid.smooth_rim(u, f, RIM_SWEEPS);
    grid.smooth(u, f, SMOOTH_SWEEPS);
}

impl GenerationBackend for ProceduralBackend {
    fn identity(&self) -> String {
        Self::IDENTITY.to_string()
    }

    fn capabilities(&self) -> Vec<Capability> {
        vec![Capability::Generate, Capability::Outpaint, Capability::Caption]
    }

    fn generate(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<RgbImage, BackendError> {
        procedural_generate(prompt, seed, width, height)
    }

    fn outpaint(&self, image: &RgbImage, mask: &GrayImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        procedural_outpaint(image, mask, prompt, seed)
    }

    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        Ok(procedural_caption(image))
    }
}

const ROOMS: [&str; 8] = [
    "bedroom", "kitchen", "living room", "hallway", "bathroom", "dining room", "study", "staircase",
];
const OBJECTS: [&str; 8] = [
    "a bed", "a wooden table", "a couch", "a large window", "a mirror", "a bookshelf", "a lamp", "a painting",
];
const EXTRAS: [&str; 8] = [
    "a dresser", "two chairs", "a rug", "a plant", "a door", "a television", "a sink", "a fireplace",
];

/// Deterministic room description derived from the image bytes.
pub fn procedural_caption(image: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image.width().to_le_bytes());
    hasher.update(image.height().to_le_bytes());
    hasher.update(image.as_raw());
    let d = hasher.finalize();
    format!(
        "a {} with {} and {}",
        ROOMS[d[0] as usize % ROOMS.len()],
        OBJECTS[d[1] as usize % OBJECTS.len()],
        EXTRAS[d[2] as usize % EXTRAS.len()]
    )
}
