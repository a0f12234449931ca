use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::ViewCaptions;
use super::plan::StepKind;
use super::{EngineError, OutpaintConfig};
use crate::canvas::{extract_view, EquirectCanvas, ViewImage};
use crate::{ViewGrid, ViewIndex};

pub const PANORAMA_BASE: &str = "panorama";
pub const PROVENANCE_FILE: &str = "provenance.json";
/// Written last; a directory without it is incomplete.
pub const DONE_FILE: &str = "DONE";
pub const PROVENANCE_FORMAT: u32 = 1;

/// Coverage threshold used when cutting a finished panorama into views.
/// Edge pixels of a grid view sample a bilinear neighbourhood that reaches
/// just outside that view's own footprint, so 0.5 would reject some of them.
pub const DISCRETIZE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub kind: StepKind,
    pub heading_deg: f64,
    pub elevation_deg: f64,
    pub prompt_source: ViewIndex,
    pub prompt: String,
    pub seed: u64,
    /// Valid pixels in the partial view sent to the backend.
    pub known_px: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionEntry {
    pub view: ViewIndex,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: u32,
    pub scan_id: String,
    pub viewpoint_id: String,
    pub backend: String,
    pub config_hash: String,
    pub config: OutpaintConfig,
    pub captions: Vec<CaptionEntry>,
    pub steps: Vec<StepRecord>,
}

impl Provenance {
    pub fn new(
        scan_id: &str,
        viewpoint_id: &str,
        backend: String,
        config: OutpaintConfig,
        captions: &ViewCaptions,
        steps: Vec<StepRecord>,
    ) -> Self {
        Self {
            format: PROVENANCE_FORMAT,
            scan_id: scan_id.to_string(),
            viewpoint_id: viewpoint_id.to_string(),
            backend,
            config_hash: config.hash(),
            config,
            captions: captions
                .iter()
                .map(|(view, text)| CaptionEntry {
                    view: *view,
                    text: text.clone(),
                })
                .collect(),
            steps,
        }
    }

    pub fn caption_map(&self) -> ViewCaptions {
        self.captions.iter().map(|c| (c.view, c.text.clone())).collect()
    }
}

/// A finished panorama and its 36 discretized views.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoEnvironment {
    pub scan_id: String,
    pub viewpoint_id: String,
    pub canvas: EquirectCanvas,
    pub views: BTreeMap<ViewIndex, ViewImage>,
    pub provenance: Provenance,
}

/// Cuts `canvas` into the 36 grid views. Fails if any view has a pixel
/// the canvas does not cover.
pub fn discretize_canvas(canvas: &EquirectCanvas, grid: &ViewGrid) -> Result<BTreeMap<ViewIndex, ViewImage>, EngineError> {
    let mut views = BTreeMap::new();
    for index in ViewIndex::all() {
        let img = extract_view(canvas, &grid.view_spec(index), DISCRETIZE_THRESHOLD)?;
        if !img.is_complete() {
            return Err(EngineError::IncompleteView {
                view: index,
                valid_fraction: img.valid_fraction(),
            });
        }
        views.insert(index, img);
    }
    Ok(views)
}

pub fn discretize(env: &PanoEnvironment) -> Result<BTreeMap<ViewIndex, ViewImage>, EngineError> {
    discretize_canvas(&env.canvas, &env.provenance.config.view_grid)
}

pub fn view_file_name(index: ViewIndex) -> String {
    format!("view_{}_{}.png", index.heading_index(), index.elevation_index())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one PNG per view into `dir`.
pub fn write_views(dir: &Path, views: &BTreeMap<ViewIndex, ViewImage>) -> Result<(), EngineError> {
    for (index, img) in views {
        let path = dir.join(view_file_name(*index));
        img.pixels().save(&path).map_err(|source| EngineError::Format {
            path: path.clone(),
            message: source.to_string(),
        })?;
    }
    Ok(())
}

pub fn read_provenance(dir: &Path) -> Result<Provenance, EngineError> {
    let path = dir.join(PROVENANCE_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| EngineError::Format {
        path: path.clone(),
        message: e.to_string(),
    })
}

impl PanoEnvironment {
    pub fn from_canvas(
        scan_id: &str,
        viewpoint_id: &str,
        canvas: EquirectCanvas,
        provenance: Provenance,
    ) -> Result<Self, EngineError> {
        let views = discretize_canvas(&canvas, &provenance.config.view_grid)?;
        Ok(Self {
            scan_id: scan_id.to_string(),
            viewpoint_id: viewpoint_id.to_string(),
            canvas,
            views,
            provenance,
        })
    }

    pub fn is_complete(dir: &Path) -> bool {
        dir.join(DONE_FILE).is_file()
    }

    /// Writes the environment into `dir`, finishing with the `DONE` marker.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let done = dir.join(DONE_FILE);
        if done.exists() {
            fs::remove_file(&done).map_err(io_err(&done))?;
        }
        self.canvas.save(&dir.join(PANORAMA_BASE))?;
        write_views(dir, &self.views)?;
        let prov = dir.join(PROVENANCE_FILE);
        let mut json = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        json.push('\n');
        fs::write(&prov, json).map_err(io_err(&prov))?;
        fs::write(&done, b"").map_err(io_err(&done))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        if !Self::is_complete(dir) {
            return Err(EngineError::Format {
                path: dir.to_path_buf(),
                message: format!("no {DONE_FILE} marker; generation did not finish"),
            });
        }
        let provenance = read_provenance(dir)?;
        let canvas = EquirectCanvas::load(&dir.join(PANORAMA_BASE))?;
        let mut views = BTreeMap::new();
        for index in ViewIndex::all() {
            let path = dir.join(view_file_name(index));
            let img = image::open(&path)
                .map_err(|e| EngineError::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .into_rgb8();
            views.insert(index, ViewImage::complete(img));
        }
        Ok(Self {
            scan_id: provenance.scan_id.clone(),
            viewpoint_id: provenance.viewpoint_id.clone(),
            canvas,
            views,
            provenance,
        })
    }

    pub fn view_paths(dir: &Path) -> Vec<PathBuf> {
        ViewIndex::all().map(|i| dir.join(view_file_name(i))).collect()
    }
}
