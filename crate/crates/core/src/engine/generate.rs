use std::collections::BTreeMap;

use log::debug;

use super::env::{PanoEnvironment, Provenance, StepRecord};
use super::plan::{plan_traversal, StepKind, TraversalStep};
use super::{EngineError, OutpaintConfig, PartialCanvas};
use crate::backend::{BackendError, GenerationBackend};
use crate::canvas::{composite_view, coverage_fraction, extract_view, EquirectCanvas, ViewImage};
use crate::ViewIndex;

/// One caption per grid view.
pub type ViewCaptions = BTreeMap<ViewIndex, String>;

/// State handed to a [`StepObserver`] after each step.
pub struct StepSnapshot<'a> {
    pub index: usize,
    pub step: &'a TraversalStep,
    pub before: &'a EquirectCanvas,
    pub after: &'a EquirectCanvas,
    /// Partial view sent to the backend (None for the seed).
    pub partial: Option<&'a ViewImage>,
    pub reply: &'a image::RgbImage,
}

pub type StepObserver<'o> = dyn FnMut(&StepSnapshot<'_>) + 'o;

fn check_captions(captions: &ViewCaptions) -> Result<(), EngineError> {
    match ViewIndex::all().find(|i| captions.get(i).is_none_or(|c| c.trim().is_empty())) {
        Some(missing) => Err(EngineError::MissingCaption(missing)),
        None => Ok(()),
    }
}

/// Runs the full traversal for one viewpoint.
pub fn generate_panorama(
    scan_id: &str,
    viewpoint_id: &str,
    captions: &ViewCaptions,
    config: &OutpaintConfig,
    backend: &dyn GenerationBackend,
) -> Result<PanoEnvironment, EngineError> {
    generate_panorama_observed(scan_id, viewpoint_id, captions, config, backend, None)
}

/// [`generate_panorama`] with a callback that sees the canvas before and
/// after every step. Snapshots are only taken when `observer` is set.
pub fn generate_panorama_observed(
    scan_id: &str,
    viewpoint_id: &str,
    captions: &ViewCaptions,
    config: &OutpaintConfig,
    backend: &dyn GenerationBackend,
    mut observer: Option<&mut StepObserver<'_>>,
) -> Result<PanoEnvironment, EngineError> {
    check_captions(captions)?;
    let plan = plan_traversal(config)?;
    let mut canvas = EquirectCanvas::new(config.canvas_width, config.canvas_height())?;
    let mut records = Vec::with_capacity(plan.len());

    for (index, step) in plan.iter().enumerate() {
        let prompt = &captions[&step.prompt_source];
        let seed = config.step_seed(index);
        let view = &step.view;
        let fail = |canvas: &EquirectCanvas, source: BackendError| EngineError::Backend {
            step: index,
            source,
            partial: Box::new(PartialCanvas::of(canvas.clone())),
        };

        let (partial, reply) = match step.kind {
            StepKind::Seed => {
                let img = backend
                    .generate(prompt, seed, view.width_px, view.height_px)
                    .map_err(|e| fail(&canvas, e))?;
                (None, img)
            }
            StepKind::Outpaint => {
                let partial = extract_view(&canvas, view, config.coverage_threshold)?;
                let img = backend
                    .outpaint(partial.pixels(), &partial.unknown_mask(), prompt, seed)
                    .map_err(|e| fail(&canvas, e))?;
                (Some(partial), img)
            }
        };
        if reply.dimensions() != (view.width_px, view.height_px) {
            return Err(fail(
                &canvas,
                BackendError::ProtocolViolation(format!(
                    "step {index}: backend returned {}x{}",
                    reply.width(),
                    reply.height()
                )),
            ));
        }
        let known_px = partial.as_ref().map_or(0, |p| p.valid_count());
        let before = observer.as_ref().map(|_| canvas.clone());
        let generated = ViewImage::complete(reply);
        composite_view(&mut canvas, view, &generated, config.blend_width_px)?;
        if let (Some(obs), Some(before)) = (observer.as_mut(), before.as_ref()) {
            obs(&StepSnapshot {
                index,
                step,
                before,
                after: &canvas,
                partial: partial.as_ref(),
                reply: generated.pixels(),
            });
        }
        debug!(
            "{scan_id}/{viewpoint_id} step {index}: {:?} at ({:.1}, {:.1}) from {}",
            step.kind,
            view.center.heading_deg(),
            view.center.elevation_deg(),
            step.prompt_source
        );
        records.push(StepRecord {
            index,
            kind: step.kind,
            heading_deg: view.center.heading_deg(),
            elevation_deg: view.center.elevation_deg(),
            prompt_source: step.prompt_source,
            prompt: prompt.clone(),
            seed,
            known_px,
        });
    }

    let provenance = Provenance::new(scan_id, viewpoint_id, backend.identity(), config.clone(), captions, records);
    PanoEnvironment::from_canvas(scan_id, viewpoint_id, canvas, provenance)
}

/// Reference panorama built without outpainting: every step's view is
/// generated independently from its own grid caption and pasted with a hard
/// edge, in traversal order.
pub fn generate_stitched(
    captions: &ViewCaptions,
    config: &OutpaintConfig,
    backend: &dyn GenerationBackend,
) -> Result<EquirectCanvas, EngineError> {
    check_captions(captions)?;
    let plan = plan_traversal(config)?;
    let mut canvas = EquirectCanvas::new(config.canvas_width, config.canvas_height())?;
    for (index, step) in plan.iter().enumerate() {
        let own = ViewIndex::nearest(&step.view.center);
        let img = backend
            .generate(&captions[&own], config.step_seed(index), step.view.width_px, step.view.height_px)
            .map_err(|source| EngineError::Backend {
                step: index,
                source,
                partial: Box::new(PartialCanvas::of(canvas.clone())),
            })?;
        composite_view(&mut canvas, &step.view, &ViewImage::complete(img), 0.0)?;
    }
    Ok(canvas)
}

/// Regenerates an environment from its recorded provenance.
pub fn regenerate(provenance: &Provenance, backend: &dyn GenerationBackend) -> Result<PanoEnvironment, EngineError> {
    generate_panorama(
        &provenance.scan_id,
        &provenance.viewpoint_id,
        &provenance.caption_map(),
        &provenance.config,
        backend,
    )
}

impl PartialCanvas {
    pub(crate) fn of(canvas: EquirectCanvas) -> Self {
        let band = coverage_fraction(&canvas, (-60.0, 60.0)).unwrap_or(0.0);
        Self { canvas, band_coverage: band }
    }
}
