use serde::{Deserialize, Serialize};

use super::{EngineError, OutpaintConfig};
use crate::geometry::ViewProjector;
use crate::{SphericalDirection, ViewIndex, ViewSpec};

/// Side of the pixel lattice used to estimate overlap while planning.
const PLAN_SAMPLES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Seed,
    Outpaint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalStep {
    pub view: ViewSpec,
    /// Grid view whose caption conditions this step.
    pub prompt_source: ViewIndex,
    pub kind: StepKind,
    /// Planned fraction of the view already covered by earlier steps.
    pub known_fraction: f64,
}

/// Seed at heading 0, a rightward ring that closes on the seed, then an up
/// and a down step at every ring heading.
pub fn plan_traversal(config: &OutpaintConfig) -> Result<Vec<TraversalStep>, EngineError> {
    config.validate()?;
    let grid = &config.view_grid;
    let ring_step = config.p_r * grid.hfov_deg;
    let ring_len = ((360.0 / ring_step) - 1e-9).ceil().max(1.0) as usize;
    let up = config.p_u * grid.vfov_deg;
    let down = -config.p_d * grid.vfov_deg;

    let mut centers = Vec::with_capacity(3 * ring_len);
    for k in 0..ring_len {
        centers.push((k as f64 * ring_step, 0.0));
    }
    for k in 0..ring_len {
        let h = k as f64 * ring_step;
        centers.push((h, up));
        centers.push((h, down));
    }

    let mut planned: Vec<TraversalStep> = Vec::with_capacity(centers.len());
    let mut projectors: Vec<ViewProjector<f64>> = Vec::with_capacity(centers.len());
    for (index, (h, e)) in centers.into_iter().enumerate() {
        let center = SphericalDirection::new(h, e).map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        let view = grid
            .view_at(center)
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        let step = if index == 0 {
            TraversalStep {
                view,
                prompt_source: ViewIndex::nearest(&center),
                kind: StepKind::Seed,
                known_fraction: 0.0,
            }
        } else {
            let (known_fraction, exposed) = overlap(&view, &projectors);
            if known_fraction < config.min_known_fraction {
                return Err(EngineError::InsufficientOverlap {
                    step: index,
                    known_fraction,
                    required: config.min_known_fraction,
                });
            }
            TraversalStep {
                view,
                prompt_source: ViewIndex::nearest(&exposed.unwrap_or(center)),
                kind: StepKind::Outpaint,
                known_fraction,
            }
        };
        projectors.push(step.view.projector());
        planned.push(step);
    }
    Ok(planned)
}

/// Fraction of `view` inside earlier frustums, and the centroid direction
/// of the rest (None when nothing is new).
fn overlap(view: &ViewSpec, earlier: &[ViewProjector<f64>]) -> (f64, Option<SphericalDirection>) {
    let projector = view.projector();
    let (sx, sy) = (
        view.width_px as f64 / PLAN_SAMPLES as f64,
        view.height_px as f64 / PLAN_SAMPLES as f64,
    );
    let mut known = 0usize;
    let mut sum = [0f64; 3];
    for j in 0..PLAN_SAMPLES {
        for i in 0..PLAN_SAMPLES {
            let ray = projector.ray((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy);
            if earlier.iter().any(|p| p.project_vector(&ray).in_frustum) {
                known += 1;
            } else {
                let n = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
                for k in 0..3 {
                    sum[k] += ray[k] / n;
                }
            }
        }
    }
    let total = (PLAN_SAMPLES * PLAN_SAMPLES) as usize;
    let centroid = if known < total {
        SphericalDirection::from_vector(sum)
    } else {
        None
    };
    (known as f64 / total as f64, centroid)
}
