use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use image::RgbImage;
use log::{info, warn};
use panosynth_core::augment::{
    augment_files, read_trajectories, select_scan_subset, AugmentConfig, EnvRegistry, ManifestRecord, SamplingMode,
    VariantChoice,
};
use panosynth_core::backend::http::BASE_URL_ENV;
use panosynth_core::backend::{Capability, GenerationBackend, HttpBackend, ProceduralBackend};
use panosynth_core::canvas::{EquirectCanvas, COVERAGE_SUFFIX, PANO_SUFFIX};
use panosynth_core::captions::{caption_views, CaptionError, CaptionKey, CaptionStore};
use panosynth_core::engine::env::{
    read_provenance, view_file_name, write_views, DONE_FILE, PANORAMA_BASE, PROVENANCE_FILE,
};
use panosynth_core::engine::pool::run_jobs;
use panosynth_core::engine::{discretize_canvas, generate_panorama, PanoEnvironment};
use panosynth_core::ViewIndex;
use serde::Serialize;
use serde_json::json;

use crate::config::{required, BackendKind, PipelineConfig};
use crate::{
    emit, AugmentArgs, BackendArgs, DiscretizeArgs, GenerateArgs, IngestArgs, Outcome, PreviewArgs, StatsArgs,
    UsageError,
};

pub const REGISTRY_FILE: &str = "registry.jsonl";

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Bernoulli,
    ExactCount,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum VariantArg {
    First,
    UniformRandom,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn make_backend(
    config: &PipelineConfig,
    args: &BackendArgs,
    needs: &[Capability],
) -> anyhow::Result<Arc<dyn GenerationBackend>> {
    let backend: Arc<dyn GenerationBackend> = match args.backend.unwrap_or(config.backend.kind) {
        BackendKind::Procedural => Arc::new(ProceduralBackend),
        BackendKind::Http => {
            let url = args
                .backend_url
                .clone()
                .or_else(|| config.backend.url.clone())
                .or_else(|| std::env::var(BASE_URL_ENV).ok())
                .ok_or_else(|| usage(format!("the http backend needs --backend-url or {BASE_URL_ENV}")))?;
            let client = HttpBackend::connect(config.backend.http_config(url.clone()))
                .with_context(|| format!("backend at {url} is not usable"))?;
            Arc::new(client)
        }
    };
    for c in needs {
        if !backend.supports(*c) {
            bail!("backend {} lacks the {c:?} capability", backend.identity());
        }
    }
    info!("backend: {}", backend.identity());
    Ok(backend)
}

/// Parses `view_<h>_<e>.png`.
fn parse_view_file(name: &str) -> Option<ViewIndex> {
    let stem = name.strip_prefix("view_")?.strip_suffix(".png")?;
    let (h, e) = stem.split_once('_')?;
    ViewIndex::new(h.parse().ok()?, e.parse().ok()?).ok()
}

pub fn ingest(config: &PipelineConfig, a: IngestArgs, json: bool) -> Outcome {
    let store_path = required(a.store, &config.paths.captions, "store")?;
    if a.input.is_empty() && a.images.is_none() {
        return Err(usage("give --input files, --images, or both"));
    }
    let mut store = CaptionStore::new();
    if store_path.exists() {
        store.merge_file(&store_path)?;
    }
    let (mut lines, mut duplicates) = (0, 0);
    for input in &a.input {
        let r = store.merge_file(input)?;
        lines += r.lines;
        duplicates += r.duplicates;
    }
    if let Some(parent) = store_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    store.write(&store_path)?;

    let (mut captioned, mut resumed, mut failures) = (0, 0, Vec::new());
    if let Some(dir) = &a.images {
        let (scan, viewpoint) = (a.scan.clone().unwrap_or_default(), a.viewpoint.clone().unwrap_or_default());
        let mut images = Vec::new();
        let mut names: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter_map(|n| parse_view_file(&n).map(|v| (v, n)))
            .collect();
        names.sort();
        for (view, name) in names {
            let img = image::open(dir.join(&name)).with_context(|| format!("reading {name}"))?.into_rgb8();
            let key = CaptionKey {
                scan_id: scan.clone(),
                viewpoint_id: viewpoint.clone(),
                view,
            };
            images.push((key, img));
        }
        let backend = make_backend(config, &a.backend, &[Capability::Caption])?;
        let batch = match caption_views(&mut store, &store_path, &images, backend.as_ref()) {
            Ok(b) => b,
            Err(e @ CaptionError::Interrupted { .. }) => {
                return Err(anyhow!(e).context("captioning stopped; re-run to resume"));
            }
            Err(e) => return Err(e.into()),
        };
        captioned = batch.records.len();
        resumed = batch.resumed;
        failures = batch.failures.iter().map(|(k, e)| format!("{k}: {e}")).collect();
        store.write(&store_path)?;
    }

    emit(
        json,
        &json!({
            "store": store_path,
            "lines_read": lines,
            "duplicates": duplicates,
            "records": store.len(),
            "viewpoints": store.viewpoint_count(),
            "complete_viewpoints": store.complete_count(),
            "captioned": captioned,
            "resumed": resumed,
            "caption_failures": failures.len(),
            "failures": failures,
        }),
    );
    Ok(failures.is_empty())
}

fn safe_component(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\'])
}

/// Every finished `<scan>/<viewpoint>` environment under `out`, with paths
/// relative to `out`.
fn scan_environments(out: &Path) -> anyhow::Result<EnvRegistry> {
    let mut reg = EnvRegistry::new();
    let sorted = |dir: &Path| -> anyhow::Result<Vec<String>> {
        let mut v: Vec<String> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        v.sort();
        Ok(v)
    };
    for scan in sorted(out)? {
        for vp in sorted(&out.join(&scan))? {
            if PanoEnvironment::is_complete(&out.join(&scan).join(&vp)) {
                reg.insert(&scan, &vp, Path::new(&scan).join(&vp));
            }
        }
    }
    Ok(reg)
}

#[derive(Serialize)]
struct Failure {
    scan: String,
    viewpoint: String,
    error: String,
}

enum JobResult {
    Generated,
    Skipped,
    Failed(String),
}

pub fn generate(config: &PipelineConfig, a: GenerateArgs, json: bool) -> Outcome {
    let captions = required(a.captions, &config.paths.captions, "captions")?;
    let out = required(a.out, &config.paths.out_dir, "out")?;
    let mut outpaint = config.outpaint.clone();
    if let Some(seed) = a.seed {
        outpaint.seed = seed;
    }
    outpaint.validate().map_err(|e| usage(e.to_string()))?;
    let workers = a.workers.unwrap_or(config.workers).max(1);
    let backend = make_backend(config, &a.backend, &[Capability::Generate, Capability::Outpaint])?;
    let (store, _) = CaptionStore::ingest(&captions)?;

    let scans: BTreeSet<&str> = a.scan.iter().map(String::as_str).collect();
    let viewpoints: BTreeSet<&str> = a.viewpoint.iter().map(String::as_str).collect();
    let targets: Vec<(String, String)> = store
        .viewpoints()
        .filter(|(s, v)| (scans.is_empty() || scans.contains(s)) && (viewpoints.is_empty() || viewpoints.contains(v)))
        .map(|(s, v)| (s.to_string(), v.to_string()))
        .collect();
    info!(
        "{} viewpoints selected, {workers} workers, config {}",
        targets.len(),
        outpaint.hash()
    );
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let results = run_jobs(targets.clone(), workers, |_, (scan, vp)| {
        if !safe_component(&scan) || !safe_component(&vp) {
            return JobResult::Failed("identifier is not a valid directory name".into());
        }
        let dir = out.join(&scan).join(&vp);
        if PanoEnvironment::is_complete(&dir) {
            return JobResult::Skipped;
        }
        let Some(caps) = store.view_captions(&scan, &vp) else {
            return JobResult::Failed("captions do not cover all 36 views".into());
        };
        let started = std::time::Instant::now();
        match generate_panorama(&scan, &vp, &caps, &outpaint, backend.as_ref()).and_then(|env| env.save(&dir)) {
            Ok(()) => {
                info!("{scan}/{vp} done in {:.1?}", started.elapsed());
                JobResult::Generated
            }
            Err(e) => JobResult::Failed(e.to_string()),
        }
    });

    let (mut generated, mut skipped, mut failures) = (0, 0, Vec::new());
    for ((scan, viewpoint), r) in targets.into_iter().zip(results) {
        match r {
            JobResult::Generated => generated += 1,
            JobResult::Skipped => skipped += 1,
            JobResult::Failed(error) => {
                warn!("{scan}/{viewpoint}: {error}");
                failures.push(Failure { scan, viewpoint, error });
            }
        }
    }
    let registry = scan_environments(&out)?;
    registry.write(&out.join(REGISTRY_FILE))?;

    emit(
        json,
        &json!({
            "generated": generated,
            "skipped": skipped,
            "failed": failures.len(),
            "environments": registry.env_count(),
            "config_hash": outpaint.hash(),
            "backend": backend.identity(),
            "failures": failures,
        }),
    );
    Ok(failures.is_empty())
}

pub fn discretize(_config: &PipelineConfig, a: DiscretizeArgs, json: bool) -> Outcome {
    let mut dirs = a.env.clone();
    if let Some(reg) = &a.registry {
        dirs.extend(EnvRegistry::read(reg)?.lines().map(|l| l.env_dir));
    }
    if dirs.is_empty() {
        return Err(usage("give --env directories or a --registry"));
    }
    let (mut views, mut failures) = (0, Vec::new());
    for dir in &dirs {
        let result = (|| -> anyhow::Result<usize> {
            if !PanoEnvironment::is_complete(dir) {
                bail!("no {DONE_FILE} marker");
            }
            let prov = read_provenance(dir)?;
            let canvas = EquirectCanvas::load(&dir.join(PANORAMA_BASE))?;
            let cut = discretize_canvas(&canvas, &prov.config.view_grid)?;
            write_views(dir, &cut)?;
            Ok(cut.len())
        })();
        match result {
            Ok(n) => views += n,
            Err(e) => {
                warn!("{}: {e:#}", dir.display());
                failures.push(format!("{}: {e:#}", dir.display()));
            }
        }
    }
    emit(
        json,
        &json!({
            "environments": dirs.len() - failures.len(),
            "views": views,
            "failed": failures.len(),
            "failures": failures,
        }),
    );
    Ok(failures.is_empty())
}

pub fn augment(config: &PipelineConfig, a: AugmentArgs, json: bool) -> Outcome {
    let c = &config.augment;
    let ratio = a.ratio.unwrap_or(c.ratio);
    if !(0.0..=1.0).contains(&ratio) {
        return Err(usage(format!("--ratio {ratio} is outside [0, 1]")));
    }
    let trajectories = required(a.trajectories, &config.paths.trajectories, "trajectories")?;
    let registry_path = required(a.registry, &config.paths.registry, "registry")?;
    let manifest = required(a.manifest, &config.paths.manifest, "manifest")?;
    let stats_path = required(a.stats, &config.paths.stats, "stats")?;
    let seed = a.seed.unwrap_or(c.seed);
    let mode = match a.mode {
        Some(ModeArg::Bernoulli) => SamplingMode::Bernoulli,
        Some(ModeArg::ExactCount) => SamplingMode::ExactCount,
        None => c.mode,
    };
    let variant_choice = match a.variant_choice {
        Some(VariantArg::First) => VariantChoice::First,
        Some(VariantArg::UniformRandom) => VariantChoice::UniformRandom,
        None => c.variant_choice,
    };

    let registry = EnvRegistry::load(&registry_path)?;
    let scan_subset = match a.scans.or(c.scans) {
        None => None,
        Some(n) => {
            let scans: Vec<String> = read_trajectories(&trajectories)?.into_iter().map(|(_, t)| t.scan).collect();
            let distinct = scans.iter().collect::<BTreeSet<_>>().len();
            if n > distinct {
                return Err(usage(format!("--scans {n} exceeds the {distinct} scans in the trajectories")));
            }
            Some(select_scan_subset(&scans, n, seed)?)
        }
    };
    let augment = AugmentConfig {
        ratio_m: ratio,
        mode,
        scan_subset,
        seed,
        variant_choice,
    };
    let workers = a.workers.unwrap_or(config.workers).max(1);
    let out = augment_files(&trajectories, &registry, &augment, workers, &manifest, &stats_path)?;
    let s = &out.stats;
    emit(
        json,
        &json!({
            "trajectories": s.trajectories,
            "viewpoints": s.viewpoints,
            "replaced": s.replaced,
            "skipped": s.skipped,
            "global_ratio": s.global_ratio,
            "subset_scans": s.subset_scans.as_ref().map(|s| s.len()),
            "config_hash": s.config_hash,
            "manifest": manifest,
            "stats": stats_path,
        }),
    );
    Ok(true)
}

fn manifest_stats(path: &Path) -> anyhow::Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut trajectories, mut viewpoints, mut replaced, mut env_paths) = (0usize, 0usize, 0usize, 0usize);
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: ManifestRecord =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        trajectories += 1;
        viewpoints += r.bitmask.len();
        replaced += r.bitmask.chars().filter(|c| *c == '1').count();
        env_paths += r.env_paths.len();
    }
    let ratio = if viewpoints == 0 { 0.0 } else { replaced as f64 / viewpoints as f64 };
    Ok(json!({
        "trajectories": trajectories,
        "viewpoints": viewpoints,
        "replaced": replaced,
        "env_paths": env_paths,
        "ratio": ratio,
    }))
}

pub fn stats(config: &PipelineConfig, a: StatsArgs, json: bool) -> Outcome {
    let captions = a.captions.or_else(|| config.paths.captions.clone());
    let registry = a.registry.or_else(|| config.paths.registry.clone());
    let manifest = a.manifest.or_else(|| config.paths.manifest.clone());
    if captions.is_none() && registry.is_none() && manifest.is_none() {
        return Err(usage("give at least one of --captions, --registry, --manifest"));
    }
    let mut out = serde_json::Map::new();
    if let Some(p) = captions {
        let (store, report) = CaptionStore::ingest(&p)?;
        out.insert(
            "captions".into(),
            json!({
                "records": store.len(),
                "viewpoints": store.viewpoint_count(),
                "complete_viewpoints": store.complete_count(),
                "duplicates": report.duplicates,
            }),
        );
    }
    if let Some(p) = registry {
        let reg = EnvRegistry::read(&p)?;
        out.insert(
            "registry".into(),
            json!({
                "viewpoints": reg.viewpoint_count(),
                "environments": reg.env_count(),
                "view_images": reg.view_image_count(),
            }),
        );
    }
    if let Some(p) = manifest {
        out.insert("manifest".into(), manifest_stats(&p)?);
    }
    emit(json, &serde_json::Value::Object(out));
    Ok(true)
}

/// Files a finished environment directory must contain.
fn missing_files(dir: &Path) -> Vec<String> {
    let base = PANORAMA_BASE;
    let mut want: Vec<String> = vec![
        DONE_FILE.into(),
        PROVENANCE_FILE.into(),
        format!("{base}{PANO_SUFFIX}"),
        format!("{base}{COVERAGE_SUFFIX}"),
    ];
    want.extend(ViewIndex::all().map(view_file_name));
    want.into_iter().filter(|f| !dir.join(f).is_file()).collect()
}

pub fn preview(a: PreviewArgs, json: bool) -> Outcome {
    let missing = missing_files(&a.env);
    if !missing.is_empty() {
        bail!("{} is not a valid environment; missing: {}", a.env.display(), missing.join(", "));
    }
    let env = PanoEnvironment::load(&a.env)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let pano_path = a.out.join("preview_panorama.png");
    env.canvas.pixels().save(&pano_path).with_context(|| format!("writing {}", pano_path.display()))?;

    let tiles: Vec<&RgbImage> = (0..12)
        .map(|h| env.views[&ViewIndex::new(h, 0).expect("valid index")].pixels())
        .collect();
    let (tw, th) = tiles[0].dimensions();
    let mut strip = RgbImage::new(tw * tiles.len() as u32, th);
    for (k, tile) in tiles.iter().enumerate() {
        image::imageops::replace(&mut strip, *tile, (k as u32 * tw) as i64, 0);
    }
    let strip_path = a.out.join("preview_strip.png");
    strip.save(&strip_path).with_context(|| format!("writing {}", strip_path.display()))?;

    emit(json, &json!({ "panorama": pano_path, "strip": strip_path }));
    Ok(true)
}
