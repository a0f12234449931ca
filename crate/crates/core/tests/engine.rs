mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;

use common::{captions, run_engine_suite, Counting};
use panosynth_core::backend::mock::MockServer;
use panosynth_core::backend::{GenerationBackend, HttpBackend, HttpConfig, ProceduralBackend, Throttled};
use panosynth_core::engine::pool::run_jobs;
use panosynth_core::engine::{generate_panorama, EngineError, OutpaintConfig};
use panosynth_core::ViewIndex;

#[test]
fn suite_with_procedural_backend() {
    run_engine_suite(&ProceduralBackend, 1, &OutpaintConfig::default());
}

#[test]
fn suite_over_http_matches_in_process() {
    let server = MockServer::start(Arc::new(ProceduralBackend)).unwrap();
    let http = HttpBackend::connect(HttpConfig::new(server.url())).unwrap();
    let config = OutpaintConfig::default();
    let remote = run_engine_suite(&http, 2, &config);
    assert_eq!(http.drift_events(), 0);
    let local = generate_panorama("scan", "vp", &captions(2), &config, &ProceduralBackend).unwrap();
    assert!(remote.canvas == local.canvas, "wire transport changed the panorama");
}

#[test]
fn missing_caption_aborts_before_any_call() {
    let backend = Counting::new(ProceduralBackend);
    let mut caps = captions(3);
    caps.remove(&ViewIndex::new(7, -1).unwrap());
    let err = generate_panorama("s", "v", &caps, &OutpaintConfig::default(), &backend).unwrap_err();
    assert!(matches!(err, EngineError::MissingCaption(i) if i == ViewIndex::new(7, -1).unwrap()));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);

    let mut caps = captions(3);
    caps.insert(ViewIndex::new(0, 1).unwrap(), "   ".into());
    assert!(generate_panorama("s", "v", &caps, &OutpaintConfig::default(), &backend).is_err());
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn backend_failure_reports_partial_canvas() {
    let mut backend = Counting::new(ProceduralBackend);
    backend.fail_from = Some(5);
    let config = OutpaintConfig {
        canvas_width: 1024,
        view_grid: panosynth_core::ViewGrid {
            width_px: 256,
            height_px: 256,
            ..Default::default()
        },
        ..Default::default()
    };
    match generate_panorama("s", "v", &captions(4), &config, &backend) {
        Err(EngineError::Backend { step, partial, .. }) => {
            assert_eq!(step, 5);
            assert!(partial.band_coverage > 0.2 && partial.band_coverage < 0.6, "{}", partial.band_coverage);
            assert_eq!(partial.canvas.width(), 1024);
        }
        other => panic!("expected a backend error, got {other:?}"),
    }
}

#[test]
fn rejected_plan_makes_no_calls() {
    let backend = Counting::new(ProceduralBackend);
    let config = OutpaintConfig {
        p_r: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        generate_panorama("s", "v", &captions(5), &config, &backend),
        Err(EngineError::InsufficientOverlap { .. })
    ));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn concurrent_panoramas_match_sequential_ones() {
    let config = OutpaintConfig {
        canvas_width: 512,
        view_grid: panosynth_core::ViewGrid {
            width_px: 128,
            height_px: 128,
            ..Default::default()
        },
        ..Default::default()
    };
    let backend = Throttled::new(ProceduralBackend, 2);
    let jobs: Vec<u64> = (0..6).collect();
    let parallel = run_jobs(jobs.clone(), 4, |_, k| {
        generate_panorama("s", &format!("v{k}"), &captions(k), &config, &backend).unwrap()
    });
    for (k, env) in jobs.iter().zip(&parallel) {
        let alone = generate_panorama("s", &format!("v{k}"), &captions(*k), &config, &ProceduralBackend).unwrap();
        assert!(alone.canvas == env.canvas);
    }
    assert_eq!(backend.limit().in_use(), 0);
    assert_eq!(backend.identity(), ProceduralBackend.identity());
}
