mod common;

use std::fs;
use std::io::Write;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use common::{brute_nearest, Counting};
use image::RgbImage;
use panosynth_core::backend::mock::MockServer;
use panosynth_core::backend::procedural::{procedural_caption, procedural_generate};
use panosynth_core::backend::{HttpBackend, HttpConfig, ProceduralBackend};
use panosynth_core::captions::{
    caption_views, read_checkpoint, CaptionError, CaptionKey, CaptionRecord, CaptionSource, CaptionStore,
    CHECKPOINT_FILE, STORE_FILE,
};
use panosynth_core::{SphericalDirection, ViewIndex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(scan: &str, vp: &str, h: i64, e: i64, text: &str) -> String {
    format!(
        r#"{{"scan_id":"{scan}","viewpoint_id":"{vp}","heading_index":{h},"elevation_index":{e},"text":"{text}","source":"imported"}}"#
    )
}

fn full_viewpoint(scan: &str, vp: &str) -> Vec<String> {
    ViewIndex::all()
        .map(|i| {
            let (h, e) = (i.heading_index() as i64, i.elevation_index() as i64);
            line(scan, vp, h, e, &format!("{vp} view {h} {e}"))
        })
        .collect()
}

fn write_lines(path: &std::path::Path, lines: &[String]) {
    let mut f = fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

#[test]
fn complete_viewpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    write_lines(&path, &full_viewpoint("S1", "vpA"));
    let (store, report) = CaptionStore::ingest(&path).unwrap();
    assert_eq!((report.lines, report.duplicates), (36, 0));
    assert!(store.is_complete("S1", "vpA"));
    assert_eq!(store.view_captions("S1", "vpA").unwrap().len(), 36);
}

#[test]
fn duplicates_keep_the_later_text() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    write_lines(
        &path,
        &[
            line("S", "v", 2, 1, "old text"),
            line("S", "v", 3, 0, "other"),
            line("S", "v", 2, 1, "new   text"),
        ],
    );
    let (store, report) = CaptionStore::ingest(&path).unwrap();
    assert_eq!(report.duplicates, 1);
    assert_eq!(store.len(), 2);
    assert_eq!(store.get("S", "v", ViewIndex::new(2, 1).unwrap()).unwrap().text, "new text");
}

#[test]
fn malformed_lines_report_their_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    let cases = [
        "{not json".to_string(),
        line("S", "v", 12, 0, "heading out of range"),
        line("S", "v", 0, 2, "elevation out of range"),
        line("S", "v", 0, 0, "  "),
        r#"{"scan_id":"S","viewpoint_id":"v","heading_index":0,"elevation_index":0,"text":"x","source":"imported","extra":1}"#
            .to_string(),
    ];
    for bad in cases {
        write_lines(&path, &[line("S", "v", 1, 0, "fine"), bad.clone()]);
        match CaptionStore::ingest(&path) {
            Err(CaptionError::Parse { line, .. }) => assert_eq!(line, 2, "{bad}"),
            other => panic!("{bad}: expected a parse error, got {other:?}"),
        }
    }
    fs::write(&path, "").unwrap();
    assert!(CaptionStore::ingest(&path).unwrap().0.is_empty());
    assert!(matches!(
        CaptionStore::ingest(&dir.path().join("absent.jsonl")),
        Err(CaptionError::Io { .. })
    ));
}

#[test]
fn write_then_ingest_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = CaptionStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..300 {
        let view = ViewIndex::new(rng.random_range(0..12), rng.random_range(-1..=1)).unwrap();
        store
            .insert(CaptionRecord {
                scan_id: format!("scan{}", k % 7),
                viewpoint_id: format!("vp{}", k % 13),
                view,
                text: format!("a \"quoted\" room\twith ünïcode {k}"),
                source: if k % 2 == 0 { CaptionSource::Service } else { CaptionSource::Imported },
            })
            .unwrap();
    }
    let path = dir.path().join(STORE_FILE);
    store.write(&path).unwrap();
    let (back, _) = CaptionStore::ingest(&path).unwrap();
    assert_eq!(back, store);
    let first = fs::read(&path).unwrap();
    back.write(&path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn nearest_caption_matches_exhaustive_scan() {
    let mut store = CaptionStore::new();
    for i in ViewIndex::all() {
        store
            .insert(CaptionRecord {
                scan_id: "S".into(),
                viewpoint_id: "v".into(),
                view: i,
                text: format!("{i}"),
                source: CaptionSource::Imported,
            })
            .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let h = rng.random_range(0.0..360.0);
        let e = (rng.random_range(-1.0f64..1.0)).asin().to_degrees();
        let got = store.nearest_caption("S", "v", &SphericalDirection::new(h, e).unwrap()).unwrap();
        assert_eq!(got.view, brute_nearest(h, e), "({h}, {e})");
    }
    // grid centers and the equidistant midpoints
    for i in ViewIndex::all() {
        let c = i.center::<f64>();
        assert_eq!(store.nearest_caption("S", "v", &c).unwrap().view, i);
    }
    let mid = SphericalDirection::new(15.0, 0.0).unwrap();
    assert_eq!(store.nearest_caption("S", "v", &mid).unwrap().view, ViewIndex::new(0, 0).unwrap());
}

proptest! {
    #[test]
    fn nearest_caption_on_sparse_viewpoints(
        mask in proptest::collection::vec(any::<bool>(), 36),
        h in 0.0f64..360.0,
        z in -1.0f64..1.0,
    ) {
        prop_assume!(mask.iter().any(|b| *b));
        let e = z.asin().to_degrees();
        let mut store = CaptionStore::new();
        let present: Vec<ViewIndex> = ViewIndex::all().zip(&mask).filter(|(_, m)| **m).map(|(i, _)| i).collect();
        for &i in &present {
            store.insert(CaptionRecord {
                scan_id: "S".into(),
                viewpoint_id: "v".into(),
                view: i,
                text: "t".into(),
                source: CaptionSource::Imported,
            }).unwrap();
        }
        // exhaustive oracle over the present views only
        let dir = SphericalDirection::new(h, e).unwrap();
        let v = dir.to_unit_vector();
        let mut best: Option<(f64, ViewIndex)> = None;
        for &i in &present {
            let c = i.center::<f64>().to_unit_vector();
            let dot = (v[0] * c[0] + v[1] * c[1] + v[2] * c[2]).clamp(-1.0, 1.0);
            let d = dot.acos().to_degrees();
            if best.is_none_or(|(bd, _)| d < bd - 1e-9) {
                best = Some((d, i));
            }
        }
        prop_assert_eq!(store.nearest_caption("S", "v", &dir).unwrap().view, best.unwrap().1);
    }
}

#[test]
fn full_scale_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(STORE_FILE);
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&path).unwrap());
        for v in 0..7644 {
            let scan = format!("scan{:02}", v % 61);
            let vp = format!("{v:032x}");
            for i in ViewIndex::all() {
                writeln!(
                    f,
                    r#"{{"scan_id":"{scan}","viewpoint_id":"{vp}","heading_index":{},"elevation_index":{},"text":"a room","source":"imported"}}"#,
                    i.heading_index(),
                    i.elevation_index()
                )
                .unwrap();
            }
        }
    }
    let t = Instant::now();
    let (store, report) = CaptionStore::ingest(&path).unwrap();
    eprintln!("ingested {} records in {:?}", report.lines, t.elapsed());
    assert_eq!(store.len(), 275_184);
    assert_eq!(store.viewpoint_count(), 7644);
    assert_eq!(store.complete_count(), 7644);
    assert_eq!(report.duplicates, 0);
}

fn keyed_images(n: usize) -> Vec<(CaptionKey, RgbImage)> {
    (0..n)
        .map(|k| {
            (
                CaptionKey {
                    scan_id: "S".into(),
                    viewpoint_id: "v".into(),
                    view: ViewIndex::new(k as i64, 0).unwrap(),
                },
                procedural_generate("img", k as u64, 24, 24).unwrap(),
            )
        })
        .collect()
}

#[test]
fn batch_of_three_against_the_mock() {
    let server = MockServer::start(Arc::new(ProceduralBackend)).unwrap();
    let backend = HttpBackend::connect(HttpConfig::new(server.url())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let images = keyed_images(3);
    let mut store = CaptionStore::new();
    let batch = caption_views(&mut store, &dir.path().join(STORE_FILE), &images, &backend).unwrap();
    assert_eq!(batch.records.len(), 3);
    assert!(batch.failures.is_empty());
    for ((key, img), r) in images.iter().zip(&batch.records) {
        assert_eq!(&r.key(), key);
        assert_eq!(r.text, procedural_caption(img));
        assert_eq!(r.source, CaptionSource::Service);
    }
    let (persisted, _) = CaptionStore::ingest(&dir.path().join(STORE_FILE)).unwrap();
    assert_eq!(persisted, store);
    assert_eq!(read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap().len(), 3);
}

#[test]
fn interrupted_batch_resumes_with_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let images = keyed_images(3);
    let mut store = CaptionStore::new();
    let mut failing = Counting::new(ProceduralBackend);
    failing.fail_from = Some(2);
    match caption_views(&mut store, &dir.path().join(STORE_FILE), &images, &failing) {
        Err(CaptionError::Interrupted { done, .. }) => assert_eq!(done, 2),
        other => panic!("expected an interruption, got {other:?}"),
    }
    assert_eq!(store.len(), 2);

    let healthy = Counting::new(ProceduralBackend);
    let batch = caption_views(&mut store, &dir.path().join(STORE_FILE), &images, &healthy).unwrap();
    assert_eq!(healthy.calls.load(Ordering::SeqCst), 1);
    assert_eq!(batch.resumed, 2);
    assert_eq!(batch.records.len(), 1);
    assert_eq!(batch.records[0].view, ViewIndex::new(2, 0).unwrap());
    let (persisted, _) = CaptionStore::ingest(&dir.path().join(STORE_FILE)).unwrap();
    assert_eq!(persisted.len(), 3);
}

#[test]
fn empty_batch_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Counting::new(ProceduralBackend);
    let batch = caption_views(&mut CaptionStore::new(), &dir.path().join(STORE_FILE), &[], &backend).unwrap();
    assert!(batch.records.is_empty());
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    assert!(!dir.path().join(STORE_FILE).exists());
}
