mod common;

use std::fs;
use std::path::Path;

use common::{describe, run, small_config, stdout, tree, write_captions};

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(config: &Path, captions: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["--config", p(config), "generate", "--captions", p(captions), "--out", p(out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn generate_writes_environments_and_skips_finished_ones() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("scanA", "vp1"), ("scanB", "vp2")]);
    let out = dir.path().join("envs");

    let o = generate(&config, &captions, &out, &[]);
    assert!(o.status.success(), "{}", describe(&o));
    assert!(stdout(&o).contains("generated: 2"), "{}", describe(&o));
    for env in [out.join("scanA/vp1"), out.join("scanB/vp2")] {
        assert!(env.join("DONE").is_file());
        assert!(env.join("panorama.pano.png").is_file());
        assert!(env.join("panorama.cov.png").is_file());
        assert_eq!(fs::read_dir(&env).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("view_")).count(), 36);
    }
    let registry = fs::read_to_string(out.join("registry.jsonl")).unwrap();
    assert_eq!(registry.lines().count(), 2);
    assert!(registry.contains(r#""env_dir":"scanA/vp1""#), "{registry}");

    let before = tree(&out);
    let o = generate(&config, &captions, &out, &[]);
    assert!(o.status.success(), "{}", describe(&o));
    assert!(stdout(&o).contains("skipped: 2"), "{}", describe(&o));
    assert!(stdout(&o).contains("generated: 0"), "{}", describe(&o));
    assert_eq!(tree(&out), before);
}

#[test]
fn incomplete_captions_fail_only_that_viewpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("S", "good")]);
    let mut text = fs::read_to_string(&captions).unwrap();
    text.push_str(r#"{"scan_id":"S","viewpoint_id":"partial","heading_index":0,"elevation_index":0,"text":"a hall","source":"imported"}"#);
    text.push('\n');
    fs::write(&captions, text).unwrap();
    let out = dir.path().join("envs");
    let o = generate(&config, &captions, &out, &["--json"]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["generated"], 1);
    assert_eq!(summary["failed"], 1);
    assert_eq!(summary["failures"][0]["viewpoint"], "partial");
    assert!(out.join("S/good/DONE").is_file());
    assert!(!out.join("S/partial/DONE").exists());
}

#[test]
fn filters_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("S", "a"), ("S", "b"), ("T", "c")]);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    let o = generate(&config, &captions, &o1, &["--viewpoint", "a", "--seed", "1"]);
    assert!(o.status.success(), "{}", describe(&o));
    assert!(o1.join("S/a/DONE").is_file() && !o1.join("S/b").exists() && !o1.join("T").exists());
    let o = generate(&config, &captions, &o2, &["--scan", "S", "--viewpoint", "a", "--seed", "2"]);
    assert!(o.status.success(), "{}", describe(&o));
    assert_ne!(
        fs::read(o1.join("S/a/panorama.pano.png")).unwrap(),
        fs::read(o2.join("S/a/panorama.pano.png")).unwrap()
    );
}

#[test]
fn unreachable_backend_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("S", "a")]);
    let out = dir.path().join("envs");
    let o = run(&[
        "generate",
        "--captions",
        p(&captions),
        "--out",
        p(&out),
        "--backend",
        "http",
        "--backend-url",
        "http://127.0.0.1:9",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
    assert!(!out.exists());
    let o = run(&["generate", "--captions", p(&captions), "--out", p(&out), "--backend", "http"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[outpaint]\nseeed = 3\n").unwrap();
    let o = run(&["--config", p(&config), "stats", "--captions", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"), "{}", describe(&o));
    let o = run(&["stats"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
    let o = run(&["generate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
}

#[test]
fn ingest_merges_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_captions(&a, &[("S", "v1")]);
    write_captions(&b, &[("S", "v1"), ("S", "v2")]);
    let store = dir.path().join("store/captions.jsonl");
    let o = run(&["--json", "ingest-captions", "--input", p(&a), "--input", p(&b), "--store", p(&store)]);
    assert!(o.status.success(), "{}", describe(&o));
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["lines_read"], 108);
    assert_eq!(s["duplicates"], 36);
    assert_eq!(s["records"], 72);
    assert_eq!(s["complete_viewpoints"], 2);

    let o = run(&["--json", "stats", "--captions", p(&store)]);
    assert!(o.status.success(), "{}", describe(&o));
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["captions"]["records"], 72);
    assert_eq!(s["captions"]["viewpoints"], 2);
}

#[test]
fn ingest_captions_images_through_the_backend() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("seed.jsonl");
    write_captions(&captions, &[("S", "v")]);
    let out = dir.path().join("envs");
    assert!(generate(&config, &captions, &out, &[]).status.success());
    let store = dir.path().join("fresh.jsonl");
    let o = run(&[
        "--json",
        "ingest-captions",
        "--store",
        p(&store),
        "--images",
        p(&out.join("S/v")),
        "--scan",
        "S",
        "--viewpoint",
        "v",
    ]);
    assert!(o.status.success(), "{}", describe(&o));
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["captioned"], 36);
    assert_eq!(s["complete_viewpoints"], 1);
    let o = run(&["--json", "ingest-captions", "--store", p(&store), "--images", p(&out.join("S/v")), "--scan", "S", "--viewpoint", "v"]);
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!((s["captioned"].as_u64(), s["resumed"].as_u64()), (Some(0), Some(36)));
}

#[test]
fn discretize_reproduces_saved_views() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("S", "v")]);
    let out = dir.path().join("envs");
    assert!(generate(&config, &captions, &out, &[]).status.success());
    let env = out.join("S/v");
    let before = tree(&env);
    for f in fs::read_dir(&env).unwrap() {
        let f = f.unwrap().path();
        if f.file_name().unwrap().to_string_lossy().starts_with("view_") {
            fs::remove_file(f).unwrap();
        }
    }
    let o = run(&["discretize", "--registry", p(&out.join("registry.jsonl"))]);
    assert!(o.status.success(), "{}", describe(&o));
    assert!(stdout(&o).contains("views: 36"), "{}", describe(&o));
    assert_eq!(tree(&env), before);
    let o = run(&["discretize", "--env", p(&dir.path().join("nothing"))]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
}

#[test]
fn preview_is_byte_stable_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let captions = dir.path().join("captions.jsonl");
    write_captions(&captions, &[("S", "v")]);
    let out = dir.path().join("envs");
    assert!(generate(&config, &captions, &out, &[]).status.success());
    let env = out.join("S/v");
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    for target in [&p1, &p2] {
        let o = run(&["preview", "--env", p(&env), "--out", p(target)]);
        assert!(o.status.success(), "{}", describe(&o));
    }
    let t1 = tree(&p1);
    assert_eq!(t1.iter().map(|(n, _)| n.to_str().unwrap()).collect::<Vec<_>>(), ["preview_panorama.png", "preview_strip.png"]);
    assert_eq!(t1, tree(&p2));
    let strip = image::load_from_memory(&t1[1].1).unwrap();
    assert_eq!((strip.width(), strip.height()), (12 * 128, 128));

    fs::remove_file(env.join("panorama.cov.png")).unwrap();
    let o = run(&["preview", "--env", p(&env), "--out", p(&dir.path().join("p3"))]);
    assert_eq!(o.status.code(), Some(1), "{}", describe(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("panorama.cov.png"), "{}", describe(&o));
    assert!(!dir.path().join("p3").exists());
}

fn augment_fixture(dir: &Path, scans: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let envs = dir.join("envs");
    let mut reg = String::new();
    let mut trajs = String::new();
    for s in 0..scans {
        for v in 0..6 {
            let env = envs.join(format!("s{s}/v{v}"));
            fs::create_dir_all(&env).unwrap();
            fs::write(env.join("DONE"), "").unwrap();
            reg.push_str(&format!("{{\"scan\":\"s{s}\",\"viewpoint\":\"v{v}\",\"env_dir\":\"s{s}/v{v}\"}}\n"));
        }
    }
    for t in 0..scans * 40 {
        let s = t % scans;
        let path: Vec<String> = (0..5).map(|k| format!("\"v{}\"", (t + k) % 6)).collect();
        trajs.push_str(&format!(
            "{{\"instruction\":\"go {t}\",\"scan\":\"s{s}\",\"path\":[{}],\"split\":\"train\"}}\n",
            path.join(",")
        ));
    }
    fs::write(envs.join("registry.jsonl"), reg).unwrap();
    fs::write(dir.join("train.jsonl"), trajs).unwrap();
    (dir.join("train.jsonl"), envs.join("registry.jsonl"))
}

fn augment(dir: &Path, traj: &Path, reg: &Path, extra: &[&str]) -> std::process::Output {
    let (m, s) = (dir.join("manifest.jsonl"), dir.join("stats.json"));
    let mut args = vec![
        "--json",
        "augment",
        "--trajectories",
        p(traj),
        "--registry",
        p(reg),
        "--manifest",
        p(&m),
        "--stats",
        p(&s),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn augment_validates_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, reg) = augment_fixture(dir.path(), 61);
    let original = fs::read(&traj).unwrap();

    let o = augment(dir.path(), &traj, &reg, &["--ratio", "1.5"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));
    assert!(!dir.path().join("manifest.jsonl").exists());
    let o = augment(dir.path(), &traj, &reg, &["--scans", "62"]);
    assert_eq!(o.status.code(), Some(2), "{}", describe(&o));

    let o = augment(dir.path(), &traj, &reg, &["--ratio", "0.3", "--seed", "4"]);
    assert!(o.status.success(), "{}", describe(&o));
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["viewpoints"], 61 * 40 * 5);
    let r = s["global_ratio"].as_f64().unwrap();
    assert!((r - 0.3).abs() < 0.02, "{r}");
    assert_eq!(fs::read(&traj).unwrap(), original);
    let first = fs::read(dir.path().join("manifest.jsonl")).unwrap();
    let o = augment(dir.path(), &traj, &reg, &["--ratio", "0.3", "--seed", "4", "--workers", "5"]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("manifest.jsonl")).unwrap(), first);

    let o = augment(dir.path(), &traj, &reg, &["--scans", "10", "--seed", "1"]);
    assert!(o.status.success(), "{}", describe(&o));
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("stats.json")).unwrap()).unwrap();
    let subset: Vec<&str> = stats["subset_scans"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(subset.len(), 10);
    let trajs = fs::read_to_string(&traj).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    for (t, m) in trajs.lines().zip(manifest.lines()) {
        let t: serde_json::Value = serde_json::from_str(t).unwrap();
        let m: serde_json::Value = serde_json::from_str(m).unwrap();
        if !subset.contains(&t["scan"].as_str().unwrap()) {
            assert!(!m["bitmask"].as_str().unwrap().contains('1'), "{t}");
        }
    }

    let o = run(&["--json", "stats", "--manifest", p(&dir.path().join("manifest.jsonl")), "--registry", p(&reg)]);
    assert!(o.status.success(), "{}", describe(&o));
    let s: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(s["registry"]["view_images"], 61 * 6 * 36);
    assert_eq!(s["manifest"]["trajectories"], 61 * 40);
}
