#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const VOCAB: [&str; 6] = ["kitchen", "bedroom", "hallway", "bathroom", "living room", "porch"];

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_panosynth"));
    c.env_remove("PANOSYNTH_CONFIG").env_remove("PANOSYNTH_BACKEND_URL").env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn describe(o: &Output) -> String {
    format!(
        "status {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

/// One complete 36-view caption set per `(scan, viewpoint)`.
pub fn write_captions(path: &Path, viewpoints: &[(&str, &str)]) {
    let mut f = fs::File::create(path).unwrap();
    for (k, (scan, vp)) in viewpoints.iter().enumerate() {
        for h in 0..12 {
            for e in -1..=1 {
                let room = VOCAB[(k * 7 + h as usize * 3 + (e + 1) as usize) % VOCAB.len()];
                writeln!(
                    f,
                    r#"{{"scan_id":"{scan}","viewpoint_id":"{vp}","heading_index":{h},"elevation_index":{e},"text":"a {room} with a window","source":"imported"}}"#
                )
                .unwrap();
            }
        }
    }
}

/// A config with a 512-px canvas and 128-px views.
pub fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("panosynth.toml");
    fs::write(
        &path,
        "workers = 2\n\n[outpaint]\ncanvas_width = 512\nblend_width_px = 8.0\n\n[outpaint.view_grid]\nhfov_deg = 60.0\nvfov_deg = 60.0\nwidth_px = 128\nheight_px = 128\n",
    )
    .unwrap();
    path
}

/// Every file under `root`, relative path to bytes.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
