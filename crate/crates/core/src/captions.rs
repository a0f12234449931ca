//! Per-view room descriptions: a line-delimited store, nearest-view lookup
//! and batch captioning through a backend.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, GenerationBackend};
use crate::engine::ViewCaptions;
use crate::geometry::{SphericalDirection, VIEW_COUNT};
use crate::scalar::Scalar;
use crate::ViewIndex;

pub const STORE_FILE: &str = "captions.jsonl";
pub const CHECKPOINT_FILE: &str = "captions.ckpt";

/// Checkpoint file kept next to a store: `captions.jsonl` pairs with
/// `captions.ckpt`.
pub fn checkpoint_path(store_path: &Path) -> PathBuf {
    store_path.with_extension("ckpt")
}

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty caption text for {0}")]
    EmptyText(CaptionKey),
    #[error("no captions for viewpoint {scan_id}/{viewpoint_id}")]
    NotFound { scan_id: String, viewpoint_id: String },
    #[error("captioning interrupted after {done} new records: {source}")]
    Interrupted {
        done: usize,
        #[source]
        source: BackendError,
    },
}

type Result<T> = std::result::Result<T, CaptionError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaptionError + '_ {
    move |source| CaptionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Service,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CaptionKey {
    pub scan_id: String,
    pub viewpoint_id: String,
    pub view: ViewIndex,
}

impl std::fmt::Display for CaptionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.scan_id, self.viewpoint_id, self.view)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub scan_id: String,
    pub viewpoint_id: String,
    pub view: ViewIndex,
    pub text: String,
    pub source: CaptionSource,
}

impl CaptionRecord {
    pub fn key(&self) -> CaptionKey {
        CaptionKey {
            scan_id: self.scan_id.clone(),
            viewpoint_id: self.viewpoint_id.clone(),
            view: self.view,
        }
    }
}

/// On-disk line layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    scan_id: String,
    viewpoint_id: String,
    heading_index: i64,
    elevation_index: i64,
    text: String,
    source: CaptionSource,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyLine {
    scan_id: String,
    viewpoint_id: String,
    heading_index: i64,
    elevation_index: i64,
}

impl From<&CaptionKey> for KeyLine {
    fn from(k: &CaptionKey) -> Self {
        Self {
            scan_id: k.scan_id.clone(),
            viewpoint_id: k.viewpoint_id.clone(),
            heading_index: k.view.heading_index() as i64,
            elevation_index: k.view.elevation_index() as i64,
        }
    }
}

impl From<&CaptionRecord> for Line {
    fn from(r: &CaptionRecord) -> Self {
        Self {
            scan_id: r.scan_id.clone(),
            viewpoint_id: r.viewpoint_id.clone(),
            heading_index: r.view.heading_index() as i64,
            elevation_index: r.view.elevation_index() as i64,
            text: r.text.clone(),
            source: r.source,
        }
    }
}

/// Collapses runs of whitespace and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn record_line(r: &CaptionRecord) -> String {
    serde_json::to_string(&Line::from(r)).expect("caption lines serialize")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub duplicates: usize,
}

type ViewpointKey = (String, String);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptionStore {
    viewpoints: BTreeMap<ViewpointKey, BTreeMap<ViewIndex, CaptionRecord>>,
}

impl CaptionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts with normalized text; returns true if an earlier record for
    /// the same key was replaced.
    pub fn insert(&mut self, mut record: CaptionRecord) -> Result<bool> {
        record.text = normalize_text(&record.text);
        if record.text.is_empty() {
            return Err(CaptionError::EmptyText(record.key()));
        }
        let vp = (record.scan_id.clone(), record.viewpoint_id.clone());
        Ok(self.viewpoints.entry(vp).or_default().insert(record.view, record).is_some())
    }

    /// Reads a line-delimited store. Later lines win over earlier ones with
    /// the same key. A missing file is an error; an empty one is not.
    pub fn ingest(path: &Path) -> Result<(Self, IngestReport)> {
        let mut store = Self::new();
        let report = store.merge_file(path)?;
        Ok((store, report))
    }

    /// Adds every record in `path` to this store, last wins.
    pub fn merge_file(&mut self, path: &Path) -> Result<IngestReport> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut report = IngestReport::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| CaptionError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let raw: Line = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let view = ViewIndex::new(raw.heading_index, raw.elevation_index).map_err(|e| parse(e.to_string()))?;
            let record = CaptionRecord {
                scan_id: raw.scan_id,
                viewpoint_id: raw.viewpoint_id,
                view,
                text: raw.text,
                source: raw.source,
            };
            if self.insert(record).map_err(|e| parse(e.to_string()))? {
                report.duplicates += 1;
            }
            report.lines += 1;
        }
        if report.duplicates > 0 {
            warn!("{}: {} duplicate keys, later lines kept", path.display(), report.duplicates);
        }
        info!("{}: {} lines read", path.display(), report.lines);
        Ok(report)
    }

    /// Writes every record, sorted by key, replacing `path` atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut out = BufWriter::new(file);
            for r in self.records() {
                writeln!(out, "{}", record_line(r)).map_err(io_err(&tmp))?;
            }
            out.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn records(&self) -> impl Iterator<Item = &CaptionRecord> {
        self.viewpoints.values().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.viewpoints.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn viewpoint_count(&self) -> usize {
        self.viewpoints.len()
    }

    /// `(scan_id, viewpoint_id)` pairs in sorted order.
    pub fn viewpoints(&self) -> impl Iterator<Item = (&str, &str)> {
        self.viewpoints.keys().map(|(s, v)| (s.as_str(), v.as_str()))
    }

    pub fn get(&self, scan_id: &str, viewpoint_id: &str, view: ViewIndex) -> Option<&CaptionRecord> {
        self.viewpoint(scan_id, viewpoint_id)?.get(&view)
    }

    fn viewpoint(&self, scan_id: &str, viewpoint_id: &str) -> Option<&BTreeMap<ViewIndex, CaptionRecord>> {
        self.viewpoints.get(&(scan_id.to_string(), viewpoint_id.to_string()))
    }

    /// True when all grid views of the viewpoint have a caption.
    pub fn is_complete(&self, scan_id: &str, viewpoint_id: &str) -> bool {
        self.viewpoint(scan_id, viewpoint_id).is_some_and(|m| m.len() == VIEW_COUNT)
    }

    pub fn complete_count(&self) -> usize {
        self.viewpoints.values().filter(|m| m.len() == VIEW_COUNT).count()
    }

    /// The 36 captions the engine needs, if the viewpoint is complete.
    pub fn view_captions(&self, scan_id: &str, viewpoint_id: &str) -> Option<ViewCaptions> {
        let m = self.viewpoint(scan_id, viewpoint_id)?;
        (m.len() == VIEW_COUNT).then(|| m.iter().map(|(i, r)| (*i, r.text.clone())).collect())
    }

    /// The record whose grid view center is angularly closest to `dir`.
    /// Ties go to the smaller heading index, then the smaller elevation index.
    pub fn nearest_caption<T: Scalar>(
        &self,
        scan_id: &str,
        viewpoint_id: &str,
        dir: &SphericalDirection<T>,
    ) -> Result<&CaptionRecord> {
        let not_found = || CaptionError::NotFound {
            scan_id: scan_id.to_string(),
            viewpoint_id: viewpoint_id.to_string(),
        };
        let m = self.viewpoint(scan_id, viewpoint_id).ok_or_else(not_found)?;
        let best = ViewIndex::nearest_among(dir, m.keys().copied()).ok_or_else(not_found)?;
        Ok(&m[&best])
    }
}

/// Keys already captioned by an earlier, interrupted batch.
pub fn read_checkpoint(path: &Path) -> Result<BTreeSet<CaptionKey>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut keys = BTreeSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse = |message: String| CaptionError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let k: KeyLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let view = ViewIndex::new(k.heading_index, k.elevation_index).map_err(|e| parse(e.to_string()))?;
        keys.insert(CaptionKey {
            scan_id: k.scan_id,
            viewpoint_id: k.viewpoint_id,
            view,
        });
    }
    Ok(keys)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}

#[derive(Debug, Default)]
pub struct CaptionBatch {
    /// Records produced by this call.
    pub records: Vec<CaptionRecord>,
    /// Inputs skipped because the checkpoint already listed them.
    pub resumed: usize,
    pub failures: Vec<(CaptionKey, BackendError)>,
}

/// Captions `images` through `backend`, appending each result to
/// `store_path` and its key to the checkpoint as it completes. Per-image
/// service errors are collected; an unavailable backend stops the batch,
/// and a later call resumes after the last completed key.
pub fn caption_views(
    store: &mut CaptionStore,
    store_path: &Path,
    images: &[(CaptionKey, RgbImage)],
    backend: &dyn GenerationBackend,
) -> Result<CaptionBatch> {
    let mut batch = CaptionBatch::default();
    if images.is_empty() {
        return Ok(batch);
    }
    let ckpt_path = checkpoint_path(store_path);
    let done = read_checkpoint(&ckpt_path)?;
    for (key, image) in images {
        if done.contains(key) {
            batch.resumed += 1;
            continue;
        }
        match backend.caption(image) {
            Ok(text) => {
                let record = CaptionRecord {
                    scan_id: key.scan_id.clone(),
                    viewpoint_id: key.viewpoint_id.clone(),
                    view: key.view,
                    text,
                    source: CaptionSource::Service,
                };
                if let Err(e) = store.insert(record.clone()) {
                    batch.failures.push((key.clone(), BackendError::ProtocolViolation(e.to_string())));
                    continue;
                }
                let record = store.get(&key.scan_id, &key.viewpoint_id, key.view).expect("just inserted").clone();
                append_line(store_path, &record_line(&record))?;
                append_line(&ckpt_path, &serde_json::to_string(&KeyLine::from(key)).expect("keys serialize"))?;
                batch.records.push(record);
            }
            Err(e) if e.is_unavailable() => {
                return Err(CaptionError::Interrupted {
                    done: batch.records.len(),
                    source: e,
                });
            }
            Err(e) => {
                warn!("caption {key}: {e}");
                batch.failures.push((key.clone(), e));
            }
        }
    }
    Ok(batch)
}
