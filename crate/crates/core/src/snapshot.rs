//! Snapshot bundles: the offline stand-in for a live browser tab.
//!
//! A bundle is a directory holding `page.html`, `meta.json` and an optional
//! `layout.json` sidecar. Guide sessions consume ordered bundle sequences
//! described by a `sequence.json` manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dom::{Dom, NodePath};

pub const PAGE_FILE: &str = "page.html";
pub const META_FILE: &str = "meta.json";
pub const LAYOUT_FILE: &str = "layout.json";
pub const SEQUENCE_FILE: &str = "sequence.json";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed meta.json: {0}")]
    MalformedMeta(String),
    #[error("malformed layout.json: {0}")]
    MalformedLayout(String),
    #[error("unparseable html: {0}")]
    UnparseableHtml(String),
    #[error("sequence manifest lists no snapshots")]
    EmptySequence,
    #[error("malformed sequence manifest: {0}")]
    MalformedSequence(String),
    #[error("snapshot {index} in sequence: {source}")]
    InSequence {
        index: usize,
        #[source]
        source: Box<SnapshotError>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub visible: bool,
}

impl LayoutBox {
    pub fn has_area(&self) -> bool {
        self.w > 0.0 && self.h > 0.0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutEntry {
    path: NodePath,
    #[serde(flatten)]
    layout: LayoutBox,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    url: Option<String>,
    title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captured_at: Option<DateTime<FixedOffset>>,
}

/// Content digest identifying a snapshot; indices and proposals carry it so
/// stale pairings can be detected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotRef(pub String);

impl std::fmt::Display for SnapshotRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub html: String,
    pub url: String,
    pub title: String,
    pub captured_at: Option<DateTime<FixedOffset>>,
    pub layout: Option<BTreeMap<NodePath, LayoutBox>>,
}

impl Snapshot {
    /// Validates and builds a snapshot. Layout entries that do not resolve to
    /// an element are dropped; the second value is how many were dropped.
    pub fn new(
        html: impl Into<String>,
        url: impl Into<String>,
        title: impl Into<String>,
        captured_at: Option<DateTime<FixedOffset>>,
        layout: Option<BTreeMap<NodePath, LayoutBox>>,
    ) -> Result<(Self, usize), SnapshotError> {
        let html = html.into();
        let url = url.into();
        if html.trim().is_empty() {
            return Err(SnapshotError::UnparseableHtml("document is empty".into()));
        }
        url::Url::parse(&url).map_err(|e| SnapshotError::MalformedMeta(format!("url `{url}`: {e}")))?;
        let mut dropped = 0;
        let layout = match layout {
            Some(map) => {
                let dom = Dom::parse(&html);
                let mut kept = BTreeMap::new();
                for (path, b) in map {
                    if b.w < 0.0 || b.h < 0.0 {
                        return Err(SnapshotError::MalformedLayout(format!("negative size at {path}")));
                    }
                    if dom.resolve(&path).is_some() {
                        kept.insert(path, b);
                    } else {
                        dropped += 1;
                    }
                }
                Some(kept)
            }
            None => None,
        };
        if dropped > 0 {
            tracing::warn!(dropped, "layout entries did not resolve and were dropped");
        }
        Ok((Snapshot { html, url, title: title.into(), captured_at, layout }, dropped))
    }

    pub fn dom(&self) -> Dom {
        Dom::parse(&self.html)
    }

    pub fn canonical_html(&self) -> String {
        self.dom().serialize()
    }

    pub fn digest(&self) -> SnapshotRef {
        let mut h = Sha256::new();
        h.update(self.url.as_bytes());
        h.update([0x1f]);
        h.update(self.title.as_bytes());
        h.update([0x1f]);
        h.update(self.html.as_bytes());
        if let Some(layout) = &self.layout {
            for (p, b) in layout {
                h.update([0x1f]);
                h.update(format!("{p}:{}:{}:{}:{}:{}", b.x, b.y, b.w, b.h, b.visible).as_bytes());
            }
        }
        SnapshotRef(hex::encode(&h.finalize()[..16]))
    }

    pub fn layout_for(&self, path: &NodePath) -> Option<&LayoutBox> {
        self.layout.as_ref()?.get(path)
    }
}

/// A loaded snapshot plus the number of layout entries that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSnapshot {
    pub snapshot: Snapshot,
    pub dropped_layout: usize,
}

fn read_to_string(path: &Path) -> Result<String, SnapshotError> {
    fs::read_to_string(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => SnapshotError::MissingFile(path.to_path_buf()),
        io::ErrorKind::InvalidData => SnapshotError::UnparseableHtml(format!("{} is not UTF-8", path.display())),
        _ => SnapshotError::Io { path: path.to_path_buf(), source },
    })
}

pub fn load_snapshot(bundle_dir: impl AsRef<Path>) -> Result<Snapshot, SnapshotError> {
    load_snapshot_with_report(bundle_dir).map(|l| l.snapshot)
}

pub fn load_snapshot_with_report(bundle_dir: impl AsRef<Path>) -> Result<LoadedSnapshot, SnapshotError> {
    let dir = bundle_dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let html_path = dir.join(PAGE_FILE);
    let meta_text = read_to_string(&meta_path)?;
    let html = read_to_string(&html_path)?;
    let meta: Meta =
        serde_json::from_str(&meta_text).map_err(|e| SnapshotError::MalformedMeta(e.to_string()))?;
    let url = meta.url.ok_or_else(|| SnapshotError::MalformedMeta("missing url".into()))?;
    let title = meta.title.ok_or_else(|| SnapshotError::MalformedMeta("missing title".into()))?;

    let layout_path = dir.join(LAYOUT_FILE);
    let layout = if layout_path.exists() {
        let text = read_to_string(&layout_path)?;
        let entries: Vec<LayoutEntry> =
            serde_json::from_str(&text).map_err(|e| SnapshotError::MalformedLayout(e.to_string()))?;
        Some(entries.into_iter().map(|e| (e.path, e.layout)).collect())
    } else {
        None
    };
    let (snapshot, dropped_layout) = Snapshot::new(html, url, title, meta.captured_at, layout)?;
    Ok(LoadedSnapshot { snapshot, dropped_layout })
}

fn write(path: PathBuf, contents: &[u8]) -> Result<(), SnapshotError> {
    fs::write(&path, contents).map_err(|source| SnapshotError::Io { path, source })
}

pub fn save_snapshot(snapshot: &Snapshot, bundle_dir: impl AsRef<Path>) -> Result<PathBuf, SnapshotError> {
    let dir = bundle_dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| SnapshotError::Io { path: dir.to_path_buf(), source })?;
    write(dir.join(PAGE_FILE), snapshot.html.as_bytes())?;
    let meta = Meta {
        url: Some(snapshot.url.clone()),
        title: Some(snapshot.title.clone()),
        captured_at: snapshot.captured_at,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    write(dir.join(META_FILE), meta_json.as_bytes())?;
    let layout_path = dir.join(LAYOUT_FILE);
    match &snapshot.layout {
        Some(layout) => {
            let entries: Vec<LayoutEntry> =
                layout.iter().map(|(p, b)| LayoutEntry { path: p.clone(), layout: *b }).collect();
            let mut text = serde_json::to_string_pretty(&entries).expect("layout serializes");
            text.push('\n');
            write(layout_path, text.as_bytes())?;
        }
        None if layout_path.exists() => {
            fs::remove_file(&layout_path).map_err(|source| SnapshotError::Io { path: layout_path, source })?;
        }
        None => {}
    }
    Ok(dir.to_path_buf())
}

/// Loads the bundles listed (relative to the manifest's directory) in a
/// `sequence.json` manifest, in order. `manifest` may also name the directory
/// containing `sequence.json`.
pub fn load_sequence(manifest: impl AsRef<Path>) -> Result<Vec<Snapshot>, SnapshotError> {
    let mut manifest = manifest.as_ref().to_path_buf();
    if manifest.is_dir() {
        manifest = manifest.join(SEQUENCE_FILE);
    }
    let text = read_to_string(&manifest)?;
    let entries: Vec<String> =
        serde_json::from_str(&text).map_err(|e| SnapshotError::MalformedSequence(e.to_string()))?;
    if entries.is_empty() {
        return Err(SnapshotError::EmptySequence);
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .enumerate()
        .map(|(index, rel)| {
            load_snapshot(base.join(rel)).map_err(|e| SnapshotError::InSequence { index, source: Box::new(e) })
        })
        .collect()
}
