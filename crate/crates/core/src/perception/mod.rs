//! Turns a video into discrete interface states: subtitle-aligned keyframes
//! from background subtraction, plus per-keyframe UI element graphs.

mod background;
mod elements;
mod segment;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use background::{BackgroundModel, BackgroundModelParams};
pub use elements::{parse_element_graph, serialize_element_graph, ElementGraph, ElementKind, UIElement};
pub use segment::{
    changing_runs, detect_transitions, extract_keyframes, keyframes_of, segment_by_cues, transitions_from_flags,
    transitions_from_images,
};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("cannot decode frame {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("video has no frames")]
    EmptyVideo,
    #[error("frame {path} is {got:?}, expected {expected:?}")]
    SizeMismatch { path: PathBuf, got: (u32, u32), expected: (u32, u32) },
    #[error("malformed element graph: {0}")]
    MalformedGraph(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_index: usize,
    pub timestamp_ms: u64,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSegment {
    pub cue_index: usize,
    pub start_frame: FrameRef,
    pub end_frame: FrameRef,
}

/// One entry of a frame directory's `index.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    frame_index: usize,
    timestamp_ms: u64,
    file: String,
    width: u32,
    height: u32,
}

pub const FRAME_INDEX_FILE: &str = "index.json";

/// Writes `index.json` next to the frames. File names are stored relative
/// to the directory so the directory can be moved.
pub fn write_frame_index(dir: &Path, frames: &[FrameRef]) -> std::io::Result<()> {
    let entries: Vec<IndexEntry> = frames
        .iter()
        .map(|f| IndexEntry {
            frame_index: f.frame_index,
            timestamp_ms: f.timestamp_ms,
            file: f.image.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            width: f.image.width,
            height: f.image.height,
        })
        .collect();
    let json = serde_json::to_vec_pretty(&entries).map_err(std::io::Error::other)?;
    crate::fsutil::write_atomic(&dir.join(FRAME_INDEX_FILE), &json)
}

pub fn read_frame_index(dir: &Path) -> Result<Vec<FrameRef>, PerceptionError> {
    let raw = std::fs::read(dir.join(FRAME_INDEX_FILE))?;
    let entries: Vec<IndexEntry> = serde_json::from_slice(&raw).map_err(|e| PerceptionError::DecodeFailure {
        path: dir.join(FRAME_INDEX_FILE),
        reason: e.to_string(),
    })?;
    let mut frames: Vec<FrameRef> = entries
        .into_iter()
        .map(|e| FrameRef {
            frame_index: e.frame_index,
            timestamp_ms: e.timestamp_ms,
            image: ImageRef { path: dir.join(e.file), width: e.width, height: e.height },
        })
        .collect();
    frames.sort_by_key(|f| f.frame_index);
    if frames.windows(2).any(|w| w[0].timestamp_ms > w[1].timestamp_ms) {
        return Err(PerceptionError::DecodeFailure {
            path: dir.join(FRAME_INDEX_FILE),
            reason: "timestamps are not monotone in frame index".into(),
        });
    }
    Ok(frames)
}

pub fn load_rgb(frame: &FrameRef) -> Result<image::RgbImage, PerceptionError> {
    let path = &frame.image.path;
    let img = image::open(path)
        .map_err(|e| PerceptionError::DecodeFailure { path: path.clone(), reason: e.to_string() })?
        .into_rgb8();
    if img.dimensions() != (frame.image.width, frame.image.height) {
        return Err(PerceptionError::SizeMismatch {
            path: path.clone(),
            got: img.dimensions(),
            expected: (frame.image.width, frame.image.height),
        });
    }
    Ok(img)
}
