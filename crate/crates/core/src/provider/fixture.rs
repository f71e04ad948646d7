//! Deterministic replay backends.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    ChatModel, ElementDetector, MediaRef, ModelRequest, ModelResponse, ProviderError, SearchProvider, SubtitleSource,
    Transcriber,
};
use crate::perception::FrameRef;
use crate::retrieval::VideoCandidate;
use crate::subtitle::{parse_subtitles, FormatHint, SubtitleTrack};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub key: String,
    pub stage: String,
    pub model: String,
    /// Human-readable hint of what was asked; not used for lookup.
    #[serde(default)]
    pub summary: String,
    pub response: ModelResponse,
}

/// Replays recorded chat responses keyed by the canonical request hash.
#[derive(Debug, Default)]
pub struct FixtureChat {
    entries: HashMap<String, ModelResponse>,
}

impl FixtureChat {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read chat fixtures {}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            entries.insert(entry.key, entry.response);
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        Self { entries: entries.into_iter().map(|e| (e.key, e.response)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatModel for FixtureChat {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let key = req.fixture_key();
        self.entries.get(&key).cloned().ok_or_else(|| {
            ProviderError::ModelFailure(format!("no recorded fixture for request key {key} ({})", req.summary()))
        })
    }
}

/// Wraps a live (or scripted) backend and keeps every successful exchange
/// so it can be written out as a replay fixture.
pub struct RecordingChat {
    inner: Arc<dyn ChatModel>,
    recorded: Mutex<BTreeMap<String, FixtureEntry>>,
}

impl RecordingChat {
    pub fn new(inner: Arc<dyn ChatModel>) -> Self {
        Self { inner, recorded: Mutex::new(BTreeMap::new()) }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.recorded.lock().unwrap().values().cloned().collect()
    }

    /// Writes entries as JSON lines, sorted by key so recordings diff cleanly.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for entry in self.entries() {
            out.push_str(&serde_json::to_string(&entry).map_err(std::io::Error::other)?);
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

impl ChatModel for RecordingChat {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let resp = self.inner.chat(req)?;
        let entry = FixtureEntry {
            key: req.fixture_key(),
            stage: req.stage.clone(),
            model: req.model.clone(),
            summary: req.summary(),
            response: ModelResponse { latency_ms: 0, ..resp.clone() },
        };
        self.recorded.lock().unwrap().insert(entry.key.clone(), entry);
        Ok(resp)
    }
}

/// Search results recorded per query string:
/// `{"queries": {"<query>": [{id, url, title, duration_s, has_subtitles}]}}`.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct FixtureSearch {
    pub queries: BTreeMap<String, Vec<VideoCandidate>>,
}

impl FixtureSearch {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read(path)
            .map_err(|e| ProviderError::Config(format!("cannot read search fixture {}: {e}", path.display())))?;
        serde_json::from_slice(&raw).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }
}

impl SearchProvider for FixtureSearch {
    fn search(&self, query: &str, max: usize) -> Result<Vec<VideoCandidate>, ProviderError> {
        match self.queries.get(query) {
            Some(hits) => Ok(hits.iter().take(max).cloned().collect()),
            None => {
                tracing::warn!(query, "no recorded search results");
                Ok(Vec::new())
            }
        }
    }
}

fn subtitle_file(dir: &Path, id: &str) -> Option<PathBuf> {
    ["vtt", "srt"].iter().map(|ext| dir.join(format!("{id}.{ext}"))).find(|p| p.is_file())
}

/// Subtitle files stored as `<dir>/<video_id>.vtt` or `.srt`.
pub struct DirSubtitles(pub PathBuf);

impl SubtitleSource for DirSubtitles {
    fn fetch(&self, candidate: &VideoCandidate) -> Result<Option<Vec<u8>>, ProviderError> {
        match subtitle_file(&self.0, &candidate.video_id) {
            Some(path) => Ok(Some(std::fs::read(path)?)),
            None => Ok(None),
        }
    }
}

/// Pre-computed word-timed transcripts stored as `<dir>/<video_id>.vtt`.
pub struct DirTranscriber(pub PathBuf);

impl Transcriber for DirTranscriber {
    fn transcribe(&self, media: &MediaRef) -> Result<SubtitleTrack, ProviderError> {
        let path = subtitle_file(&self.0, &media.video_id)
            .ok_or_else(|| ProviderError::ModelFailure(format!("no transcript fixture for {}", media.video_id)))?;
        let raw = std::fs::read(&path)?;
        parse_subtitles(&raw, FormatHint::Auto)
            .map(|p| p.track)
            .map_err(|e| ProviderError::DecodeFailure(format!("{}: {e}", path.display())))
    }
}

/// Element graphs stored as `<dir>/<video_id>/<frame_index>.json`
/// (index zero-padded to six digits).
pub struct DirElements(pub PathBuf);

impl DirElements {
    pub fn path_for(&self, video_id: &str, frame_index: usize) -> PathBuf {
        self.0.join(video_id).join(format!("{frame_index:06}.json"))
    }
}

impl ElementDetector for DirElements {
    fn detect(&self, video_id: &str, frame: &FrameRef) -> Result<Vec<u8>, ProviderError> {
        let path = self.path_for(video_id, frame.frame_index);
        std::fs::read(&path)
            .map_err(|e| ProviderError::ModelFailure(format!("no element fixture {}: {e}", path.display())))
    }
}
