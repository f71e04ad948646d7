//! Contracts for every external capability the pipeline uses: chat/vision
//! models, video search, subtitle download, transcription, element detection
//! and frame extraction. Each has a live backend and a deterministic fixture
//! backend.

pub mod external;
pub mod fixture;
mod gateway;
pub mod http;
pub mod synthetic;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::perception::FrameRef;
use crate::retrieval::VideoCandidate;
use crate::subtitle::SubtitleTrack;

pub use gateway::{ChatGateway, InFlightLimit, RetryPolicy, TokenBucket};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("model failure: {0}")]
    ModelFailure(String),
    #[error("search unavailable: {0}")]
    SearchUnavailable(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_) | ProviderError::RateLimited(_))
    }
}

impl From<std::io::Error> for ProviderError {
    fn from(err: std::io::Error) -> Self {
        ProviderError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Image { path: PathBuf, width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, content: vec![ContentPart::Text { text: text.into() }] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model: String,
    /// Accounting label; not part of the fixture key.
    pub stage: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ModelRequest {
    pub fn new(model: impl Into<String>, stage: impl Into<String>) -> Self {
        Self { model: model.into(), stage: stage.into(), messages: Vec::new(), temperature: 1.0, max_output_tokens: 2_048 }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn system(mut self, text: impl Into<String>) -> Self {
        self.messages.push(Message::text(Role::System, text));
        self
    }

    pub fn user(mut self, text: impl Into<String>) -> Self {
        self.messages.push(Message::text(Role::User, text));
        self
    }

    pub fn user_parts(mut self, parts: Vec<ContentPart>) -> Self {
        self.messages.push(Message { role: Role::User, content: parts });
        self
    }

    pub fn parts(&self) -> impl Iterator<Item = &ContentPart> {
        self.messages.iter().flat_map(|m| m.content.iter())
    }

    pub fn image_count(&self) -> usize {
        self.parts().filter(|p| matches!(p, ContentPart::Image { .. })).count()
    }

    /// All text parts concatenated, in order.
    pub fn text(&self) -> String {
        self.parts()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Canonical JSON used for fixture keys. Images are identified by the
    /// digest of their bytes (falling back to the file name) so recordings
    /// replay regardless of where the workspace lives.
    pub fn canonical_json(&self) -> String {
        let messages: Vec<serde_json::Value> = self
            .messages
            .iter()
            .map(|m| {
                let content: Vec<serde_json::Value> = m
                    .content
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => serde_json::json!({"type": "text", "text": text}),
                        ContentPart::Image { path, width, height } => serde_json::json!({
                            "type": "image",
                            "digest": image_digest(path),
                            "width": width,
                            "height": height,
                        }),
                    })
                    .collect();
                serde_json::json!({"role": m.role, "content": content})
            })
            .collect();
        serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        })
        .to_string()
    }

    pub fn fixture_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn summary(&self) -> String {
        let text = self.text();
        let head: String = text.chars().take(60).collect();
        format!("{} / {}: {}", self.stage, self.model, head.replace('\n', " "))
    }
}

fn image_digest(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
        Err(_) => path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelResponse {
    pub fn new(text: impl Into<String>, input_tokens: u64, output_tokens: u64) -> Self {
        Self { text: text.into(), usage: Usage { input_tokens, output_tokens }, latency_ms: 0 }
    }
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError>;
}

impl<T: ChatModel + ?Sized> ChatModel for Arc<T> {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: ChatModel + ?Sized> ChatModel for &T {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).chat(req)
    }
}

/// Chat backend driven by a closure; handy for scripted oracles.
pub struct FnChat<F>(pub F);

impl<F> ChatModel for FnChat<F>
where
    F: Fn(&ModelRequest) -> Result<ModelResponse, ProviderError> + Send + Sync,
{
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (self.0)(req)
    }
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &str, max: usize) -> Result<Vec<VideoCandidate>, ProviderError>;
}

pub trait SubtitleSource: Send + Sync {
    /// Raw subtitle bytes, or `None` when the video has no track.
    fn fetch(&self, candidate: &VideoCandidate) -> Result<Option<Vec<u8>>, ProviderError>;
}

/// A selected video, possibly downloaded to local storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub video_id: String,
    pub url: String,
    pub local_path: Option<PathBuf>,
}

pub trait MediaFetcher: Send + Sync {
    fn fetch(&self, candidate: &VideoCandidate, dir: &Path) -> Result<MediaRef, ProviderError>;
}

/// Fetcher for fixture runs: nothing is downloaded.
pub struct NoDownload;

impl MediaFetcher for NoDownload {
    fn fetch(&self, candidate: &VideoCandidate, _dir: &Path) -> Result<MediaRef, ProviderError> {
        Ok(MediaRef { video_id: candidate.video_id.clone(), url: candidate.url.clone(), local_path: None })
    }
}

pub trait Transcriber: Send + Sync {
    /// Word-timestamped narration for the video's audio track.
    fn transcribe(&self, media: &MediaRef) -> Result<SubtitleTrack, ProviderError>;
}

pub trait ElementDetector: Send + Sync {
    /// Raw element-graph JSON for one keyframe.
    fn detect(&self, video_id: &str, frame: &FrameRef) -> Result<Vec<u8>, ProviderError>;
}

pub trait FrameExtractor: Send + Sync {
    /// Decodes the video at `fps` into numbered PNG files plus `index.json`
    /// under `out_dir`.
    fn extract(&self, media: &MediaRef, fps: f64, out_dir: &Path) -> Result<Vec<FrameRef>, ProviderError>;
}
