//! Run configuration. Relative paths resolve against the config file's
//! directory; credentials are referenced by environment variable name only.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::PriceTable;
use crate::idm::Pairing;
use crate::perception::BackgroundModelParams;
use crate::provider::external::{CommandElements, Ffmpeg, WhisperCli, YtDlp};
use crate::provider::fixture::{DirElements, DirSubtitles, DirTranscriber, FixtureChat, FixtureSearch};
use crate::provider::http::HttpChat;
use crate::provider::synthetic::SceneFrames;
use crate::provider::{
    ChatModel, ElementDetector, FrameExtractor, MediaFetcher, NoDownload, ProviderError, RetryPolicy, SearchProvider,
    SubtitleSource, TokenBucket, Transcriber,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Live,
    Fixture,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimit {
    pub capacity: u32,
    pub per_second: f64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { capacity: 10, per_second: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub backend: Backend,
    pub endpoint: String,
    pub key_env: String,
    /// Recorded responses (JSON lines) for the fixture backend.
    pub fixture: Option<PathBuf>,
    pub timeout_s: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub rate_limit: Option<RateLimit>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Live,
            endpoint: "https://api.openai.com/v1".into(),
            key_env: "OPENAI_API_KEY".into(),
            fixture: None,
            timeout_s: 120,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            rate_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SourceConfig {
    pub backend: Backend,
    /// Fixture file or directory.
    pub fixture: Option<PathBuf>,
    /// Executable for the live backend (defaults to the standard tool name).
    pub binary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TranscriptionConfig {
    pub backend: Backend,
    pub fixture: Option<PathBuf>,
    pub binary: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ElementsConfig {
    pub backend: Backend,
    pub fixture: Option<PathBuf>,
    /// Live detector command line; `{image}` is replaced by the frame path.
    pub command: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    #[default]
    Ffmpeg,
    /// Rendered from scripted scene files.
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramesConfig {
    pub backend: FrameSource,
    pub fps: f64,
    pub fixture: Option<PathBuf>,
    pub binary: Option<String>,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self { backend: FrameSource::Ffmpeg, fps: 2.0, fixture: None, binary: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ProvidersConfig {
    pub chat: ChatConfig,
    pub search: SourceConfig,
    pub subtitles: SourceConfig,
    pub transcription: TranscriptionConfig,
    pub elements: ElementsConfig,
    pub frames: FramesConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelAssignment {
    pub query_generation: String,
    pub query_simplification: String,
    pub gui_classification: String,
    pub topic_extraction: String,
    pub relevance_scoring: String,
    pub annotation: String,
    pub decomposition: String,
    pub temperature: f64,
}

impl Default for ModelAssignment {
    fn default() -> Self {
        Self {
            query_generation: "gpt-4.1".into(),
            query_simplification: "gpt-4.1-mini".into(),
            gui_classification: "gpt-4.1-mini".into(),
            topic_extraction: "gpt-4.1-mini".into(),
            relevance_scoring: "gpt-4.1-mini".into(),
            annotation: "gpt-5.1".into(),
            decomposition: "gpt-5.1".into(),
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub grounding_k: usize,
    pub pairing: Pairing,
    pub fg_threshold: u64,
    pub max_candidates: usize,
    pub gap_threshold_ms: u64,
    /// Concurrent candidates, frame pairs or videos in flight per stage.
    pub max_in_flight: usize,
    /// Stage-level attempts when a reply cannot be parsed.
    pub parse_attempts: u32,
    pub background: BackgroundModelParams,
    pub models: ModelAssignment,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: 2,
            grounding_k: 7,
            pairing: Pairing::PerTransition,
            fg_threshold: 10_000,
            max_candidates: 50,
            gap_threshold_ms: crate::subtitle::DEFAULT_GAP_THRESHOLD_MS,
            max_in_flight: 4,
            parse_attempts: 3,
            background: BackgroundModelParams::default(),
            models: ModelAssignment::default(),
        }
    }
}

impl PipelineConfig {
    pub fn background_params(&self) -> BackgroundModelParams {
        BackgroundModelParams { fg_threshold: self.fg_threshold, ..self.background }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub providers: ProvidersConfig,
    pub pipeline: PipelineConfig,
    pub pricing: PriceTable,
}

impl Default for Config {
    fn default() -> Self {
        Self { providers: ProvidersConfig::default(), pipeline: PipelineConfig::default(), pricing: PriceTable::reference() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: Config =
            serde_json::from_slice(&raw).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let p = &mut self.providers;
        fix(&mut p.chat.fixture);
        fix(&mut p.search.fixture);
        fix(&mut p.subtitles.fixture);
        fix(&mut p.transcription.fixture);
        fix(&mut p.elements.fixture);
        fix(&mut p.frames.fixture);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.providers.chat.max_in_flight == 0 || self.pipeline.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.providers.chat.retry.attempts == 0 {
            return bad("retry.attempts must be at least 1");
        }
        if !(self.providers.frames.fps > 0.0 && self.providers.frames.fps.is_finite()) {
            return bad("frames.fps must be positive");
        }
        if self.pipeline.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        let m = &self.pipeline.models;
        for model in [
            &m.query_generation,
            &m.query_simplification,
            &m.gui_classification,
            &m.topic_extraction,
            &m.relevance_scoring,
            &m.annotation,
            &m.decomposition,
        ] {
            if self.pricing.get(model).is_none() {
                return Err(ConfigError::Invalid(format!("model `{model}` has no pricing entry")));
            }
        }
        Ok(())
    }

    /// Digest of every setting that influences stage outputs.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Every external capability, instantiated from a config.
pub struct Providers {
    pub chat: Arc<dyn ChatModel>,
    pub search: Arc<dyn SearchProvider>,
    pub subtitles: Arc<dyn SubtitleSource>,
    pub media: Arc<dyn MediaFetcher>,
    pub frames: Arc<dyn FrameExtractor>,
    pub transcriber: Option<Arc<dyn Transcriber>>,
    pub elements: Option<Arc<dyn ElementDetector>>,
}

fn need(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, ProviderError> {
    path.clone().ok_or_else(|| ProviderError::Config(format!("{what} fixture backend needs a `fixture` path")))
}

impl Providers {
    pub fn from_config(cfg: &ProvidersConfig) -> Result<Self, ProviderError> {
        let chat: Arc<dyn ChatModel> = match cfg.chat.backend {
            Backend::Fixture => Arc::new(FixtureChat::load(&need(&cfg.chat.fixture, "chat")?)?),
            Backend::Live => Arc::new(HttpChat::from_env(
                &cfg.chat.endpoint,
                &cfg.chat.key_env,
                Duration::from_secs(cfg.chat.timeout_s),
            )?),
            Backend::None => return Err(ProviderError::Config("a chat backend is required".into())),
        };
        let ytdlp = || YtDlp { binary: cfg.search.binary.clone().unwrap_or_else(|| "yt-dlp".into()), ..YtDlp::default() };
        let search: Arc<dyn SearchProvider> = match cfg.search.backend {
            Backend::Fixture => Arc::new(FixtureSearch::load(&need(&cfg.search.fixture, "search")?)?),
            Backend::Live => Arc::new(ytdlp()),
            Backend::None => Arc::new(FixtureSearch::default()),
        };
        let subtitles: Arc<dyn SubtitleSource> = match cfg.subtitles.backend {
            Backend::Fixture => Arc::new(DirSubtitles(need(&cfg.subtitles.fixture, "subtitles")?)),
            Backend::Live => Arc::new(YtDlp {
                binary: cfg.subtitles.binary.clone().unwrap_or_else(|| "yt-dlp".into()),
                ..YtDlp::default()
            }),
            Backend::None => Arc::new(DirSubtitles(PathBuf::new())),
        };
        let (media, frames): (Arc<dyn MediaFetcher>, Arc<dyn FrameExtractor>) = match cfg.frames.backend {
            FrameSource::Scene => (Arc::new(NoDownload), Arc::new(SceneFrames(need(&cfg.frames.fixture, "frames")?))),
            FrameSource::Ffmpeg => (
                Arc::new(ytdlp()),
                Arc::new(Ffmpeg { binary: cfg.frames.binary.clone().unwrap_or_else(|| "ffmpeg".into()) }),
            ),
        };
        let transcriber: Option<Arc<dyn Transcriber>> = match cfg.transcription.backend {
            Backend::Fixture => Some(Arc::new(DirTranscriber(need(&cfg.transcription.fixture, "transcription")?))),
            Backend::Live => Some(Arc::new(WhisperCli {
                binary: cfg.transcription.binary.clone().unwrap_or_else(|| "whisper".into()),
                model: cfg.transcription.model.clone().unwrap_or_else(|| "base".into()),
            })),
            Backend::None => None,
        };
        let elements: Option<Arc<dyn ElementDetector>> = match cfg.elements.backend {
            Backend::Fixture => Some(Arc::new(DirElements(need(&cfg.elements.fixture, "elements")?))),
            Backend::Live => {
                let (program, args) = cfg
                    .elements
                    .command
                    .split_first()
                    .ok_or_else(|| ProviderError::Config("live element detector needs a `command`".into()))?;
                Some(Arc::new(CommandElements { program: program.clone(), args: args.to_vec() }))
            }
            Backend::None => None,
        };
        Ok(Self { chat, search, subtitles, media, frames, transcriber, elements })
    }

    pub fn rate_limiter(cfg: &ChatConfig) -> Option<TokenBucket> {
        cfg.rate_limit.as_ref().map(|r| TokenBucket::new(r.capacity, r.per_second))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), Config::default().hash());
        let mut other = Config::default();
        other.pipeline.grounding_k = 5;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn partial_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"providers": {"chat": {"backend": "fixture", "fixture": "chat.jsonl"}}, "pipeline": {"top_k": 1}}"#,
        )
        .unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.providers.chat.fixture, Some(dir.path().join("chat.jsonl")));
        assert_eq!(cfg.pipeline.top_k, 1);
        assert_eq!(cfg.pipeline.grounding_k, 7);
        assert_eq!(cfg.providers.frames.fps, 2.0);
    }

    #[test]
    fn unpriced_model_is_rejected() {
        let mut cfg = Config::default();
        cfg.pipeline.models.annotation = "mystery".into();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
