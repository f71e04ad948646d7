//! End-to-end orchestration over an on-disk task workspace. Every stage
//! reads the previous stage's artifacts and writes its own with
//! temp-file-then-rename, and `run_manifest.json` records which stages are
//! complete for which config, so an interrupted run resumes where it died.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concurrency::bounded_map;
use crate::config::{Config, Providers};
use crate::fsutil::{read_json, write_atomic, write_json};
use crate::idm::{annotate_video, filter_meaningful, FramePairAnnotation, IdmOptions};
use crate::knowledge::{consolidate_trajectory, decompose_video, DecomposeOptions, KnowledgeBundle, KnowledgeEntry};
use crate::perception::{extract_keyframes, keyframes_of, parse_element_graph, ElementGraph, TransitionSegment};
use crate::provider::{ChatGateway, ProviderError};
use crate::retrieval::{run_funnel, FunnelDeps, FunnelOptions, FunnelOutcome, RetrievalError, SelectedVideo, TaskSpec};
use crate::subtitle::{merge_sentences, parse_subtitles, CleanOptions, FormatHint, SubtitleTrack};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieve,
    Perceive,
    Annotate,
    Decompose,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Retrieve, Stage::Perceive, Stage::Annotate, Stage::Decompose];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Retrieve => "retrieve",
            Stage::Perceive => "perceive",
            Stage::Annotate => "annotate",
            Stage::Decompose => "decompose",
        }
    }

    pub fn previous(self) -> Option<Stage> {
        match self {
            Stage::Retrieve => None,
            Stage::Perceive => Some(Stage::Retrieve),
            Stage::Annotate => Some(Stage::Perceive),
            Stage::Decompose => Some(Stage::Annotate),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{artifact} is missing; run `{requires}` first")]
    MissingArtifact { artifact: PathBuf, requires: Stage },
    #[error("workspace belongs to task {found}, not {expected}")]
    TaskMismatch { expected: String, found: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Complete,
    /// No video survived retrieval; the bundle is empty.
    Uncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub task_id: String,
    pub config_hash: String,
    pub backends: BTreeMap<String, String>,
    pub stages: BTreeMap<Stage, bool>,
    pub status: RunStatus,
}

impl RunManifest {
    fn new(task_id: &str, config: &Config) -> Self {
        let p = &config.providers;
        let name = |v: &dyn std::fmt::Debug| format!("{v:?}").to_lowercase();
        let backends = BTreeMap::from([
            ("chat".to_string(), name(&p.chat.backend)),
            ("search".to_string(), name(&p.search.backend)),
            ("subtitles".to_string(), name(&p.subtitles.backend)),
            ("transcription".to_string(), name(&p.transcription.backend)),
            ("elements".to_string(), name(&p.elements.backend)),
            ("frames".to_string(), name(&p.frames.backend)),
        ]);
        Self {
            schema_version: SCHEMA_VERSION,
            task_id: task_id.to_string(),
            config_hash: config.hash(),
            backends,
            stages: Stage::ALL.iter().map(|s| (*s, false)).collect(),
            status: RunStatus::InProgress,
        }
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.stages.get(&stage).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalArtifact {
    pub schema_version: u32,
    #[serde(flatten)]
    pub outcome: FunnelOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    Transcriber,
    Subtitles,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptArtifact {
    pub schema_version: u32,
    pub video_id: String,
    pub source: TranscriptSource,
    pub track: SubtitleTrack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeArtifact {
    pub schema_version: u32,
    pub video_id: String,
    pub frame_count: usize,
    pub transitions: Vec<TransitionSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    #[serde(flatten)]
    pub annotation: FramePairAnnotation,
}

/// Paths of every artifact in a task workspace.
#[derive(Debug, Clone)]
pub struct TaskWorkspace {
    root: PathBuf,
}

impl TaskWorkspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn task(&self) -> PathBuf {
        self.root.join("task.json")
    }

    pub fn candidates(&self) -> PathBuf {
        self.root.join("candidates.json")
    }

    pub fn transcript(&self, video_id: &str) -> PathBuf {
        self.root.join("transcripts").join(format!("{video_id}.json"))
    }

    pub fn keyframes_dir(&self, video_id: &str) -> PathBuf {
        self.root.join("keyframes").join(video_id)
    }

    pub fn keyframes(&self, video_id: &str) -> PathBuf {
        self.keyframes_dir(video_id).join("keyframes.json")
    }

    pub fn media_dir(&self) -> PathBuf {
        self.root.join("media")
    }

    pub fn element_graph(&self, video_id: &str, frame_index: usize) -> PathBuf {
        self.root.join("elements").join(video_id).join(format!("{frame_index:06}.json"))
    }

    pub fn annotations(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    pub fn knowledge(&self) -> PathBuf {
        self.root.join("knowledge.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    /// The file whose presence marks `stage` as having produced output.
    pub fn stage_artifact(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Retrieve => self.candidates(),
            Stage::Perceive => self.root.join("keyframes"),
            Stage::Annotate => self.annotations(),
            Stage::Decompose => self.knowledge(),
        }
    }

    pub fn load_manifest(&self) -> std::io::Result<Option<RunManifest>> {
        match read_json(&self.manifest()) {
            Ok(m) => Ok(Some(m)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn require(&self, stage: Stage) -> Result<(), PipelineError> {
        let artifact = self.stage_artifact(stage);
        if artifact.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingArtifact { artifact, requires: stage })
        }
    }

    pub fn load_retrieval(&self) -> Result<RetrievalArtifact, PipelineError> {
        self.require(Stage::Retrieve)?;
        Ok(read_json(&self.candidates())?)
    }

    pub fn load_annotations(&self) -> Result<Vec<VideoAnnotation>, PipelineError> {
        self.require(Stage::Annotate)?;
        let text = std::fs::read_to_string(self.annotations())?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Io(std::io::Error::other(e))))
            .collect()
    }

    pub fn load_bundle(&self) -> Result<KnowledgeBundle, PipelineError> {
        self.require(Stage::Decompose)?;
        Ok(read_json(&self.knowledge())?)
    }
}

/// A configured pipeline bound to one workspace.
pub struct Pipeline<'a> {
    pub config: &'a Config,
    pub providers: &'a Providers,
    pub gateway: &'a ChatGateway,
    pub workspace: TaskWorkspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task_id: String,
    pub status: RunStatus,
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub videos: usize,
}

impl Pipeline<'_> {
    fn manifest_for(&self, task: &TaskSpec) -> Result<RunManifest, PipelineError> {
        let fresh = RunManifest::new(&task.task_id, self.config);
        match self.workspace.load_manifest()? {
            Some(m) if m.task_id != task.task_id => {
                Err(PipelineError::TaskMismatch { expected: task.task_id.clone(), found: m.task_id })
            }
            Some(m) if m.config_hash == fresh.config_hash && m.schema_version == SCHEMA_VERSION => Ok(m),
            Some(_) => {
                tracing::info!("config changed since the last run; starting over");
                Ok(fresh)
            }
            None => Ok(fresh),
        }
    }

    fn save_manifest(&self, m: &RunManifest) -> Result<(), PipelineError> {
        Ok(write_json(&self.workspace.manifest(), m)?)
    }

    /// Runs every stage that is not already complete for this config.
    pub fn run(&self, task: &TaskSpec) -> Result<RunSummary, PipelineError> {
        std::fs::create_dir_all(self.workspace.root())?;
        write_json(&self.workspace.task(), task)?;
        let mut manifest = self.manifest_for(task)?;
        self.save_manifest(&manifest)?;
        let mut summary =
            RunSummary { task_id: task.task_id.clone(), status: RunStatus::InProgress, executed: vec![], skipped: vec![], videos: 0 };
        let mut upstream_ran = false;
        for stage in Stage::ALL {
            if !upstream_ran && manifest.is_done(stage) && self.workspace.stage_artifact(stage).exists() {
                tracing::info!(%stage, "already complete; skipping");
                summary.skipped.push(stage);
            } else {
                tracing::info!(%stage, "running");
                self.run_stage(stage, task)?;
                manifest.stages.insert(stage, true);
                self.save_manifest(&manifest)?;
                summary.executed.push(stage);
                upstream_ran = true;
            }
            if stage == Stage::Retrieve {
                let selected = self.workspace.load_retrieval()?.outcome.result.selected;
                summary.videos = selected.len();
                if selected.is_empty() {
                    tracing::warn!(task = %task.task_id, "no video selected; task is uncovered");
                    write_json(&self.workspace.knowledge(), &KnowledgeBundle::new(&task.task_id, vec![]))?;
                    for s in Stage::ALL {
                        manifest.stages.insert(s, true);
                    }
                    manifest.status = RunStatus::Uncovered;
                    self.save_manifest(&manifest)?;
                    summary.status = RunStatus::Uncovered;
                    return Ok(summary);
                }
            }
        }
        manifest.status = RunStatus::Complete;
        self.save_manifest(&manifest)?;
        summary.status = RunStatus::Complete;
        Ok(summary)
    }

    /// Runs one stage and records it in the manifest. Later stages are
    /// marked stale, so a following `run` redoes them.
    pub fn run_single(&self, stage: Stage, task: &TaskSpec) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.workspace.root())?;
        let mut manifest = self.manifest_for(task)?;
        if stage == Stage::Retrieve {
            write_json(&self.workspace.task(), task)?;
        }
        self.run_stage(stage, task)?;
        for s in Stage::ALL {
            if s == stage {
                manifest.stages.insert(s, true);
            } else if s > stage {
                manifest.stages.insert(s, false);
            }
        }
        manifest.status = RunStatus::InProgress;
        self.save_manifest(&manifest)
    }

    /// Runs one stage, requiring the previous stage's artifact.
    pub fn run_stage(&self, stage: Stage, task: &TaskSpec) -> Result<(), PipelineError> {
        if let Some(prev) = stage.previous() {
            self.workspace.require(prev)?;
        }
        match stage {
            Stage::Retrieve => self.retrieve(task),
            Stage::Perceive => self.perceive(),
            Stage::Annotate => self.annotate(),
            Stage::Decompose => self.decompose(),
        }
    }

    fn selected(&self) -> Result<Vec<SelectedVideo>, PipelineError> {
        Ok(self.workspace.load_retrieval()?.outcome.result.selected)
    }

    pub fn retrieve(&self, task: &TaskSpec) -> Result<(), PipelineError> {
        let p = &self.config.pipeline;
        let deps = FunnelDeps {
            search: self.providers.search.as_ref(),
            subtitles: self.providers.subtitles.as_ref(),
            gateway: self.gateway,
            models: &p.models,
        };
        let opts = FunnelOptions {
            max_candidates: p.max_candidates,
            top_k: p.top_k,
            max_in_flight: p.max_in_flight,
            parse_attempts: p.parse_attempts,
            clean: CleanOptions { gap_threshold_ms: p.gap_threshold_ms, ..CleanOptions::default() },
        };
        let outcome = run_funnel(task, &deps, &opts)?;
        tracing::info!(
            candidates = outcome.candidates.len(),
            prefiltered = outcome.prefiltered(),
            gui = outcome.gui_confirmed(),
            selected = outcome.result.selected.len(),
            "retrieval finished"
        );
        write_json(&self.workspace.candidates(), &RetrievalArtifact { schema_version: SCHEMA_VERSION, outcome })?;
        Ok(())
    }

    pub fn perceive(&self) -> Result<(), PipelineError> {
        let selected = self.selected()?;
        let results = bounded_map(&selected, self.config.pipeline.max_in_flight, |_, v| self.perceive_video(v));
        results.into_iter().collect()
    }

    fn transcript_for(&self, video: &SelectedVideo, media: Option<&crate::provider::MediaRef>) -> TranscriptArtifact {
        let id = &video.candidate.video_id;
        let artifact = |source, track| TranscriptArtifact { schema_version: SCHEMA_VERSION, video_id: id.clone(), source, track };
        if let (Some(transcriber), Some(media)) = (&self.providers.transcriber, media) {
            match transcriber.transcribe(media) {
                Ok(track) if !track.is_empty() => return artifact(TranscriptSource::Transcriber, track),
                Ok(_) => tracing::warn!(video = %id, "transcription is empty; using the subtitle track"),
                Err(err) => tracing::warn!(video = %id, %err, "transcription failed; using the subtitle track"),
            }
        }
        match self.providers.subtitles.fetch(&video.candidate) {
            Ok(Some(raw)) => match parse_subtitles(&raw, FormatHint::Auto) {
                Ok(parsed) => return artifact(TranscriptSource::Subtitles, parsed.track),
                Err(err) => tracing::warn!(video = %id, %err, "unreadable subtitles"),
            },
            Ok(None) => tracing::warn!(video = %id, "no subtitles"),
            Err(err) => tracing::warn!(video = %id, %err, "subtitle download failed"),
        }
        artifact(TranscriptSource::Missing, SubtitleTrack::default())
    }

    /// Transcript, frames, keyframes and element graphs for one video.
    /// Content problems leave an empty keyframe list; only I/O on the
    /// workspace itself is an error.
    fn perceive_video(&self, video: &SelectedVideo) -> Result<(), PipelineError> {
        let ws = &self.workspace;
        let id = &video.candidate.video_id;
        let media = match self.providers.media.fetch(&video.candidate, &ws.media_dir()) {
            Ok(m) => Some(m),
            Err(err) => {
                tracing::warn!(video = %id, %err, "media download failed");
                None
            }
        };
        let transcript = self.transcript_for(video, media.as_ref());
        write_json(&ws.transcript(id), &transcript)?;

        let dir = ws.keyframes_dir(id);
        let mut artifact = KeyframeArtifact { schema_version: SCHEMA_VERSION, video_id: id.clone(), frame_count: 0, transitions: vec![], error: None };
        let frames = match &media {
            Some(m) => self.providers.frames.extract(m, self.config.providers.frames.fps, &dir.join("frames")),
            None => Err(ProviderError::DecodeFailure("no media".into())),
        };
        match frames {
            Ok(frames) => {
                artifact.frame_count = frames.len();
                let track = merge_sentences(&transcript.track, self.config.pipeline.gap_threshold_ms);
                match extract_keyframes(&frames, &track, &self.config.pipeline.background_params()) {
                    Ok((transitions, _)) => artifact.transitions = transitions,
                    Err(err) => {
                        tracing::warn!(video = %id, %err, "keyframe extraction failed");
                        artifact.error = Some(err.to_string());
                    }
                }
            }
            Err(err) => {
                tracing::warn!(video = %id, %err, "frame extraction failed");
                artifact.error = Some(err.to_string());
            }
        }
        if artifact.transitions.is_empty() {
            tracing::warn!(video = %id, "no keyframes");
        }

        for frame in keyframes_of(&artifact.transitions) {
            let graph = match &self.providers.elements {
                Some(detector) => match detector.detect(id, &frame) {
                    Ok(raw) => parse_element_graph(&raw, &frame).unwrap_or_else(|err| {
                        tracing::warn!(video = %id, frame = frame.frame_index, %err, "malformed element graph");
                        ElementGraph::empty(frame.clone())
                    }),
                    Err(err) => {
                        tracing::warn!(video = %id, frame = frame.frame_index, %err, "element detection failed");
                        ElementGraph::empty(frame.clone())
                    }
                },
                None => ElementGraph::empty(frame.clone()),
            };
            write_json(&ws.element_graph(id, frame.frame_index), &graph)?;
        }
        write_json(&ws.keyframes(id), &artifact)?;
        Ok(())
    }

    fn load_video_inputs(&self, id: &str) -> Result<(KeyframeArtifact, SubtitleTrack, BTreeMap<usize, ElementGraph>), PipelineError> {
        let ws = &self.workspace;
        let keyframes: KeyframeArtifact = read_json(&ws.keyframes(id)).map_err(|_| PipelineError::MissingArtifact {
            artifact: ws.keyframes(id),
            requires: Stage::Perceive,
        })?;
        let transcript: TranscriptArtifact = read_json(&ws.transcript(id)).map_err(|_| PipelineError::MissingArtifact {
            artifact: ws.transcript(id),
            requires: Stage::Perceive,
        })?;
        let mut graphs = BTreeMap::new();
        for frame in keyframes_of(&keyframes.transitions) {
            match read_json::<ElementGraph>(&ws.element_graph(id, frame.frame_index)) {
                Ok(g) => {
                    graphs.insert(frame.frame_index, g);
                }
                Err(err) => tracing::warn!(video = %id, frame = frame.frame_index, %err, "element graph unreadable"),
            }
        }
        let track = merge_sentences(&transcript.track, self.config.pipeline.gap_threshold_ms);
        Ok((keyframes, track, graphs))
    }

    pub fn annotate(&self) -> Result<(), PipelineError> {
        let selected = self.selected()?;
        let p = &self.config.pipeline;
        let opts = IdmOptions {
            model: &p.models.annotation,
            temperature: p.models.temperature,
            attempts: p.parse_attempts,
            max_in_flight: p.max_in_flight,
            pairing: p.pairing,
        };
        let per_video = bounded_map(&selected, p.max_in_flight, |_, v| -> Result<Vec<VideoAnnotation>, PipelineError> {
            let id = &v.candidate.video_id;
            let (keyframes, track, graphs) = self.load_video_inputs(id)?;
            let gw = self.gateway.scoped(id);
            let annotations = annotate_video(&keyframes.transitions, &graphs, &v.topic, &track, &gw, &opts);
            Ok(annotations.into_iter().map(|a| VideoAnnotation { video_id: id.clone(), annotation: a }).collect())
        });
        let mut buf = Vec::new();
        for lines in per_video {
            for line in lines? {
                buf.extend(serde_json::to_vec(&line).map_err(std::io::Error::other)?);
                buf.push(b'\n');
            }
        }
        write_atomic(&self.workspace.annotations(), &buf)?;
        Ok(())
    }

    pub fn decompose(&self) -> Result<(), PipelineError> {
        let retrieval = self.workspace.load_retrieval()?;
        let annotations = self.workspace.load_annotations()?;
        let p = &self.config.pipeline;
        let opts = DecomposeOptions { model: &p.models.decomposition, temperature: p.models.temperature, attempts: p.parse_attempts };
        let selected = retrieval.outcome.result.selected;
        let entries = bounded_map(&selected, p.max_in_flight, |_, v| -> Option<KnowledgeEntry> {
            let id = &v.candidate.video_id;
            let mine: Vec<FramePairAnnotation> =
                annotations.iter().filter(|a| &a.video_id == id).map(|a| a.annotation.clone()).collect();
            let meaningful = filter_meaningful(&mine);
            match consolidate_trajectory(&meaningful, &v.topic, id) {
                Ok(traj) => Some(decompose_video(&traj, v.relevance, &self.gateway.scoped(id), &opts)),
                Err(err) => {
                    tracing::warn!(video = %id, %err, "skipping video");
                    None
                }
            }
        });
        let bundle = KnowledgeBundle::new(&retrieval.outcome.task.task_id, entries.into_iter().flatten().collect());
        write_json(&self.workspace.knowledge(), &bundle)?;
        Ok(())
    }
}
