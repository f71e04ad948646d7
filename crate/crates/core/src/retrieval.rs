//! Subtitle-driven video retrieval: query generation, candidate search,
//! metadata pre-filter, GUI-demo classification, topic extraction,
//! dual-anchored relevance scoring and adaptive top-K selection.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concurrency::bounded_map;
use crate::config::ModelAssignment;
use crate::cost::stages;
use crate::provider::{ChatGateway, ModelRequest, ProviderError, SearchProvider, SubtitleSource};
use crate::structured::{first_json_object, loose_bool};
use crate::subtitle::{clean_transcript_with, parse_subtitles, CleanOptions, CleanTranscript, FormatHint};

pub const MAX_DURATION_S: f64 = 3_000.0;
pub const MAX_SELECTED: usize = 2;
pub const SECOND_PICK_MIN_RELEVANCE: f64 = 0.5;
pub const TOPIC_MIN_WORDS: usize = 12;
pub const TOPIC_MAX_WORDS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("search unavailable: {0}")]
    SearchUnavailable(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub application: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.instruction.trim().is_empty() {
            return Err(RetrievalError::InvalidTask("instruction is empty".into()));
        }
        if self.application.trim().is_empty() {
            return Err(RetrievalError::InvalidTask("application is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub primary: String,
    pub simplified: Option<String>,
}

impl SearchQuery {
    pub fn variants(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary.as_str()).chain(self.simplified.as_deref())
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCandidate {
    #[serde(alias = "id")]
    pub video_id: String,
    pub url: String,
    pub title: String,
    #[serde(default)]
    pub duration_s: f64,
    #[serde(default = "yes")]
    pub has_subtitles: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOneVerdict {
    pub is_gui_demo: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub text: String,
    pub word_count: usize,
}

impl Topic {
    /// Collapses whitespace and truncates to the word limit.
    pub fn normalized(raw: &str) -> Self {
        let words: Vec<&str> = raw.split_whitespace().take(TOPIC_MAX_WORDS).collect();
        Topic { text: words.join(" "), word_count: words.len() }
    }

    pub fn is_short(&self) -> bool {
        self.word_count < TOPIC_MIN_WORDS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: VideoCandidate,
    pub topic: Topic,
    pub relevance: f64,
    /// Position in the merged search results; breaks relevance ties.
    pub search_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedVideo {
    pub candidate: VideoCandidate,
    pub topic: Topic,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub task_id: String,
    pub selected: Vec<SelectedVideo>,
}

static FILLER: &[&str] = &[
    "how to", "how do i", "how do you", "how can i", "step by step", "tutorial", "tutorials", "guide", "in", "the",
    "a", "an", "for", "using", "with", "on", "easily", "easy", "quickly", "beginners", "beginner",
];

/// Removes filler phrases ("how to", "tutorial", articles, prepositions)
/// from a search query, keeping the remaining words in order.
pub fn strip_filler(query: &str) -> String {
    let words: Vec<&str> = query.split_whitespace().collect();
    let lower: Vec<String> =
        words.iter().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()).collect();
    let phrases: Vec<Vec<&str>> = FILLER.iter().map(|p| p.split(' ').collect()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < words.len() {
        for p in &phrases {
            if i + p.len() <= words.len() && p.iter().zip(&lower[i..]).all(|(a, b)| a == b) {
                i += p.len();
                continue 'outer;
            }
        }
        let w = words[i].trim_end_matches(['?', '!', '.', ',']);
        if !w.is_empty() {
            out.push(w);
        }
        i += 1;
    }
    out.join(" ")
}

fn first_line(text: &str) -> Option<String> {
    let line = text
        .lines()
        .map(|l| l.trim().trim_matches(['"', '\'', '`']).trim())
        .find(|l| !l.is_empty())?;
    let line = line.strip_prefix("Query:").map(str::trim).unwrap_or(line);
    (!line.is_empty()).then(|| line.split_whitespace().collect::<Vec<_>>().join(" "))
}

const QUERY_SYSTEM: &str = "You write YouTube search queries that find screen-recorded software tutorials. \
Reply with one query on a single line and nothing else.";

const SIMPLIFY_SYSTEM: &str = "Shorten the search query to its essential keywords: keep the operation and the \
application name, drop filler such as \"how to\" and \"tutorial\". Reply with the shortened query only.";

pub fn generate_queries(task: &TaskSpec, gw: &ChatGateway, models: &ModelAssignment, attempts: u32) -> Result<SearchQuery, RetrievalError> {
    task.validate()?;
    let req = ModelRequest::new(&models.query_generation, stages::QUERY_GENERATION)
        .temperature(models.temperature)
        .max_output_tokens(64)
        .system(QUERY_SYSTEM)
        .user(format!("Application: {}\nTask: {}", task.application.trim(), task.instruction.trim()));
    let (mut primary, _) = gw.chat_parsed(&req, attempts, first_line)?;
    if !primary.to_lowercase().contains(&task.application.trim().to_lowercase()) {
        primary = format!("{primary} in {}", task.application.trim());
    }

    let req = ModelRequest::new(&models.query_simplification, stages::QUERY_SIMPLIFICATION)
        .temperature(models.temperature)
        .max_output_tokens(32)
        .system(SIMPLIFY_SYSTEM)
        .user(primary.clone());
    let simplified = match gw.chat_parsed(&req, attempts, first_line) {
        Ok((text, _)) => strip_filler(&text),
        Err(err) => {
            tracing::warn!(%err, "query simplification failed; stripping filler locally");
            strip_filler(&primary)
        }
    };
    let simplified = (!simplified.is_empty() && !simplified.eq_ignore_ascii_case(&primary)).then_some(simplified);
    Ok(SearchQuery { primary, simplified })
}

/// Union of results over the query variants, deduplicated by video id in
/// first-seen order. One failing variant only costs its results.
pub fn search_candidates(
    queries: &SearchQuery,
    provider: &dyn SearchProvider,
    min_total: usize,
) -> Result<Vec<VideoCandidate>, RetrievalError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut failures = Vec::new();
    let mut attempted = 0;
    for q in queries.variants() {
        attempted += 1;
        match provider.search(q, min_total) {
            Ok(hits) => {
                for hit in hits {
                    if seen.insert(hit.video_id.clone()) {
                        out.push(hit);
                    }
                }
            }
            Err(err) => {
                tracing::warn!(query = q, %err, "search variant failed");
                failures.push(err.to_string());
            }
        }
    }
    if failures.len() == attempted {
        return Err(RetrievalError::SearchUnavailable(failures.join("; ")));
    }
    if out.len() < min_total {
        tracing::info!(found = out.len(), wanted = min_total, "search returned fewer candidates than requested");
    }
    Ok(out)
}

/// At least three characters remain after removing control characters and
/// at least one of them is alphanumeric.
pub fn valid_title(title: &str) -> bool {
    let kept: Vec<char> = title.chars().filter(|c| !c.is_control()).collect();
    kept.iter().filter(|c| !c.is_whitespace()).count() >= 3 && kept.iter().any(|c| c.is_alphanumeric())
}

pub fn prefilter(candidates: &[VideoCandidate]) -> Vec<VideoCandidate> {
    candidates
        .iter()
        .filter(|c| c.duration_s.is_finite() && c.duration_s >= 0.0 && c.duration_s < MAX_DURATION_S && valid_title(&c.title))
        .cloned()
        .collect()
}

const CLASSIFY_SYSTEM: &str = "You decide whether a video is a hands-on demonstration of operating a desktop or \
web application's graphical interface (menus, buttons, dialogs, settings) rather than a vlog, lecture, review or \
gameplay. Use the title and the subtitle transcript. Reply with a JSON object \
{\"is_gui_demo\": true|false, \"rationale\": \"<one sentence>\"}.";

fn parse_verdict(text: &str) -> Option<StageOneVerdict> {
    if let Some(obj) = first_json_object(text) {
        let is_gui = obj.get("is_gui_demo").or(obj.get("gui")).and_then(loose_bool)?;
        let rationale = obj.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string();
        return Some(StageOneVerdict { is_gui_demo: is_gui, rationale });
    }
    let head = text.trim().split(|c: char| !c.is_alphanumeric()).next()?.to_lowercase();
    let is_gui = loose_bool(&Value::String(head))?;
    Some(StageOneVerdict { is_gui_demo: is_gui, rationale: text.trim().to_string() })
}

/// Stage 1. Fails closed: no transcript, an unusable reply or a provider
/// failure all yield a non-GUI verdict.
pub fn classify_gui(
    candidate: &VideoCandidate,
    transcript: &CleanTranscript,
    gw: &ChatGateway,
    models: &ModelAssignment,
    attempts: u32,
) -> StageOneVerdict {
    if transcript.is_empty() {
        return StageOneVerdict { is_gui_demo: false, rationale: "no subtitle transcript".into() };
    }
    let req = ModelRequest::new(&models.gui_classification, stages::GUI_CLASSIFICATION)
        .temperature(models.temperature)
        .max_output_tokens(128)
        .system(CLASSIFY_SYSTEM)
        .user(format!("TITLE: {}\nTRANSCRIPT:\n{}", candidate.title, transcript.text));
    match gw.chat_parsed(&req, attempts, parse_verdict) {
        Ok((verdict, _)) => verdict,
        Err(err) => {
            tracing::warn!(video = %candidate.video_id, %err, "classification failed; rejecting");
            StageOneVerdict { is_gui_demo: false, rationale: format!("classification failed: {err}") }
        }
    }
}

const TOPIC_SYSTEM: &str = "From the title and subtitle transcript of a software tutorial, write one topic of 12 \
to 30 words naming the software actually shown, the task accomplished and its key operations. Trust the \
transcript over the title when they disagree. Reply with the topic only.";

fn parse_topic(text: &str) -> Option<String> {
    if let Some(obj) = first_json_object(text) {
        return obj.get("topic").and_then(Value::as_str).map(str::to_string).filter(|t| !t.trim().is_empty());
    }
    let t = text.trim().trim_start_matches("Topic:").trim().trim_matches(['"', '\'']);
    (!t.is_empty()).then(|| t.to_string())
}

/// Stage 2. Over-long topics are truncated; a short one triggers one more
/// request and is then accepted as is.
pub fn extract_topic(
    candidate: &VideoCandidate,
    transcript: &CleanTranscript,
    gw: &ChatGateway,
    models: &ModelAssignment,
    attempts: u32,
) -> Result<Topic, RetrievalError> {
    let build = |extra: &str| {
        ModelRequest::new(&models.topic_extraction, stages::TOPIC_EXTRACTION)
            .temperature(models.temperature)
            .max_output_tokens(96)
            .system(TOPIC_SYSTEM)
            .user(format!("TITLE: {}\nTRANSCRIPT:\n{}{extra}", candidate.title, transcript.text))
    };
    let (raw, _) = gw.chat_parsed(&build(""), attempts, parse_topic)?;
    let topic = Topic::normalized(&raw);
    if !topic.is_short() {
        return Ok(topic);
    }
    let retry = build(&format!("\n\nYour previous topic had only {} words; use 12 to 30 words.", topic.word_count));
    let second = match gw.chat_parsed(&retry, attempts, parse_topic) {
        Ok((raw, _)) => Topic::normalized(&raw),
        Err(err) => {
            tracing::warn!(video = %candidate.video_id, %err, "topic regeneration failed; keeping short topic");
            topic
        }
    };
    if second.is_short() {
        tracing::warn!(video = %candidate.video_id, words = second.word_count, "topic shorter than 12 words");
    }
    Ok(second)
}

/// The per-item relevance line, topic first and last.
pub fn dual_anchored(title: &str, topic: &str) -> String {
    format!("TOPIC (higher priority): {topic}. TITLE: {title}. TOPIC: {topic}")
}

const RELEVANCE_SYSTEM: &str = "Rate how useful each tutorial video is for completing the given computer task, \
from 0 (unrelated) to 1 (demonstrates exactly this task). Each video is described by its subtitle-derived TOPIC, \
which matters more than its TITLE. Reply with the scores in item order, separated by commas.";

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.:)]\s+)").unwrap());

/// Splits a score reply into one value per item: unparseable tokens become
/// 0.0, missing ones are padded with 0.0, and every value is clamped into
/// [0, 1]. Returns the scores plus the number of repaired items, or `None`
/// when the reply contains no number at all.
pub fn parse_scores(text: &str, n: usize) -> Option<(Vec<f64>, usize)> {
    let body = match (text.find('['), text.rfind(']')) {
        (Some(a), Some(b)) if a < b => &text[a + 1..b],
        _ => text,
    };
    let tokens: Vec<String> = body
        .split([',', '\n', ';'])
        .map(|t| NUMBERED.replace(t, "").trim().trim_matches(['"', '\'']).to_string())
        .filter(|t| !t.is_empty())
        .collect();
    let parsed: Vec<Option<f64>> =
        tokens.iter().map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite())).collect();
    if parsed.iter().all(Option::is_none) {
        return None;
    }
    let mut repaired = 0;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        match parsed.get(i).copied().flatten() {
            Some(v) => scores.push(v.clamp(0.0, 1.0)),
            None => {
                repaired += 1;
                scores.push(0.0);
            }
        }
    }
    Some((scores, repaired))
}

/// Stage 3: one batch call scoring every item.
pub fn score_relevance(
    task: &TaskSpec,
    items: &[(String, Topic)],
    gw: &ChatGateway,
    models: &ModelAssignment,
    attempts: u32,
) -> Result<Vec<f64>, RetrievalError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut prompt = format!("TASK ({}): {}\n\n", task.application.trim(), task.instruction.trim());
    for (i, (title, topic)) in items.iter().enumerate() {
        prompt.push_str(&format!("{}. {}\n", i + 1, dual_anchored(title, &topic.text)));
    }
    let req = ModelRequest::new(&models.relevance_scoring, stages::RELEVANCE_SCORING)
        .temperature(models.temperature)
        .max_output_tokens(64)
        .system(RELEVANCE_SYSTEM)
        .user(prompt.trim_end());
    let ((scores, repaired), _) = gw.chat_parsed(&req, attempts, |t| parse_scores(t, items.len()))?;
    if repaired > 0 {
        tracing::warn!(repaired, "relevance scores defaulted to 0.0");
    }
    Ok(scores)
}

/// Keeps the best candidate unconditionally and further ones (up to `k`,
/// never more than two) only when their relevance is at least 0.5. Ties go
/// to the earlier search rank.
pub fn select_top_k(task_id: &str, scored: &[ScoredCandidate], k: usize) -> RetrievalResult {
    let k = k.clamp(1, MAX_SELECTED);
    let mut order: Vec<&ScoredCandidate> = scored.iter().collect();
    order.sort_by(|a, b| {
        let ra = if a.relevance.is_nan() { 0.0 } else { a.relevance };
        let rb = if b.relevance.is_nan() { 0.0 } else { b.relevance };
        rb.total_cmp(&ra).then(a.search_rank.cmp(&b.search_rank))
    });
    let selected = order
        .into_iter()
        .enumerate()
        .filter(|(i, s)| *i == 0 || s.relevance >= SECOND_PICK_MIN_RELEVANCE)
        .take(k)
        .map(|(_, s)| SelectedVideo { candidate: s.candidate.clone(), topic: s.topic.clone(), relevance: s.relevance })
        .collect();
    RetrievalResult { task_id: task_id.to_string(), selected }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelOptions {
    pub max_candidates: usize,
    pub top_k: usize,
    pub max_in_flight: usize,
    pub parse_attempts: u32,
    pub clean: CleanOptions,
}

impl Default for FunnelOptions {
    fn default() -> Self {
        Self { max_candidates: 50, top_k: 2, max_in_flight: 4, parse_attempts: 3, clean: CleanOptions::default() }
    }
}

/// Per-candidate record of how far it got.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub candidate: VideoCandidate,
    pub search_rank: usize,
    pub prefilter_passed: bool,
    pub verdict: Option<StageOneVerdict>,
    pub topic: Option<Topic>,
    pub relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelOutcome {
    pub task: TaskSpec,
    pub queries: SearchQuery,
    pub candidates: Vec<CandidateTrace>,
    pub result: RetrievalResult,
    /// Cleaned transcripts of Stage-1 survivors, by video id.
    #[serde(skip)]
    pub transcripts: Vec<(String, CleanTranscript)>,
}

impl FunnelOutcome {
    pub fn prefiltered(&self) -> usize {
        self.candidates.iter().filter(|c| c.prefilter_passed).count()
    }

    pub fn gui_confirmed(&self) -> usize {
        self.candidates.iter().filter(|c| c.verdict.as_ref().is_some_and(|v| v.is_gui_demo)).count()
    }
}

fn transcript_for(candidate: &VideoCandidate, subtitles: &dyn SubtitleSource, opts: &CleanOptions) -> CleanTranscript {
    if !candidate.has_subtitles {
        return CleanTranscript::default();
    }
    let raw = match subtitles.fetch(candidate) {
        Ok(Some(raw)) => raw,
        Ok(None) => return CleanTranscript::default(),
        Err(err) => {
            tracing::warn!(video = %candidate.video_id, %err, "subtitle download failed");
            return CleanTranscript::default();
        }
    };
    match parse_subtitles(&raw, FormatHint::Auto) {
        Ok(parsed) => clean_transcript_with(&parsed.track, opts),
        Err(err) => {
            tracing::warn!(video = %candidate.video_id, %err, "unreadable subtitles");
            CleanTranscript::default()
        }
    }
}

pub struct FunnelDeps<'a> {
    pub search: &'a dyn SearchProvider,
    pub subtitles: &'a dyn SubtitleSource,
    pub gateway: &'a ChatGateway,
    pub models: &'a ModelAssignment,
}

/// Runs the whole funnel for one task.
pub fn run_funnel(task: &TaskSpec, deps: &FunnelDeps<'_>, opts: &FunnelOptions) -> Result<FunnelOutcome, RetrievalError> {
    let gw = deps.gateway;
    let queries = generate_queries(task, gw, deps.models, opts.parse_attempts)?;
    let found = search_candidates(&queries, deps.search, opts.max_candidates)?;
    let kept: HashSet<String> = prefilter(&found).into_iter().map(|c| c.video_id).collect();
    let mut traces: Vec<CandidateTrace> = found
        .into_iter()
        .enumerate()
        .map(|(rank, candidate)| CandidateTrace {
            prefilter_passed: kept.contains(&candidate.video_id),
            candidate,
            search_rank: rank,
            verdict: None,
            topic: None,
            relevance: None,
        })
        .collect();

    // Stage 1 and 2 fan out per candidate
    let stage_inputs: Vec<usize> = (0..traces.len()).filter(|&i| traces[i].prefilter_passed).collect();
    let staged = bounded_map(&stage_inputs, opts.max_in_flight, |_, &i| {
        let candidate = &traces[i].candidate;
        let transcript = transcript_for(candidate, deps.subtitles, &opts.clean);
        let verdict = classify_gui(candidate, &transcript, gw, deps.models, opts.parse_attempts);
        let topic = if verdict.is_gui_demo {
            match extract_topic(candidate, &transcript, gw, deps.models, opts.parse_attempts) {
                Ok(t) => Some(t),
                Err(err) => {
                    tracing::warn!(video = %candidate.video_id, %err, "topic extraction failed; dropping candidate");
                    None
                }
            }
        } else {
            None
        };
        (verdict, topic, transcript)
    });
    let mut transcripts = Vec::new();
    for (&i, (verdict, topic, transcript)) in stage_inputs.iter().zip(staged) {
        if verdict.is_gui_demo {
            transcripts.push((traces[i].candidate.video_id.clone(), transcript));
        }
        traces[i].verdict = Some(verdict);
        traces[i].topic = topic;
    }

    let finalists: Vec<usize> = (0..traces.len()).filter(|&i| traces[i].topic.is_some()).collect();
    let items: Vec<(String, Topic)> = finalists
        .iter()
        .map(|&i| (traces[i].candidate.title.clone(), traces[i].topic.clone().expect("finalist has topic")))
        .collect();
    let scores = score_relevance(task, &items, gw, deps.models, opts.parse_attempts)?;
    let mut scored = Vec::with_capacity(finalists.len());
    for (&i, score) in finalists.iter().zip(scores) {
        traces[i].relevance = Some(score);
        scored.push(ScoredCandidate {
            candidate: traces[i].candidate.clone(),
            topic: traces[i].topic.clone().expect("finalist has topic"),
            relevance: score,
            search_rank: traces[i].search_rank,
        });
    }
    let result = select_top_k(&task.task_id, &scored, opts.top_k);
    Ok(FunnelOutcome { task: task.clone(), queries, candidates: traces, result, transcripts })
}
