//! Inverse-dynamics annotation: given two consecutive interface states,
//! their element graphs, the video topic and the narration around the
//! change, ask a vision-language model what the user did and whether it
//! mattered for the task.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concurrency::bounded_map;
use crate::cost::stages;
use crate::knowledge::validate_coordinate_free;
use crate::perception::{keyframes_of, serialize_element_graph, ElementGraph, FrameRef, TransitionSegment};
use crate::provider::{ChatGateway, ContentPart, ModelRequest, Usage};
use crate::retrieval::Topic;
use crate::structured::{first_json_object, loose_bool};
use crate::subtitle::{context_at, SubtitleContext, SubtitleTrack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// One (start, end) pair per detected transition.
    #[default]
    PerTransition,
    /// Every consecutive keyframe pair, overlapping.
    Sliding,
}

impl FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "per_transition" => Ok(Pairing::PerTransition),
            "sliding" => Ok(Pairing::Sliding),
            other => Err(format!("unknown pairing strategy {other:?}")),
        }
    }
}

pub fn pair_keyframes(transitions: &[TransitionSegment], strategy: Pairing) -> Vec<(FrameRef, FrameRef)> {
    match strategy {
        Pairing::PerTransition => transitions.iter().map(|t| (t.start_frame.clone(), t.end_frame.clone())).collect(),
        Pairing::Sliding => keyframes_of(transitions).windows(2).map(|w| (w[0].clone(), w[1].clone())).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub pair_index: usize,
    pub s_t: FrameRef,
    pub e_t: ElementGraph,
    pub s_t1: FrameRef,
    pub e_t1: ElementGraph,
    pub topic: Topic,
    pub context: SubtitleContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePairAnnotation {
    pub pair_index: usize,
    pub status: AnnotationStatus,
    pub meaningful: bool,
    #[serde(rename = "thought_action_nlp")]
    pub thought_action: String,
    #[serde(default)]
    pub coordinate_violations: Vec<String>,
    pub model_usage: Usage,
    #[serde(default)]
    pub raw_model_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FramePairAnnotation {
    fn failed(pair_index: usize, error: String) -> Self {
        Self {
            pair_index,
            status: AnnotationStatus::Failed,
            meaningful: false,
            thought_action: String::new(),
            coordinate_violations: Vec::new(),
            model_usage: Usage::default(),
            raw_model_output: String::new(),
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == AnnotationStatus::Ok
    }
}

const IDM_SYSTEM: &str = "You annotate screen recordings of software tutorials. You receive two consecutive \
keyframes of the same screen (BEFORE, then AFTER), the UI elements detected in each (JSON with normalized \
bounding boxes, type, visible text and whether the element is interactive), the tutorial topic and the narration \
spoken around the change.

1. Compare the two frames and use the two element lists to find element-level differences: elements that \
appeared, disappeared, changed text or changed state.
2. Decide whether the change is a meaningful step of the task described by the topic and narration. Mouse \
movement, window flicker, cursor blinking, video overlays, webcam or slide content and changes with no user \
action are not meaningful.
3. If meaningful, write what happened from the executor's perspective in the first person: why you act \
(the intent within the workflow), then the action, naming each element you use by its label and describing its \
appearance and position relative to nearby elements. Never give pixel coordinates.

Reply with a single JSON object with exactly these fields: {\"meaningful\": true|false, \"thought_action_nlp\": \
string}. Use an empty string for thought_action_nlp when the change is not meaningful.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmOptions<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub attempts: u32,
    pub max_in_flight: usize,
    pub pairing: Pairing,
}

pub fn build_idm_prompt(req: &AnnotationRequest, model: &str, temperature: f64) -> ModelRequest {
    let image = |f: &FrameRef| ContentPart::Image { path: f.image.path.clone(), width: f.image.width, height: f.image.height };
    let text = format!(
        "ELEMENTS BEFORE:\n{}\n\nELEMENTS AFTER:\n{}\n\nTOPIC: {}\n\nNARRATION:\nPrevious: {}\nCurrent: {}\nNext: {}",
        serialize_element_graph(&req.e_t),
        serialize_element_graph(&req.e_t1),
        req.topic.text,
        req.context.preceding,
        req.context.current,
        req.context.following,
    );
    ModelRequest::new(model, stages::FRAME_PAIR_IDM)
        .temperature(temperature)
        .system(IDM_SYSTEM)
        .user_parts(vec![image(&req.s_t), image(&req.s_t1), ContentPart::Text { text }])
}

/// Reads `{meaningful, thought_action_nlp}` from a reply, tolerating prose
/// around the object. A meaningful verdict without narrative is unusable.
pub fn parse_annotation(text: &str) -> Option<(bool, String)> {
    let obj = first_json_object(text)?;
    let meaningful = loose_bool(obj.get("meaningful")?)?;
    let narrative = match obj.get("thought_action_nlp") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(_) => return None,
    };
    if meaningful && narrative.is_empty() {
        return None;
    }
    Some((meaningful, narrative))
}

/// Never fails: an exhausted retry budget yields a `failed` record.
pub fn annotate_pair(req: &AnnotationRequest, gw: &ChatGateway, opts: &IdmOptions) -> FramePairAnnotation {
    let prompt = build_idm_prompt(req, opts.model, opts.temperature);
    match gw.chat_parsed(&prompt, opts.attempts, parse_annotation) {
        Ok(((meaningful, thought_action), resp)) => {
            let coordinate_violations = validate_coordinate_free(&thought_action);
            if !coordinate_violations.is_empty() {
                tracing::warn!(pair = req.pair_index, ?coordinate_violations, "annotation mentions coordinates");
            }
            FramePairAnnotation {
                pair_index: req.pair_index,
                status: AnnotationStatus::Ok,
                meaningful,
                thought_action,
                coordinate_violations,
                model_usage: resp.usage,
                raw_model_output: resp.text,
                error: None,
            }
        }
        Err(err) => {
            tracing::warn!(pair = req.pair_index, %err, "frame pair annotation failed");
            FramePairAnnotation::failed(req.pair_index, err.to_string())
        }
    }
}

/// Builds one request per frame pair and annotates them concurrently.
/// Frames without a graph get an empty one. The result has one entry per
/// pair, in pair order.
pub fn annotate_video(
    transitions: &[TransitionSegment],
    graphs: &BTreeMap<usize, ElementGraph>,
    topic: &Topic,
    track: &SubtitleTrack,
    gw: &ChatGateway,
    opts: &IdmOptions,
) -> Vec<FramePairAnnotation> {
    let graph_for = |f: &FrameRef| {
        graphs.get(&f.frame_index).cloned().unwrap_or_else(|| {
            tracing::warn!(frame = f.frame_index, "no element graph; using an empty one");
            ElementGraph::empty(f.clone())
        })
    };
    let requests: Vec<AnnotationRequest> = pair_keyframes(transitions, opts.pairing)
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let mid = a.timestamp_ms + (b.timestamp_ms.saturating_sub(a.timestamp_ms)) / 2;
            AnnotationRequest {
                pair_index: i,
                e_t: graph_for(&a),
                e_t1: graph_for(&b),
                s_t: a,
                s_t1: b,
                topic: topic.clone(),
                context: context_at(track, mid).unwrap_or_default(),
            }
        })
        .collect();
    bounded_map(&requests, opts.max_in_flight, |_, r| annotate_pair(r, gw, opts))
}

/// Keeps successful, meaningful annotations in their original order.
pub fn filter_meaningful(annotations: &[FramePairAnnotation]) -> Vec<FramePairAnnotation> {
    annotations.iter().filter(|a| a.is_ok() && a.meaningful).cloned().collect()
}

pub fn write_annotation_log(path: &Path, annotations: &[FramePairAnnotation]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for a in annotations {
        serde_json::to_writer(&mut buf, a).map_err(std::io::Error::other)?;
        buf.write_all(b"\n")?;
    }
    crate::fsutil::write_atomic(path, &buf)
}

pub fn read_annotation_log(path: &Path) -> std::io::Result<Vec<FramePairAnnotation>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::cost::Ledger;
    use crate::perception::ImageRef;
    use crate::provider::{FnChat, ModelResponse, ProviderError, RetryPolicy};

    fn frame(i: usize) -> FrameRef {
        FrameRef { frame_index: i, timestamp_ms: i as u64 * 500, image: ImageRef { path: PathBuf::from(format!("{i:06}.png")), width: 1920, height: 1080 } }
    }

    fn transitions(n: usize) -> Vec<TransitionSegment> {
        (0..n).map(|i| TransitionSegment { cue_index: 0, start_frame: frame(3 * i), end_frame: frame(3 * i + 2) }).collect()
    }

    fn opts() -> IdmOptions<'static> {
        IdmOptions { model: "gpt-5.1", temperature: 1.0, attempts: 3, max_in_flight: 4, pairing: Pairing::PerTransition }
    }

    #[test]
    fn pairing_counts() {
        assert_eq!(pair_keyframes(&transitions(15), Pairing::PerTransition).len(), 15);
        assert_eq!(pair_keyframes(&transitions(15), Pairing::Sliding).len(), 29);
        assert_eq!(pair_keyframes(&transitions(1), Pairing::Sliding).len(), 1);
        assert!(pair_keyframes(&[], Pairing::Sliding).is_empty());
        assert_eq!("sliding".parse::<Pairing>().unwrap(), Pairing::Sliding);
    }

    #[test]
    fn prompt_structure() {
        let req = AnnotationRequest {
            pair_index: 0,
            s_t: frame(0),
            e_t: ElementGraph::empty(frame(0)),
            s_t1: frame(1),
            e_t1: ElementGraph::empty(frame(1)),
            topic: Topic::normalized("GIMP"),
            context: SubtitleContext::default(),
        };
        let p = build_idm_prompt(&req, "gpt-5.1", 1.0);
        assert_eq!(p.image_count(), 2);
        assert_eq!(p.text().matches("[]").count(), 2);
        assert_eq!(p, build_idm_prompt(&req, "gpt-5.1", 1.0));
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_annotation("Sure: {\"meaningful\": true, \"thought_action_nlp\": \"I click the Colors menu.\"}"),
            Some((true, "I click the Colors menu.".into()))
        );
        assert_eq!(parse_annotation(r#"{"meaningful": "false", "thought_action_nlp": ""}"#), Some((false, String::new())));
        assert_eq!(parse_annotation(r#"{"meaningful": true, "thought_action_nlp": ""}"#), None);
        assert_eq!(parse_annotation("I think the user clicked."), None);
    }

    #[test]
    fn one_failed_pair_does_not_stop_the_video() {
        let n = Arc::new(AtomicUsize::new(0));
        let gw = ChatGateway::new(
            Arc::new(FnChat(move |req: &ModelRequest| {
                n.fetch_add(1, Ordering::SeqCst);
                if req.text().contains("Current: bad") {
                    Ok(ModelResponse::new("no json here", 5, 5))
                } else {
                    Ok(ModelResponse::new(r#"{"meaningful": true, "thought_action_nlp": "I press OK."}"#, 5, 5))
                }
            })),
            Arc::new(Ledger::in_memory()),
        )
        .with_retry(RetryPolicy::immediate(1));
        let track = SubtitleTrack::from_cues(vec![
            crate::subtitle::SubtitleCue::new(0, 0, 1800, "fine"),
            crate::subtitle::SubtitleCue::new(0, 1900, 2600, "bad"),
            crate::subtitle::SubtitleCue::new(0, 2600, 99_000, "fine again"),
        ]);
        let out = annotate_video(&transitions(15), &BTreeMap::new(), &Topic::normalized("t"), &track, &gw, &opts());
        assert_eq!(out.len(), 15);
        assert_eq!(out.iter().filter(|a| !a.is_ok()).count(), 1);
        assert!(out.iter().enumerate().all(|(i, a)| a.pair_index == i));
        assert_eq!(filter_meaningful(&out).len(), 14);
    }

    #[test]
    fn provider_failure_is_recorded() {
        let gw = ChatGateway::new(Arc::new(FnChat(|_: &ModelRequest| Err(ProviderError::Auth("nope".into())))), Arc::new(Ledger::in_memory()));
        let out = annotate_video(&transitions(2), &BTreeMap::new(), &Topic::normalized("t"), &SubtitleTrack::default(), &gw, &opts());
        assert!(out.iter().all(|a| a.status == AnnotationStatus::Failed));
        assert!(filter_meaningful(&out).is_empty());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = vec![FramePairAnnotation::failed(0, "x".into())];
        let path = dir.path().join("a.jsonl");
        write_annotation_log(&path, &a).unwrap();
        assert_eq!(read_annotation_log(&path).unwrap(), a);
    }
}
