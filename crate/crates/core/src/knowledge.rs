//! Per-video trajectories and their decomposition into planning knowledge
//! (workflow narrative plus key considerations) and grounding knowledge
//! (descriptions of key interactive elements).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::stages;
use crate::idm::FramePairAnnotation;
use crate::provider::{ChatGateway, ModelRequest, ProviderError};
use crate::retrieval::Topic;
use crate::structured::first_json_object;

pub const MAX_GROUNDING_ELEMENTS: usize = 15;
pub const DEFAULT_GROUNDING_K: usize = 7;
pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("video {video_id} has no meaningful steps")]
    EmptyTrajectory { video_id: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub video_id: String,
    pub topic: Topic,
    pub steps: Vec<String>,
}

impl Trajectory {
    pub fn render(&self) -> String {
        self.steps.iter().enumerate().map(|(i, s)| format!("Step {}: {}", i + 1, s.trim())).collect::<Vec<_>>().join("\n")
    }
}

/// Concatenates narratives in pair order. Expects the meaningful filter to
/// have run already.
pub fn consolidate_trajectory(
    annotations: &[FramePairAnnotation],
    topic: &Topic,
    video_id: &str,
) -> Result<Trajectory, KnowledgeError> {
    let steps: Vec<String> = annotations
        .iter()
        .map(|a| a.thought_action.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if steps.is_empty() {
        return Err(KnowledgeError::EmptyTrajectory { video_id: video_id.to_string() });
    }
    Ok(Trajectory { video_id: video_id.to_string(), topic: topic.clone(), steps })
}

static COORD_PATTERNS: LazyLock<[Regex; 3]> = LazyLock::new(|| {
    [
        Regex::new(
            r"(?i)\b(?:click|tap|press|move|drag|drop|hover|scroll|double-click|right-click|select)\w*(?:\s+\w+){0,3}\s*\(\s*\d+\s*,\s*\d+\s*\)",
        )
        .unwrap(),
        Regex::new(r"(?i)\b[xy]\s*=\s*\d+").unwrap(),
        Regex::new(r"(?i)\b\d+\s*px\b").unwrap(),
    ]
});

/// Substrings that look like absolute screen coordinates: an integer pair
/// right after a pointer verb, `x=`/`y=` assignments, and `NNNpx` offsets.
/// Typed values ("300 pixels") are left alone.
pub fn validate_coordinate_free(text: &str) -> Vec<String> {
    let mut hits: Vec<(usize, String)> = COORD_PATTERNS
        .iter()
        .flat_map(|re| re.find_iter(text).map(|m| (m.start(), m.as_str().to_string())))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, s)| s).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningKnowledge {
    pub execution_flow: String,
    pub key_considerations: Vec<String>,
    pub coordinate_free_ok: bool,
    pub violations: Vec<String>,
}

impl PlanningKnowledge {
    pub fn new(execution_flow: String, key_considerations: Vec<String>) -> Self {
        let mut violations = validate_coordinate_free(&execution_flow);
        for k in &key_considerations {
            violations.extend(validate_coordinate_free(k));
        }
        Self { execution_flow, key_considerations, coordinate_free_ok: violations.is_empty(), violations }
    }

    /// Text used for injection.
    pub fn render(&self) -> String {
        let mut out = self.execution_flow.trim().to_string();
        if !self.key_considerations.is_empty() {
            out.push_str("\n\nKey considerations:");
            for k in &self.key_considerations {
                out.push_str("\n- ");
                out.push_str(k.trim());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingElement {
    pub name: String,
    pub appearance_position: String,
    pub predicted_function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GroundingKnowledge {
    pub elements: Vec<GroundingElement>,
}

impl GroundingKnowledge {
    pub fn render(&self) -> String {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| {
                format!("{}. {}: {} Function: {}", i + 1, e.name.trim(), e.appearance_position.trim(), e.predicted_function.trim())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// First `min(k, n)` elements in stored order; k = 0 gives planning-only.
pub fn select_elements(g: &GroundingKnowledge, k: usize) -> GroundingKnowledge {
    GroundingKnowledge { elements: g.elements.iter().take(k).cloned().collect() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub attempts: u32,
}

const PLANNING_SYSTEM: &str = "You turn a chronological list of first-person GUI operation steps from one tutorial \
video into reusable planning knowledge for an agent doing a similar task. Write an execution flow: a coherent \
narrative of the workflow naming menus, dialogs and controls by their labels and the order they are used in. Then \
list key considerations, each one or two sentences, covering prerequisites, settings that matter and easy \
mistakes. Never mention pixel positions or coordinates; describe locations relative to other interface elements. \
Reply with a JSON object {\"execution_flow\": string, \"key_considerations\": [string]}.";

const GROUNDING_SYSTEM: &str = "From a chronological list of first-person GUI operation steps taken in one tutorial \
video, describe up to 15 key interactive elements the steps rely on, most important first. For each give its name, \
its appearance and position relative to the window and neighbouring elements (no pixel coordinates), and the \
function it serves in this workflow. Reply with a JSON object {\"elements\": [{\"name\": string, \
\"appearance_position\": string, \"predicted_function\": string}]}.";

const REGENERATE_NOTE: &str = "\n\nYour previous answer contained absolute screen coordinates. Rewrite it describing \
positions only relative to other interface elements.";

fn trajectory_prompt(traj: &Trajectory) -> String {
    format!("TOPIC: {}\n\nSTEPS:\n{}", traj.topic.text, traj.render())
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|i| i.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    }
}

fn parse_planning(text: &str) -> Option<(String, Vec<String>)> {
    let obj = first_json_object(text)?;
    let flow = obj.get("execution_flow").and_then(Value::as_str)?.trim().to_string();
    if flow.is_empty() {
        return None;
    }
    Some((flow, string_list(obj.get("key_considerations"))))
}

/// Planning decomposition. Coordinate violations trigger one regeneration;
/// if that still violates, the second reply is kept and its violations are
/// recorded.
pub fn decompose_planning(traj: &Trajectory, gw: &ChatGateway, opts: &DecomposeOptions) -> Result<PlanningKnowledge, KnowledgeError> {
    let build = |extra: &str| {
        ModelRequest::new(opts.model, stages::PLANNING)
            .temperature(opts.temperature)
            .system(PLANNING_SYSTEM)
            .user(format!("{}{extra}", trajectory_prompt(traj)))
    };
    let ((flow, considerations), _) = gw.chat_parsed(&build(""), opts.attempts, parse_planning)?;
    let first = PlanningKnowledge::new(flow, considerations);
    if first.coordinate_free_ok {
        return Ok(first);
    }
    tracing::warn!(video = %traj.video_id, violations = ?first.violations, "planning mentions coordinates; regenerating");
    match gw.chat_parsed(&build(REGENERATE_NOTE), opts.attempts, parse_planning) {
        Ok(((flow, considerations), _)) => {
            let second = PlanningKnowledge::new(flow, considerations);
            if !second.coordinate_free_ok {
                tracing::warn!(video = %traj.video_id, violations = ?second.violations, "keeping planning with coordinate violations");
            }
            Ok(second)
        }
        Err(err) => {
            tracing::warn!(video = %traj.video_id, %err, "planning regeneration failed; keeping first reply");
            Ok(first)
        }
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> &'a str {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str)).map(str::trim).unwrap_or("")
}

/// Parses the element list, dropping incomplete elements and ones whose
/// appearance carries coordinates. `None` when the reply has no element
/// array at all.
pub fn parse_grounding(text: &str) -> Option<Vec<GroundingElement>> {
    let obj = first_json_object(text)?;
    let items = obj.get("elements")?.as_array()?;
    let mut out = Vec::new();
    for item in items {
        let Some(el) = item.as_object() else { continue };
        let e = GroundingElement {
            name: field(el, &["name", "icon_control", "control"]).to_string(),
            appearance_position: field(el, &["appearance_position", "appearance", "position"]).to_string(),
            predicted_function: field(el, &["predicted_function", "function"]).to_string(),
        };
        if e.name.is_empty() || e.appearance_position.is_empty() || e.predicted_function.is_empty() {
            tracing::warn!(name = %e.name, "dropping incomplete grounding element");
            continue;
        }
        if !validate_coordinate_free(&e.appearance_position).is_empty() {
            tracing::warn!(name = %e.name, "dropping grounding element positioned by coordinates");
            continue;
        }
        out.push(e);
    }
    Some(out)
}

/// Grounding decomposition. Keeps the first 15 usable elements; `None`
/// when none survive.
pub fn decompose_grounding(
    traj: &Trajectory,
    gw: &ChatGateway,
    opts: &DecomposeOptions,
) -> Result<Option<GroundingKnowledge>, KnowledgeError> {
    let req = ModelRequest::new(opts.model, stages::GROUNDING)
        .temperature(opts.temperature)
        .system(GROUNDING_SYSTEM)
        .user(trajectory_prompt(traj));
    let (mut elements, _) = gw.chat_parsed(&req, opts.attempts, parse_grounding)?;
    if elements.is_empty() {
        tracing::warn!(video = %traj.video_id, "no usable grounding elements");
        return Ok(None);
    }
    if elements.len() > MAX_GROUNDING_ELEMENTS {
        tracing::info!(video = %traj.video_id, got = elements.len(), "truncating grounding elements");
        elements.truncate(MAX_GROUNDING_ELEMENTS);
    }
    Ok(Some(GroundingKnowledge { elements }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub video_id: String,
    pub topic: Topic,
    pub relevance: f64,
    pub planning: Option<PlanningKnowledge>,
    pub grounding: Option<GroundingKnowledge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub schema_version: u32,
    pub task_id: String,
    pub entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBundle {
    /// Entries sorted by relevance, highest first; equal scores keep their
    /// given order.
    pub fn new(task_id: impl Into<String>, mut entries: Vec<KnowledgeEntry>) -> Self {
        entries.sort_by(|a, b| b.relevance.total_cmp(&a.relevance));
        Self { schema_version: BUNDLE_SCHEMA_VERSION, task_id: task_id.into(), entries }
    }

    pub fn has_planning(&self) -> bool {
        self.entries.iter().any(|e| e.planning.is_some())
    }

    pub fn has_grounding(&self) -> bool {
        self.entries.iter().any(|e| e.grounding.as_ref().is_some_and(|g| !g.elements.is_empty()))
    }

    /// Copy with every grounding list cut to `k` elements.
    pub fn with_grounding_k(&self, k: usize) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.grounding = e.grounding.as_ref().map(|g| select_elements(g, k)).filter(|g| !g.elements.is_empty());
        }
        out
    }
}

/// Runs both decompositions for one video, concurrently. A failed channel
/// is left empty so injection can degrade per channel.
pub fn decompose_video(traj: &Trajectory, relevance: f64, gw: &ChatGateway, opts: &DecomposeOptions) -> KnowledgeEntry {
    let (planning, grounding) = std::thread::scope(|s| {
        let p = s.spawn(|| decompose_planning(traj, gw, opts));
        let g = decompose_grounding(traj, gw, opts);
        (p.join().expect("planning thread panicked"), g)
    });
    let planning = planning
        .map_err(|err| tracing::warn!(video = %traj.video_id, %err, "planning decomposition failed"))
        .ok();
    let grounding = grounding
        .map_err(|err| tracing::warn!(video = %traj.video_id, %err, "grounding decomposition failed"))
        .ok()
        .flatten();
    KnowledgeEntry { video_id: traj.video_id.clone(), topic: traj.topic.clone(), relevance, planning, grounding }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cost::Ledger;
    use crate::idm::AnnotationStatus;
    use crate::provider::{FnChat, ModelResponse, RetryPolicy};

    fn gateway(reply: impl Fn(&ModelRequest) -> Result<ModelResponse, ProviderError> + Send + Sync + 'static) -> ChatGateway {
        ChatGateway::new(Arc::new(FnChat(reply)), Arc::new(Ledger::in_memory())).with_retry(RetryPolicy::immediate(1))
    }

    fn traj() -> Trajectory {
        Trajectory { video_id: "v".into(), topic: Topic::normalized("GIMP contrast"), steps: vec!["I open Colors.".into()] }
    }

    const OPTS: DecomposeOptions<'static> = DecomposeOptions { model: "gpt-5.1", temperature: 1.0, attempts: 2 };

    #[test]
    fn coordinate_patterns() {
        assert_eq!(validate_coordinate_free("click at (512, 300)"), vec!["click at (512, 300)"]);
        assert!(validate_coordinate_free("below the Brightness slider").is_empty());
        assert!(validate_coordinate_free("set width to 300 pixels in the dialog field").is_empty());
        assert_eq!(validate_coordinate_free("x = 40 and 12px left").len(), 2);
        assert!(validate_coordinate_free("if a < b then press Enter (twice)").is_empty());
    }

    #[test]
    fn empty_trajectory() {
        assert!(matches!(consolidate_trajectory(&[], &Topic::normalized("x"), "v"), Err(KnowledgeError::EmptyTrajectory { .. })));
        let a = FramePairAnnotation {
            pair_index: 0,
            meaningful: true,
            thought_action: "I click File.".into(),
            raw_model_output: String::new(),
            status: AnnotationStatus::Ok,
            coordinate_violations: vec![],
            model_usage: Default::default(),
            error: None,
        };
        assert_eq!(consolidate_trajectory(&[a], &Topic::normalized("x"), "v").unwrap().steps.len(), 1);
    }

    #[test]
    fn planning_regenerates_once_then_keeps_violations() {
        let gw = gateway(|_| Ok(ModelResponse::new(r#"{"execution_flow": "I click at (512, 300) on Colors.", "key_considerations": []}"#, 1, 1)));
        let p = decompose_planning(&traj(), &gw, &OPTS).unwrap();
        assert!(!p.coordinate_free_ok);
        assert_eq!(p.violations, vec!["click at (512, 300)"]);
        assert_eq!(gw.ledger().len(), 2);
    }

    #[test]
    fn planning_regeneration_fixes() {
        let gw = gateway(|req| {
            let flow = if req.text().contains("previous answer") { "Open Colors then Brightness-Contrast." } else { "click (10, 10)" };
            Ok(ModelResponse::new(serde_json::json!({"execution_flow": flow, "key_considerations": ["Keep preview on."]}).to_string(), 1, 1))
        });
        let p = decompose_planning(&traj(), &gw, &OPTS).unwrap();
        assert!(p.coordinate_free_ok);
        assert_eq!(p.key_considerations, vec!["Keep preview on."]);
    }

    #[test]
    fn grounding_truncates_to_fifteen() {
        let els: Vec<Value> = (0..20)
            .map(|i| serde_json::json!({"name": format!("e{i}"), "appearance": "grey button at the top", "function": "does things"}))
            .collect();
        let reply = serde_json::json!({ "elements": els }).to_string();
        let gw = gateway(move |_| Ok(ModelResponse::new(reply.clone(), 1, 1)));
        let g = decompose_grounding(&traj(), &gw, &OPTS).unwrap().unwrap();
        assert_eq!(g.elements.len(), 15);
        assert_eq!(g.elements[14].name, "e14");
        assert_eq!(select_elements(&g, 7).elements.len(), 7);
        assert!(select_elements(&g, 0).elements.is_empty());
    }

    #[test]
    fn grounding_zero_elements_is_absent() {
        let gw = gateway(|_| Ok(ModelResponse::new(r#"{"elements": []}"#, 1, 1)));
        assert!(decompose_grounding(&traj(), &gw, &OPTS).unwrap().is_none());
    }

    #[test]
    fn bundle_sorted_by_relevance() {
        let e = |id: &str, r: f64| KnowledgeEntry { video_id: id.into(), topic: Topic::normalized("t"), relevance: r, planning: None, grounding: None };
        let b = KnowledgeBundle::new("t", vec![e("a", 0.6), e("b", 0.9)]);
        assert_eq!(b.entries[0].video_id, "b");
    }
}
