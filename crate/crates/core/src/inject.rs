//! Renders knowledge bundles into agent prompts: a planning block for a
//! worker's guidelines and a reference paragraph for a grounding agent
//! (multi-agent setups), or one knowledge section plus a response format
//! for single-model agents. Absent channels are left out entirely.

use serde::{Deserialize, Serialize};

use crate::knowledge::KnowledgeBundle;

pub const WORKER_TEMPLATE: &str = include_str!("../assets/templates/mode_a_worker.txt");
pub const GROUNDING_TEMPLATE: &str = include_str!("../assets/templates/mode_a_grounding.txt");
pub const UNIFIED_KNOWLEDGE_TEMPLATE: &str = include_str!("../assets/templates/mode_b_knowledge.txt");
pub const RESPONSE_FULL: &str = include_str!("../assets/templates/mode_b_response.txt");
pub const RESPONSE_PLANNING: &str = include_str!("../assets/templates/mode_b_response_planning.txt");
pub const RESPONSE_GROUNDING: &str = include_str!("../assets/templates/mode_b_response_grounding.txt");
pub const RESPONSE_NONE: &str = include_str!("../assets/templates/mode_b_response_none.txt");

/// Every substitution token used by the templates.
pub const PLACEHOLDERS: &[&str] = &["VIDEO_PLANNING", "{video_planning}", "{video_grounding}", "{element_description}"];

const GUIDELINES_SLOT: &str = "[Agent guidelines and action API]\n";
const HISTORY_SLOT: &str = "[Screenshot + interaction history]\n";
const SCREENSHOT_SLOT: &str = "[Current screenshot]\n";
const TOOLS_SLOT: &str = "[Tool definitions and function call schema]\n";
const PLANNING_HEADING: &str = "## Video Planning Reference";
const GROUNDING_HEADING: &str = "## Video Grounding Reference";
const LOCATE_LINE: &str = "Based on the screenshot, locate the target element:";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum InjectError {
    #[error("element description is empty")]
    EmptyDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    AWorker,
    AGrounding,
    BSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Channels {
    pub planning: bool,
    pub grounding: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub mode: PromptMode,
    pub text: String,
    pub channels_present: Channels,
}

/// Replaces tokens in one left-to-right pass, so substituted text is never
/// rescanned.
fn fill(template: &str, subs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = subs.iter().filter_map(|(tok, val)| rest.find(tok).map(|at| (at, *tok, *val))).min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, tok, val)) => {
                out.push_str(&rest[..at]);
                out.push_str(val);
                rest = &rest[at + tok.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

fn label(n: usize, relevance: f64) -> String {
    format!("Video {n} (relevance {relevance:.2}):")
}

/// Per-video planning texts, each under its own label.
pub fn labeled_planning(bundle: &KnowledgeBundle) -> Option<String> {
    let parts: Vec<String> = bundle
        .entries
        .iter()
        .filter_map(|e| e.planning.as_ref().map(|p| (e.relevance, p)))
        .enumerate()
        .map(|(i, (r, p))| format!("{}\n{}", label(i + 1, r), p.render()))
        .collect();
    (!parts.is_empty()).then(|| parts.join("\n\n"))
}

pub fn labeled_grounding(bundle: &KnowledgeBundle) -> Option<String> {
    let parts: Vec<String> = bundle
        .entries
        .iter()
        .filter_map(|e| e.grounding.as_ref().filter(|g| !g.elements.is_empty()).map(|g| (e.relevance, g)))
        .enumerate()
        .map(|(i, (r, g))| format!("{}\n{}", label(i + 1, r), g.render()))
        .collect();
    (!parts.is_empty()).then(|| parts.join("\n\n"))
}

fn between<'a>(text: &'a str, start: &str, end: Option<&str>) -> &'a str {
    let from = text.find(start).expect("template marker present");
    let to = end.map(|e| text.find(e).expect("template marker present")).unwrap_or(text.len());
    &text[from..to]
}

/// Worker guidelines, with the reference-plan block appended when any video
/// has planning knowledge. Without planning the guidelines come back as is.
pub fn render_mode_a_worker(bundle: &KnowledgeBundle, base_guidelines: &str) -> RenderedPrompt {
    let Some(planning) = labeled_planning(bundle) else {
        return RenderedPrompt { mode: PromptMode::AWorker, text: base_guidelines.to_string(), channels_present: Channels::default() };
    };
    let block = WORKER_TEMPLATE
        .strip_prefix(GUIDELINES_SLOT)
        .and_then(|t| t.strip_suffix(HISTORY_SLOT))
        .expect("worker template slots");
    let block = fill(block, &[("VIDEO_PLANNING", &planning)]);
    let base = base_guidelines.trim_end_matches('\n');
    let text = if base.is_empty() { block.trim_start_matches('\n').to_string() } else { format!("{base}\n{block}") };
    RenderedPrompt { mode: PromptMode::AWorker, text, channels_present: Channels { planning: true, grounding: false } }
}

/// Grounding-agent query. The reference paragraph is only present when some
/// video has grounding knowledge.
pub fn render_mode_a_grounding(bundle: &KnowledgeBundle, element_description: &str) -> Result<RenderedPrompt, InjectError> {
    let description = element_description.trim();
    if description.is_empty() {
        return Err(InjectError::EmptyDescription);
    }
    let body = GROUNDING_TEMPLATE.strip_suffix(SCREENSHOT_SLOT).expect("grounding template slot");
    let grounding = labeled_grounding(bundle);
    let text = match &grounding {
        Some(g) => fill(body, &[("{video_grounding}", g), ("{element_description}", description)]),
        None => fill(between(body, LOCATE_LINE, None), &[("{element_description}", description)]),
    };
    Ok(RenderedPrompt {
        mode: PromptMode::AGrounding,
        text,
        channels_present: Channels { planning: false, grounding: grounding.is_some() },
    })
}

/// Single-model system prompt: tool schema, knowledge section (each
/// subsection only when its channel exists) and the response format that
/// matches the channels present.
pub fn render_mode_b_system(bundle: &KnowledgeBundle, tool_schema: &str) -> RenderedPrompt {
    let planning = labeled_planning(bundle);
    let grounding = labeled_grounding(bundle);
    let knowledge = UNIFIED_KNOWLEDGE_TEMPLATE.strip_prefix(TOOLS_SLOT).expect("unified template slot");
    let header = between(knowledge, "# External Knowledge", Some(PLANNING_HEADING));
    let planning_section = between(knowledge, PLANNING_HEADING, Some(GROUNDING_HEADING));
    let grounding_section = between(knowledge, GROUNDING_HEADING, None);

    let mut text = tool_schema.trim_end_matches('\n').to_string();
    text.push_str("\n\n");
    if planning.is_some() || grounding.is_some() {
        let mut section = header.to_string();
        if let Some(p) = &planning {
            section.push_str(&fill(planning_section, &[("{video_planning}", p)]));
        }
        if let Some(g) = &grounding {
            section.push_str(&fill(grounding_section, &[("{video_grounding}", g)]));
        }
        text.push_str(section.trim_end_matches('\n'));
        text.push_str("\n\n");
    }
    text.push_str(match (planning.is_some(), grounding.is_some()) {
        (true, true) => RESPONSE_FULL,
        (true, false) => RESPONSE_PLANNING,
        (false, true) => RESPONSE_GROUNDING,
        (false, false) => RESPONSE_NONE,
    });
    RenderedPrompt {
        mode: PromptMode::BSystem,
        text,
        channels_present: Channels { planning: planning.is_some(), grounding: grounding.is_some() },
    }
}
