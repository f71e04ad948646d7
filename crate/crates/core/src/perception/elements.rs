use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FrameRef, PerceptionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Button,
    TextField,
    Menu,
    Icon,
    Other,
}

impl ElementKind {
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "button" | "btn" => Self::Button,
            "text_field" | "textfield" | "textbox" | "input" | "entry" => Self::TextField,
            "menu" | "menu_item" | "menuitem" | "menubar" => Self::Menu,
            "icon" => Self::Icon,
            _ => Self::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Button => "button",
            Self::TextField => "text_field",
            Self::Menu => "menu",
            Self::Icon => "icon",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UIElement {
    pub element_id: String,
    /// Normalized (x0, y0, x1, y1).
    pub bbox: [f64; 4],
    pub kind: ElementKind,
    pub text_label: String,
    pub interactive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementGraph {
    pub frame: FrameRef,
    pub elements: Vec<UIElement>,
}

impl ElementGraph {
    pub fn empty(frame: FrameRef) -> Self {
        Self { frame, elements: Vec::new() }
    }
}

/// Parses detector output: a JSON array (or `{"elements": [...]}`) of
/// `{id?, bbox: [x0,y0,x1,y1], type, text, interactivity}`. Boxes are
/// clamped into [0,1], degenerate or unreadable elements are dropped and
/// duplicate ids are re-keyed; each repair logs a warning.
pub fn parse_element_graph(raw: &[u8], frame: &FrameRef) -> Result<ElementGraph, PerceptionError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| PerceptionError::MalformedGraph(e.to_string()))?;
    let items = match &value {
        Value::Array(items) => items,
        Value::Object(map) => match map.get("elements") {
            Some(Value::Array(items)) => items,
            _ => return Err(PerceptionError::MalformedGraph("object without an `elements` array".into())),
        },
        _ => return Err(PerceptionError::MalformedGraph("top level is neither an array nor an object".into())),
    };

    let mut seen = HashSet::new();
    let mut elements = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            tracing::warn!(index = i, "element is not an object; dropped");
            continue;
        };
        let Some(mut bbox) = read_bbox(obj.get("bbox")) else {
            tracing::warn!(index = i, "element has no readable bbox; dropped");
            continue;
        };
        if bbox.iter().any(|v| !(0.0..=1.0).contains(v)) {
            tracing::warn!(index = i, ?bbox, "bbox outside [0,1]; clamped");
            for v in &mut bbox {
                *v = v.clamp(0.0, 1.0);
            }
        }
        if bbox[0] >= bbox[2] || bbox[1] >= bbox[3] {
            tracing::warn!(index = i, ?bbox, "degenerate bbox; dropped");
            continue;
        }
        let base = match obj.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("e{i}"),
        };
        let mut id = base.clone();
        let mut n = 2;
        while !seen.insert(id.clone()) {
            id = format!("{base}#{n}");
            n += 1;
        }
        if id != base {
            tracing::warn!(original = %base, rekeyed = %id, "duplicate element id");
        }
        let text = |k: &str| obj.get(k).and_then(Value::as_str);
        elements.push(UIElement {
            element_id: id,
            bbox,
            kind: ElementKind::parse(text("type").or(text("kind")).unwrap_or("other")),
            text_label: text("text").or(text("content")).unwrap_or_default().to_string(),
            interactive: obj
                .get("interactivity")
                .or(obj.get("interactive"))
                .and_then(crate::structured::loose_bool)
                .unwrap_or(false),
        });
    }
    Ok(ElementGraph { frame: frame.clone(), elements })
}

fn read_bbox(v: Option<&Value>) -> Option<[f64; 4]> {
    let arr = v?.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut out = [0.0; 4];
    for (slot, v) in out.iter_mut().zip(arr) {
        *slot = v.as_f64().filter(|f| f.is_finite())?;
    }
    Some(out)
}

/// Compact detector-format JSON; the inverse of [`parse_element_graph`].
pub fn serialize_element_graph(graph: &ElementGraph) -> String {
    let items: Vec<Value> = graph
        .elements
        .iter()
        .map(|e| {
            json!({
                "id": e.element_id,
                "bbox": e.bbox,
                "type": e.kind.as_str(),
                "text": e.text_label,
                "interactivity": e.interactive,
            })
        })
        .collect();
    Value::Array(items).to_string()
}
