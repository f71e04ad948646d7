//! The recorded end-to-end fixture: two GIMP tutorials rendered as scripted
//! scenes, their captions and element graphs, and a scripted model whose
//! replies are recorded into `chat.jsonl`.
//!
//! Usage per selected video is scripted to match the reference annotation
//! profile: 11 pairs with rich element graphs at 9,800 input tokens, 4
//! cutaway pairs at 4,850, 423 or 424 output tokens each, and 3,178 input
//! tokens for each decomposition call.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use guide_core::config::{Backend, Config, FrameSource, Providers};
use guide_core::cost::Ledger;
use guide_core::pipeline::{Pipeline, TaskWorkspace};
use guide_core::provider::fixture::RecordingChat;
use guide_core::provider::synthetic::{Scene, SceneEvent};
use guide_core::provider::{ChatGateway, ChatModel, ModelRequest, ModelResponse, ProviderError};
use guide_core::retrieval::{strip_filler, TaskSpec, VideoCandidate};
use serde_json::{json, Value};

pub const TASK_ID: &str = "gimp-brighten-dark-photo";
pub const SELECTED: [&str; 2] = ["gimp-bc-01", "gimp-levels-02"];
pub const FRAMES: usize = 47;
pub const TRANSITIONS: usize = 15;
/// Transitions showing the presenter's webcam instead of the application.
pub const CUTAWAYS: [usize; 4] = [3, 7, 11, 14];
pub const GROUNDING_ELEMENTS: [usize; 2] = [18, 9];

const PRIMARY_QUERY: &str = "how to brighten a dark photo in GIMP";
const SIMPLIFIED_REPLY: &str = "brighten dark photo GIMP";
const UNCOVERED_QUERY: &str = "how to add slide transitions in LibreOffice Impress";
const UNCOVERED_SIMPLIFIED: &str = "slide transitions LibreOffice Impress";

pub fn task() -> TaskSpec {
    TaskSpec {
        task_id: TASK_ID.into(),
        instruction: "Make the dark photo that is open in GIMP brighter and export it as photo_bright.png".into(),
        application: "GIMP".into(),
    }
}

/// A task whose search only finds a travel vlog and an over-long course.
pub fn uncovered_task() -> TaskSpec {
    TaskSpec {
        task_id: "impress-slide-transitions".into(),
        instruction: "Add a fade transition to every slide of the open presentation".into(),
        application: "LibreOffice Impress".into(),
    }
}

struct Video {
    id: &'static str,
    title: &'static str,
    duration_s: f64,
    /// `None`: no caption track at all.
    gui: Option<bool>,
    topic: &'static str,
    relevance: f64,
    narration: [&'static str; 5],
    /// Target control of each transition; cutaways are skipped.
    steps: [(&'static str, &'static str); 11],
    background: [u8; 3],
}

const VIDEOS: [Video; 7] = [
    Video {
        id: "gimp-bc-01",
        title: "GIMP Brightness-Contrast: brighten a dark photo",
        duration_s: 412.0,
        gui: Some(true),
        topic: "Brightening an underexposed photo in GIMP 2.10 with the Brightness-Contrast dialog from the Colors menu, previewing the result and exporting the edited image",
        relevance: 0.92,
        narration: [
            "Open the dark photo you want to fix from the File menu.",
            "Now go to the Colors menu and choose Brightness-Contrast.",
            "Drag the brightness slider to the right until the shadows open up.",
            "Raise the contrast a little and keep the preview switched on.",
            "Click OK and export the result with File, Export As.",
        ],
        steps: [
            ("File", "menu"),
            ("Open...", "menu"),
            ("Open", "button"),
            ("Colors", "menu"),
            ("Brightness-Contrast...", "menu"),
            ("Brightness", "other"),
            ("Contrast", "other"),
            ("Preview", "button"),
            ("OK", "button"),
            ("File", "menu"),
            ("Export As...", "menu"),
        ],
        background: [46, 48, 52],
    },
    Video {
        id: "gimp-levels-02",
        title: "Fix underexposed pictures with Levels in GIMP",
        duration_s: 655.0,
        gui: Some(true),
        topic: "Correcting a dark picture in GIMP using the Levels tool under the Colors menu by moving the input sliders while watching the histogram",
        relevance: 0.71,
        narration: [
            "Here is an underexposed picture already open in GIMP.",
            "Open the Colors menu and pick Levels.",
            "Move the white input slider to the left toward the end of the histogram.",
            "Nudge the middle slider to lift the midtones.",
            "Press OK and save a copy with Export As.",
        ],
        steps: [
            ("Colors", "menu"),
            ("Levels...", "menu"),
            ("Channel", "menu"),
            ("White point", "other"),
            ("Input Levels", "other"),
            ("Gamma", "text_field"),
            ("Auto Input Levels", "button"),
            ("OK", "button"),
            ("File", "menu"),
            ("Export As...", "menu"),
            ("Export", "button"),
        ],
        background: [60, 60, 64],
    },
    Video {
        id: "gimp-curves-03",
        title: "GIMP Curves tool explained",
        duration_s: 980.0,
        gui: Some(true),
        topic: "Explaining the GIMP Curves tool, its channels and control points, and how curve shapes change contrast in general photo editing",
        relevance: 0.38,
        narration: [
            "Curves is the most flexible tone tool in GIMP.",
            "Every point you add bends the tone response.",
            "An S shape adds contrast.",
            "Channels let you work on red, green and blue separately.",
            "That is all for this overview.",
        ],
        steps: [("", ""); 11],
        background: [0, 0, 0],
    },
    Video {
        id: "travel-vlog-04",
        title: "Weekend in Lisbon | travel vlog",
        duration_s: 540.0,
        gui: Some(false),
        topic: "",
        relevance: 0.0,
        narration: [
            "Good morning from Lisbon!",
            "We start with coffee by the river.",
            "The trams here are amazing.",
            "Lunch was grilled sardines.",
            "See you next week.",
        ],
        steps: [("", ""); 11],
        background: [0, 0, 0],
    },
    Video {
        id: "gimp-course-05",
        title: "GIMP full course for beginners",
        duration_s: 11_400.0,
        gui: Some(true),
        topic: "",
        relevance: 0.0,
        narration: [""; 5],
        steps: [("", ""); 11],
        background: [0, 0, 0],
    },
    Video {
        id: "noise-06",
        title: "!!!",
        duration_s: 120.0,
        gui: Some(true),
        topic: "",
        relevance: 0.0,
        narration: [""; 5],
        steps: [("", ""); 11],
        background: [0, 0, 0],
    },
    Video {
        id: "gimp-nosubs-07",
        title: "Brighten photos GIMP",
        duration_s: 300.0,
        gui: None,
        topic: "",
        relevance: 0.0,
        narration: [""; 5],
        steps: [("", ""); 11],
        background: [0, 0, 0],
    },
];

fn video(id: &str) -> &'static Video {
    VIDEOS.iter().find(|v| v.id == id).expect("known fixture video")
}

fn candidate(id: &str) -> VideoCandidate {
    let v = video(id);
    VideoCandidate {
        video_id: v.id.into(),
        url: format!("https://www.youtube.com/watch?v={}", v.id),
        title: v.title.into(),
        duration_s: v.duration_s,
        has_subtitles: v.gui.is_some(),
    }
}

/// Frame on which transition `j` changes the screen. Transitions are three
/// frames apart so their keyframes never overlap.
pub fn change_frame(j: usize) -> usize {
    3 * j + 2
}

/// Cue `k` covers transitions 3k..3k+2 and starts on the frame before the
/// first of them.
fn cue_bounds_ms(k: usize) -> (u64, u64) {
    let start_frame = if k == 0 { 0 } else { 3 * (3 * k) + 1 };
    let end_ms = if k == 4 { FRAMES as u64 * 500 } else { (3 * (3 * (k + 1)) + 1) as u64 * 500 - 200 };
    (start_frame as u64 * 500, end_ms)
}

fn vtt_time(ms: u64) -> String {
    format!("00:{:02}:{:02}.{:03}", ms / 60_000, (ms / 1000) % 60, ms % 1000)
}

fn captions(v: &Video, numbered: bool) -> String {
    let mut out = String::from("WEBVTT\n\n");
    for (k, line) in v.narration.iter().enumerate() {
        let (s, e) = cue_bounds_ms(k);
        if numbered {
            out.push_str(&format!("{}\n", k + 1));
        }
        out.push_str(&format!("{} --> {}\n{line}\n\n", vtt_time(s), vtt_time(e)));
    }
    out
}

fn scene(v: &Video) -> Scene {
    let palette: [[u8; 3]; 15] = [
        [230, 80, 60],
        [60, 200, 90],
        [70, 110, 235],
        [240, 210, 70],
        [200, 70, 210],
        [80, 220, 220],
        [250, 150, 40],
        [140, 240, 120],
        [150, 90, 250],
        [245, 245, 245],
        [120, 30, 30],
        [30, 120, 30],
        [30, 30, 140],
        [180, 180, 40],
        [40, 160, 200],
    ];
    let events = (0..TRANSITIONS)
        .map(|j| {
            let (col, row) = ((j % 5) as u32, (j / 5) as u32);
            let rect = if CUTAWAYS.contains(&j) {
                // presenter webcam overlay
                [1500, 40 + 340 * row, 380, 300]
            } else {
                [40 + 290 * col, 60 + 340 * row, 260, 220]
            };
            SceneEvent { frame: change_frame(j), rect, color: palette[j] }
        })
        .collect();
    Scene { width: 1920, height: 1080, fps: 2.0, frames: FRAMES, background: v.background, events }
}

const FILLER: [(&str, &str); 12] = [
    ("Move Tool", "icon"),
    ("Rectangle Select Tool", "icon"),
    ("Crop Tool", "icon"),
    ("Paintbrush Tool", "icon"),
    ("Text Tool", "icon"),
    ("Layers", "other"),
    ("Channels", "other"),
    ("Paths", "other"),
    ("Opacity", "text_field"),
    ("Mode", "menu"),
    ("Zoom", "menu"),
    ("Undo History", "other"),
];

/// Detector output for the keyframes of transition `j`: the target control
/// first, then the rest of the window.
fn element_graph(v: &Video, j: usize) -> String {
    if CUTAWAYS.contains(&j) {
        return json!([{"id": "0", "bbox": [0.78, 0.04, 0.98, 0.32], "type": "other", "text": "webcam", "interactivity": false}])
            .to_string();
    }
    let step = valid_index(j);
    let (label, kind) = v.steps[step];
    let mut items = vec![json!({"id": "0", "bbox": [0.02, 0.0, 0.06, 0.03], "type": kind, "text": label, "interactivity": true})];
    if step == 0 {
        items.push(json!({"id": "dlg", "bbox": [0.3, 0.2, 0.7, 0.8], "type": "other", "text": "Open Image", "interactivity": false}));
    }
    let mut n = 1;
    while serde_json::to_string(&items).unwrap().len() < 9_900 {
        let (text, kind) = FILLER[n % FILLER.len()];
        let x = (n % 20) as f64 * 0.045;
        let y = 0.05 + (n / 20) as f64 * 0.04;
        items.push(json!({
            "id": n.to_string(),
            "bbox": [round3(x), round3(y), round3(x + 0.04), round3(y + 0.035)],
            "type": kind,
            "text": format!("{text} {n}"),
            "interactivity": kind != "other",
        }));
        n += 1;
    }
    Value::Array(items).to_string()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn valid_index(j: usize) -> usize {
    j - CUTAWAYS.iter().filter(|&&c| c < j).count()
}

/// Writes every fixture input and `config.json` into `dir`. The chat
/// recording is made separately by [`record`].
pub fn write_inputs(dir: &Path) {
    let sub = |name: &str| {
        let p = dir.join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let (subs, transcripts, scenes, elements) = (sub("subtitles"), sub("transcripts"), sub("scenes"), sub("elements"));
    for v in &VIDEOS {
        if v.gui.is_some() && !v.narration[0].is_empty() {
            std::fs::write(subs.join(format!("{}.vtt", v.id)), captions(v, true)).unwrap();
        }
    }
    for id in SELECTED {
        let v = video(id);
        std::fs::write(transcripts.join(format!("{id}.vtt")), captions(v, false)).unwrap();
        std::fs::write(scenes.join(format!("{id}.json")), serde_json::to_string_pretty(&scene(v)).unwrap()).unwrap();
        let dir = elements.join(id);
        std::fs::create_dir_all(&dir).unwrap();
        for j in 0..TRANSITIONS {
            let graph = element_graph(v, j);
            for frame in [change_frame(j) - 1, change_frame(j) + 1] {
                std::fs::write(dir.join(format!("{frame:06}.json")), &graph).unwrap();
            }
        }
    }
    let simplified = strip_filler(SIMPLIFIED_REPLY);
    let primary_hits = ["gimp-bc-01", "gimp-curves-03", "travel-vlog-04", "gimp-course-05"].map(candidate);
    let simplified_hits = ["gimp-levels-02", "gimp-bc-01", "noise-06", "gimp-nosubs-07"].map(candidate);
    let mut queries = serde_json::Map::new();
    queries.insert(PRIMARY_QUERY.to_string(), json!(primary_hits));
    queries.insert(simplified, json!(simplified_hits));
    queries.insert(UNCOVERED_QUERY.to_string(), json!(["travel-vlog-04"].map(candidate)));
    queries.insert(strip_filler(UNCOVERED_SIMPLIFIED), json!(["gimp-course-05"].map(candidate)));
    let search = json!({ "queries": queries });
    std::fs::write(dir.join("search.json"), serde_json::to_string_pretty(&search).unwrap()).unwrap();
    std::fs::write(dir.join("task.json"), serde_json::to_string_pretty(&task()).unwrap()).unwrap();
    std::fs::write(dir.join("task_uncovered.json"), serde_json::to_string_pretty(&uncovered_task()).unwrap()).unwrap();
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config_json()).unwrap()).unwrap();
}

fn config_json() -> Value {
    json!({
        "providers": {
            "chat": {"backend": "fixture", "fixture": "chat.jsonl", "retry": {"attempts": 1, "base_backoff_ms": 0}},
            "search": {"backend": "fixture", "fixture": "search.json"},
            "subtitles": {"backend": "fixture", "fixture": "subtitles"},
            "transcription": {"backend": "fixture", "fixture": "transcripts"},
            "elements": {"backend": "fixture", "fixture": "elements"},
            "frames": {"backend": "scene", "fixture": "scenes"}
        },
        "pipeline": {"max_in_flight": 2}
    })
}

/// Stands in for the hosted models while recording.
pub struct ScriptedChat;

fn line_after<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(prefix)).unwrap_or("").trim()
}

fn video_by_title(text: &str) -> Option<&'static Video> {
    let title = line_after(text, "TITLE:");
    VIDEOS.iter().find(|v| v.title == title)
}

fn video_by_topic(text: &str) -> Option<&'static Video> {
    let topic = line_after(text, "TOPIC:");
    VIDEOS.iter().find(|v| !v.topic.is_empty() && v.topic == topic)
}

fn region(bbox: &[Value]) -> &'static str {
    match bbox.get(1).and_then(Value::as_f64) {
        Some(y) if y < 0.05 => "menu bar along the top of the window",
        Some(y) if y < 0.5 => "upper half of the window",
        _ => "lower half of the window",
    }
}

fn idm_reply(text: &str) -> ModelResponse {
    let before = line_after_block(text, "ELEMENTS BEFORE:");
    let after = line_after_block(text, "ELEMENTS AFTER:");
    if before.len() < 1_000 {
        return ModelResponse::new(r#"{"meaningful": false, "thought_action_nlp": ""}"#, 4_850, 424);
    }
    let items: Vec<Value> = serde_json::from_str(after).unwrap_or_default();
    let target = items.first().cloned().unwrap_or(Value::Null);
    let label = target["text"].as_str().unwrap_or("control");
    let kind = target["type"].as_str().unwrap_or("other").replace('_', " ");
    let kind = if kind == "other" { "control".to_string() } else { kind };
    let bbox = target["bbox"].as_array().cloned().unwrap_or_default();
    let current = line_after(text, "Current:").trim_end_matches('.');
    let narrative = format!(
        "The narrator says \"{current}\", so I need the {label} {kind}. I click the {kind} labeled \"{label}\" in the {} \
         and the window updates to show its result.",
        region(&bbox)
    );
    let first_step = before.contains("Open Image");
    let reply = json!({"meaningful": true, "thought_action_nlp": narrative}).to_string();
    ModelResponse::new(reply, 9_800, if first_step { 424 } else { 423 })
}

fn line_after_block<'a>(text: &'a str, header: &str) -> &'a str {
    let mut lines = text.lines();
    while let Some(l) = lines.next() {
        if l.trim() == header {
            return lines.next().unwrap_or("");
        }
    }
    ""
}

fn planning_reply(v: &Video, text: &str) -> ModelResponse {
    let steps: Vec<&str> = text.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).collect();
    let controls: Vec<&str> = v.steps.iter().map(|(label, _)| *label).collect();
    let flow = format!(
        "{} The workflow uses {} in that order, confirming the dialog before exporting. It took {} recorded steps.",
        v.topic,
        controls.join(", then "),
        steps.len()
    );
    let reply = json!({
        "execution_flow": flow,
        "key_considerations": [
            "Keep the preview enabled so every slider change is visible before it is applied.",
            "Small adjustments are enough; pushing brightness too far washes out the highlights.",
            "Export As writes a new file, while Save would write the native GIMP format instead."
        ]
    });
    ModelResponse::new(reply.to_string(), 3_178, 546)
}

fn grounding_reply(v: &Video) -> ModelResponse {
    let n = if v.id == SELECTED[0] { GROUNDING_ELEMENTS[0] } else { GROUNDING_ELEMENTS[1] };
    let mut names: Vec<String> = Vec::new();
    for (label, _) in v.steps {
        if !names.iter().any(|x| x == label) {
            names.push(label.to_string());
        }
    }
    let mut i = 0;
    while names.len() < n {
        names.push(FILLER[i].0.to_string());
        i += 1;
    }
    let elements: Vec<Value> = names
        .iter()
        .take(n)
        .map(|name| {
            json!({
                "name": name,
                "appearance_position": format!("Labeled \"{name}\", drawn in the default GIMP theme near the related controls of the main window"),
                "predicted_function": format!("Used for the {name} step of the adjustment"),
            })
        })
        .collect();
    ModelResponse::new(json!({ "elements": elements }).to_string(), 3_178, 1_650)
}

impl ChatModel for ScriptedChat {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let text = req.text();
        let unknown = || ProviderError::ModelFailure(format!("script has no reply for {}", req.summary()));
        let resp = match req.stage.as_str() {
            "query_generation" if text.contains("Impress") => ModelResponse::new(UNCOVERED_QUERY, 109, 10),
            "query_generation" => ModelResponse::new(PRIMARY_QUERY, 109, 10),
            "query_simplification" if text.contains("Impress") => ModelResponse::new(UNCOVERED_SIMPLIFIED, 268, 20),
            "query_simplification" => ModelResponse::new(SIMPLIFIED_REPLY, 268, 20),
            "gui_classification" => {
                let v = video_by_title(&text).ok_or_else(unknown)?;
                let gui = v.gui == Some(true);
                let why = if gui { "The narration walks through menus and dialogs of GIMP." } else { "A travel diary with no software on screen." };
                ModelResponse::new(json!({"is_gui_demo": gui, "rationale": why}).to_string(), 2_892, 35)
            }
            "topic_extraction" => ModelResponse::new(video_by_title(&text).ok_or_else(unknown)?.topic, 2_892, 35),
            "relevance_scoring" => {
                let scores: Vec<String> = text
                    .lines()
                    .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
                    .map(|l| {
                        let v = VIDEOS.iter().find(|v| !v.topic.is_empty() && l.contains(v.topic));
                        format!("{:.2}", v.map_or(0.0, |v| v.relevance))
                    })
                    .collect();
                ModelResponse::new(scores.join(", "), 436, 25)
            }
            "frame_pair_idm" => idm_reply(&text),
            "planning_split" => planning_reply(video_by_topic(&text).ok_or_else(unknown)?, &text),
            "grounding_split" => grounding_reply(video_by_topic(&text).ok_or_else(unknown)?),
            _ => return Err(unknown()),
        };
        Ok(resp)
    }
}

/// Writes the inputs, runs the pipeline against [`ScriptedChat`] and saves
/// every exchange to `dir/chat.jsonl`.
pub fn record(dir: &Path) {
    write_inputs(dir);
    let chat_path = dir.join("chat.jsonl");
    std::fs::write(&chat_path, "").unwrap();
    let config = Config::load(&dir.join("config.json")).unwrap();
    assert_eq!(config.providers.chat.backend, Backend::Fixture);
    assert_eq!(config.providers.frames.backend, FrameSource::Scene);
    let mut providers = Providers::from_config(&config.providers).unwrap();
    let recorder = Arc::new(RecordingChat::new(Arc::new(ScriptedChat)));
    providers.chat = recorder.clone();
    let gateway = ChatGateway::new(providers.chat.clone(), Arc::new(Ledger::in_memory()));
    let scratch = tempfile::tempdir().unwrap();
    let pipeline = Pipeline { config: &config, providers: &providers, gateway: &gateway, workspace: TaskWorkspace::new(scratch.path()) };
    let summary = pipeline.run(&task()).unwrap();
    assert_eq!(summary.videos, 2, "fixture should select two videos");
    let scratch = tempfile::tempdir().unwrap();
    let pipeline = Pipeline { workspace: TaskWorkspace::new(scratch.path()), ..pipeline };
    assert_eq!(pipeline.run(&uncovered_task()).unwrap().videos, 0, "second task should stay uncovered");
    recorder.save(&chat_path).unwrap();
}
