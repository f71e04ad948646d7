//! Rendered prompts compared byte for byte against `tests/golden/`.
//! Regenerate with `GUIDE_BLESS=1 cargo test -p guide-core --test golden`.

use std::path::{Path, PathBuf};

use guide_core::idm::{build_idm_prompt, AnnotationRequest};
use guide_core::inject::{render_mode_a_grounding, render_mode_a_worker, render_mode_b_system, PLACEHOLDERS};
use guide_core::knowledge::{GroundingElement, GroundingKnowledge, KnowledgeBundle, KnowledgeEntry, PlanningKnowledge};
use guide_core::perception::{parse_element_graph, FrameRef, ImageRef};
use guide_core::retrieval::Topic;
use guide_core::subtitle::SubtitleContext;

const BASE_GUIDELINES: &str = "You are a GUI agent operating a Linux desktop. Use the action API below.\n\nagent.click(element_description, button=1)\nagent.type(text, enter=False)\n";
const TOOLS: &str = "computer(action: str, coordinate: [int, int] | None, text: str | None)";
const ELEMENT: &str = "the Brightness slider in the Brightness-Contrast dialog";

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("GUIDE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    match std::fs::read_to_string(&path) {
        Ok(expected) if expected == actual => Ok(()),
        Ok(_) => Err(format!("{name}: differs from golden file")),
        Err(e) => Err(format!("{name}: {e}")),
    }
}

fn element(name: &str, where_: &str, what: &str) -> GroundingElement {
    GroundingElement { name: name.into(), appearance_position: where_.into(), predicted_function: what.into() }
}

fn entry(n: usize, planning: bool, grounding: bool) -> KnowledgeEntry {
    let (id, topic, relevance) = match n {
        0 => ("gimp-bc-01", "Brightening an underexposed photo in GIMP with the Brightness-Contrast dialog from the Colors menu and exporting the result", 0.92),
        _ => ("gimp-levels-02", "Correcting a dark picture in GIMP using the Levels tool under the Colors menu by moving the input sliders", 0.71),
    };
    let planning = planning.then(|| {
        PlanningKnowledge::new(
            format!("Open the image, then use the Colors menu to reach the {} dialog. Adjust the sliders while the preview is on, confirm with OK and export through File, Export As.", if n == 0 { "Brightness-Contrast" } else { "Levels" }),
            vec!["Keep the preview enabled while adjusting.".into(), "Export As writes a new file; Save keeps the native format.".into()],
        )
    });
    let grounding = grounding.then(|| {
        let mut elements = vec![
            element("Colors menu", "Text label in the top menu bar, between Layer and Tools.", "Opens the color adjustment tools."),
            element("Brightness slider", "Horizontal slider at the top of the dialog, above Contrast.", "Raises or lowers overall brightness."),
            element("Contrast slider", "Horizontal slider directly below Brightness.", "Changes the spread between light and dark tones."),
            element("Preview checkbox", "Small checkbox in the lower left of the dialog.", "Shows the adjustment live on the canvas."),
            element("OK button", "Rightmost button at the bottom of the dialog.", "Applies the adjustment."),
            element("File menu", "First entry of the top menu bar.", "Holds open, save and export commands."),
            element("Export As item", "Entry in the lower half of the File menu.", "Opens the export dialog."),
            element("File name field", "Text field at the top of the export dialog.", "Sets the output name and format."),
            element("Export button", "Button in the lower right of the export dialog.", "Writes the file."),
        ];
        if n == 1 {
            elements.truncate(4);
        }
        GroundingKnowledge { elements }
    });
    KnowledgeEntry { video_id: id.into(), topic: Topic::normalized(topic), relevance, planning, grounding }
}

/// (case name, bundle) for 0, 1 and 2 videos under each channel mix.
fn cases() -> Vec<(String, KnowledgeBundle)> {
    let mut out = vec![("v0".to_string(), KnowledgeBundle::new("task", vec![]))];
    for videos in [1, 2] {
        for (mix, p, g) in [("full", true, true), ("planning", true, false), ("grounding", false, true)] {
            let entries = (0..videos).map(|n| entry(n, p, g)).collect();
            out.push((format!("v{videos}_{mix}"), KnowledgeBundle::new("task", entries)));
        }
    }
    out
}

#[test]
fn injection_matches_golden_files() {
    let mut failures = Vec::new();
    let mut rendered = 0;
    for (name, text) in [("guidelines.txt", BASE_GUIDELINES), ("tools.txt", TOOLS), ("element.txt", ELEMENT)] {
        if let Err(e) = check(&format!("inputs/{name}"), text) {
            failures.push(e);
        }
    }
    for (case, bundle) in cases() {
        if let Err(e) = check(&format!("bundles/{case}.json"), &(serde_json::to_string_pretty(&bundle).unwrap() + "\n")) {
            failures.push(e);
        }
        let bundle = bundle.with_grounding_k(7);
        let outputs = [
            ("a_worker", render_mode_a_worker(&bundle, BASE_GUIDELINES).text),
            ("a_grounding", render_mode_a_grounding(&bundle, ELEMENT).unwrap().text),
            ("b_system", render_mode_b_system(&bundle, TOOLS).text),
        ];
        for (mode, text) in outputs {
            for token in PLACEHOLDERS {
                if text.contains(token) {
                    failures.push(format!("{case}/{mode}: placeholder {token} survived"));
                }
            }
            if let Err(e) = check(&format!("inject/{case}/{mode}.txt"), &text) {
                failures.push(e);
            }
            rendered += 1;
        }
    }
    assert_eq!(rendered, 21);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn mode_b_variants_follow_channels() {
    let variant = |case: &str| {
        let bundle = cases().into_iter().find(|(c, _)| c == case).unwrap().1;
        render_mode_b_system(&bundle, TOOLS).text
    };
    assert!(variant("v2_full").contains("## Video Planning Reference") && variant("v2_full").contains("## Video Grounding Reference"));
    assert!(!variant("v2_planning").contains("## Video Grounding Reference"));
    assert!(!variant("v2_grounding").contains("## Video Planning Reference"));
    let none = variant("v0");
    assert!(!none.contains("Video Planning") && !none.contains("Video Grounding"));
}

#[test]
fn idm_prompt_matches_golden_file() {
    let frame = |i: usize| FrameRef {
        frame_index: i,
        timestamp_ms: i as u64 * 500,
        image: ImageRef { path: PathBuf::from(format!("frames/{:06}.png", i + 1)), width: 1920, height: 1080 },
    };
    let before = parse_element_graph(
        br#"[{"id":"1","bbox":[0.21,0.0,0.25,0.03],"type":"menu","text":"Colors","interactivity":true}]"#,
        &frame(4),
    )
    .unwrap();
    let after = parse_element_graph(
        br#"[{"id":"1","bbox":[0.21,0.0,0.25,0.03],"type":"menu","text":"Colors","interactivity":true},{"id":"2","bbox":[0.21,0.03,0.33,0.06],"type":"menu_item","text":"Brightness-Contrast...","interactivity":true}]"#,
        &frame(6),
    )
    .unwrap();
    let req = AnnotationRequest {
        pair_index: 1,
        s_t: frame(4),
        e_t: before,
        s_t1: frame(6),
        e_t1: after,
        topic: Topic::normalized("Brightening an underexposed photo in GIMP with the Brightness-Contrast dialog from the Colors menu"),
        context: SubtitleContext {
            preceding: "Open the dark photo from the File menu.".into(),
            current: "Now go to the Colors menu and choose Brightness-Contrast.".into(),
            following: "Drag the brightness slider to the right.".into(),
        },
    };
    let prompt = build_idm_prompt(&req, "gpt-5.1", 1.0);
    let json = serde_json::to_string_pretty(&prompt).unwrap() + "\n";
    check("idm_prompt.json", &json).unwrap();
}
