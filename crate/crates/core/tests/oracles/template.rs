use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde_json::Value;
use sketchplan_core::backends::{Backends, ChatBackend, ChatRequest};
use sketchplan_core::config::EngineConfig;
use sketchplan_core::geometry::{render_sketch_png, Legend, PaletteColor, RasterMask};
use sketchplan_core::pipeline::{Engine, Session};
use sketchplan_core::recommend::parse_completion;
use sketchplan_core::semantic::{RegionId, SemanticSpace};
use sketchplan_core::Result;

pub const GOLDEN: &str = include_str!("../fixtures/golden_space.json");

/// The prompt sentences, typed out independently of the library's template.
pub const SENTENCES: &[&str] = &[
    "Here is a sketch of an image.",
    ", while the rest of the white space is the background.",
    "I need you to infer details of the image based on the given sketch.",
    "The details should include the possible background likely to be present with the ",
    ", the attribute of each object (like wearing, texture, color etc.), the state (including action, posture, etc.) of each object, the direction of each object and the relationships between objects.",
    "You should first analyze the mask carefully, considering the size, location, and relative position of each object mask.",
    "Ensure that specific actions are analyzed based on the mask, and infer each aspect with a reasoning process before providing the final output.",
    "The final output format should be: ",
    ", and you should refer to the example: ",
    "You are going to complete the \"\" in each item, you need to complete them in multiple short phrases based on your above reasoning.",
    "The state and relationship should be as detailed as possible while ensuring they align with the mask, formatted as: objectA action/spatial relation objectB, with both objectA and objectB included.",
    "You should properly refer to some examples of attributes of object ",
    " and relationships ",
    "Do not include words like 'or', 'possibly' in your final output, there should no ambiguity in your output.",
    "Make sure all aspects of given mask is filled.",
];

/// Answers every request with the golden space and keeps the prompts.
#[derive(Default)]
struct GoldenChat {
    texts: Mutex<Vec<String>>,
}

impl ChatBackend for GoldenChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.texts.lock().unwrap().push(request.text.clone());
        Ok(format!("The girl is on the left and the cat on the right.\n```json\n{GOLDEN}```\n"))
    }
}

fn scene() -> (Vec<u8>, Legend) {
    let c = |i| PaletteColor::from_index(i).unwrap();
    let girl = RasterMask::rect(128, 128, 10, 50, 50, 120).unwrap();
    let cat = RasterMask::rect(128, 128, 80, 90, 120, 120).unwrap();
    let sky = RasterMask::rect(128, 128, 0, 0, 128, 30).unwrap();
    let png = render_sketch_png(128, 128, &[(c(0), &girl), (c(1), &sky), (c(3), &cat)]).unwrap();
    let legend = Legend::new()
        .with(c(0), "girl", Some("girl"))
        .unwrap()
        .with(c(1), "sky", Some("sky"))
        .unwrap()
        .with(c(3), "cat", None)
        .unwrap();
    (png, legend)
}

pub fn rendered_prompt_keeps_every_sentence() {
    let chat = Arc::new(GoldenChat::default());
    let engine = Engine::with_backends(
        EngineConfig::default(),
        Backends {
            chat: chat.clone(),
            ..Backends::mock()
        },
    )
    .unwrap();
    let (png, legend) = scene();
    let mut session = Session::new(3);
    session.set_sketch(&engine, &png, legend).unwrap();
    session.infer(&engine).unwrap();
    let texts = chat.texts.lock().unwrap();
    assert_eq!(texts.len(), 1);
    let prompt = &texts[0];
    for sentence in SENTENCES {
        assert!(prompt.contains(sentence), "missing {sentence:?}");
    }
    assert!(prompt.starts_with("Here is a sketch of an image."));
    assert!(!prompt.contains("{input_color_mask}"));
    assert!(!prompt.contains("{format_example}"));
    assert!(!prompt.contains("{few_shot}"));
    assert!(!prompt.contains("{attributes}"));
    assert!(!prompt.contains("{relationships}"));
}

pub fn golden_fixture_round_trips() {
    let regions: BTreeSet<RegionId> = ["girl", "sky", "cat"].into_iter().map(RegionId::from).collect();
    let raw = format!("Some reasoning {{first}}.\n```json\n{GOLDEN}```\nDone.");
    let parsed = parse_completion(&raw, &regions).unwrap();
    assert!(parsed.violations.is_empty(), "{:?}", parsed.violations);
    let expected: Value = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(parsed.space.to_value(), expected);
    assert_eq!(SemanticSpace::from_json(&parsed.space.to_json()).unwrap(), parsed.space);
}
