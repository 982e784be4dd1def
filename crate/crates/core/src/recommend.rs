//! Sketch-aware prompt recommendation: render the multimodal inference
//! prompt from the sketch legend, an empty semantic-space skeleton, lexicon
//! samples and few-shot examples, send it to the chat backend and parse the
//! answer back into a [`SemanticSpace`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::backends::{ChatBackend, ChatRequest};
use crate::blob::Blob;
use crate::error::{Error, Result};
use crate::geometry::Legend;
use crate::lexicon::{sample_attributes, sample_relationships, Lexicon, SampleConfig};
use crate::seed::derive_seed;
use crate::semantic::{
    completeness_violations, hedge_violations, validate, RegionId, SemanticSpace, Violation, ViolationKind,
};

pub const PH_INPUT_COLOR_MASK: &str = "{input_color_mask}";
pub const PH_FORMAT_EXAMPLE: &str = "{format_example}";
pub const PH_FEW_SHOT: &str = "{few_shot}";
pub const PH_ATTRIBUTES: &str = "{attributes}";
pub const PH_RELATIONSHIPS: &str = "{relationships}";

pub const PLACEHOLDERS: [&str; 5] = [
    PH_INPUT_COLOR_MASK,
    PH_FORMAT_EXAMPLE,
    PH_FEW_SHOT,
    PH_ATTRIBUTES,
    PH_RELATIONSHIPS,
];

/// Text immediately preceding the format example in the default template.
pub const FORMAT_MARKER: &str = "The final output format should be: ";

/// Inference instruction. `{input_color_mask}` is used twice; every other
/// placeholder once.
pub const DEFAULT_TEMPLATE: &str = "Here is a sketch of an image. \n\
{input_color_mask}, while the rest of the white space is the background. \n\
I need you to infer details of the image based on the given sketch.\n\
The details should include the possible background likely to be present with the {input_color_mask}, the attribute of each object (like wearing, texture, color etc.), the state (including action, posture, etc.) of each object, the direction of each object and the relationships between objects.\n\
\n\
You should first analyze the mask carefully, considering the size, location, and relative position of each object mask. Ensure that specific actions are analyzed based on the mask, and infer each aspect with a reasoning process before providing the final output.\n\
The final output format should be: {format_example}, and you should refer to the example: {few_shot}. You are going to complete the \"\" in each item, you need to complete them in multiple short phrases based on your above reasoning.\n\
\n\
The state and relationship should be as detailed as possible while ensuring they align with the mask, formatted as: objectA action/spatial relation objectB, with both objectA and objectB included.\n\
You should properly refer to some examples of attributes of object {attributes} and relationships {relationships}.\n\
Do not include words like 'or', 'possibly' in your final output, there should no ambiguity in your output.\n\
Make sure all aspects of given mask is filled.";

/// Appended to the original prompt when the first answer could not be used.
pub const REPAIR_INSTRUCTION: &str = "Your previous answer could not be used";

const FEW_SHOT_TWO: &str = include_str!("../assets/few_shot/two_objects.json");
const FEW_SHOT_FOUR: &str = include_str!("../assets/few_shot/four_objects.json");

/// A worked example: the verbalized legend and the expected answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub description: String,
    #[serde(with = "space_doc")]
    pub answer: SemanticSpace,
}

mod space_doc {
    use super::*;

    pub fn serialize<S: serde::Serializer>(space: &SemanticSpace, s: S) -> std::result::Result<S::Ok, S::Error> {
        space.to_value().serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SemanticSpace, D::Error> {
        SemanticSpace::from_value(Value::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl FewShotExample {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("few-shot example: {e}")))
    }

    /// The two stand-in examples shipped with the crate.
    pub fn bundled() -> Vec<FewShotExample> {
        [FEW_SHOT_TWO, FEW_SHOT_FOUR]
            .into_iter()
            .map(|t| Self::from_json(t).expect("bundled few-shot examples parse"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    body: String,
    few_shot: Vec<FewShotExample>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE, FewShotExample::bundled()).expect("default template is valid")
    }
}

/// `{name}` tokens made of lowercase letters and underscores.
fn placeholder_tokens(body: &str) -> Vec<(usize, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
                .count();
            if len > 0 && bytes.get(i + 1 + len) == Some(&b'}') {
                out.push((i, &body[i..i + len + 2]));
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>, few_shot: Vec<FewShotExample>) -> Result<Self> {
        let body = body.into();
        let tokens = placeholder_tokens(&body);
        if let Some((_, t)) = tokens.iter().find(|(_, t)| !PLACEHOLDERS.contains(t)) {
            return Err(Error::Template(format!("unknown placeholder {t}")));
        }
        for ph in PLACEHOLDERS {
            let n = tokens.iter().filter(|(_, t)| *t == ph).count();
            let ok = if ph == PH_INPUT_COLOR_MASK { n >= 1 } else { n == 1 };
            if !ok {
                return Err(Error::Template(format!("placeholder {ph} appears {n} times")));
            }
        }
        if few_shot.is_empty() {
            return Err(Error::Template("at least one few-shot example is required".into()));
        }
        Ok(PromptTemplate { body, few_shot })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn few_shot(&self) -> &[FewShotExample] {
        &self.few_shot
    }
}

/// Lexicon phrases offered to the model as reference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexSamples {
    /// `(object type, phrases)` in region order.
    pub attributes: Vec<(String, Vec<String>)>,
    pub relationships: Vec<String>,
}

impl LexSamples {
    /// Sample up to `cfg.k` attributes per type and `cfg.k` relationships
    /// over all types. Each type gets its own derived seed.
    pub fn sample(lex: &Lexicon, types: &[&str], cfg: &SampleConfig) -> Self {
        let mut seen = BTreeSet::new();
        let attributes = types
            .iter()
            .filter(|t| seen.insert(t.to_lowercase()))
            .map(|t| {
                let sub = SampleConfig {
                    rng_seed: derive_seed(cfg.rng_seed, &format!("attr:{}", t.to_lowercase()), 0),
                    ..*cfg
                };
                (t.to_string(), sample_attributes(lex, &t.to_lowercase(), &sub))
            })
            .filter(|(_, phrases)| !phrases.is_empty())
            .collect();
        let lowered: Vec<String> = types.iter().map(|t| t.to_lowercase()).collect();
        let names: Vec<&str> = lowered.iter().map(String::as_str).collect();
        let rel_cfg = SampleConfig {
            rng_seed: derive_seed(cfg.rng_seed, "rel", 0),
            ..*cfg
        };
        LexSamples {
            attributes,
            relationships: sample_relationships(lex, &names, &rel_cfg),
        }
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.attributes
            .iter()
            .flat_map(|(_, p)| p.iter())
            .chain(&self.relationships)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendLine {
    pub color: String,
    pub color_name: String,
    pub region_id: RegionId,
    #[serde(rename = "type")]
    pub object_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub rendered_text: String,
    pub sketch_image: Blob,
    pub region_legend: Vec<LegendLine>,
}

impl InferenceRequest {
    pub fn regions(&self) -> BTreeSet<RegionId> {
        self.region_legend.iter().map(|l| l.region_id.clone()).collect()
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// One sentence per region: `The red region ("id") is a girl`.
pub fn describe_legend(lines: &[LegendLine]) -> String {
    lines
        .iter()
        .map(|l| {
            let noun = match l.object_type.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
                Some(t) => format!("{} {t}", article(t)),
                None => "an unspecified object".to_string(),
            };
            format!("The {} region (\"{}\") is {noun}", l.color_name, l.region_id)
        })
        .collect::<Vec<_>>()
        .join(". ")
}

/// Empty-valued schema instance: one entry per region (user types kept), a
/// relationship slot for every ordered-by-legend pair of objects, and the
/// overall fields.
pub fn format_example(skeleton: &SemanticSpace) -> Value {
    let mut singles = Map::new();
    for s in &skeleton.singles {
        let entry = if s.is_background() {
            json!({"type": s.object_type, "attribute": ""})
        } else {
            json!({"type": s.object_type, "attribute": "", "state": ""})
        };
        singles.insert(s.region_id.to_string(), entry);
    }
    let objects: Vec<&RegionId> = skeleton.objects().map(|s| &s.region_id).collect();
    let mut crosses = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            crosses.push(json!({"subject": a.as_str(), "object": b.as_str(), "direction": "", "relationship": ""}));
        }
    }
    json!({
        "single_object": singles,
        "cross_object": crosses,
        "overall": {"lighting": "", "camera": "", "style": ""},
    })
}

fn render_few_shot(examples: &[FewShotExample]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            format!(
                "Example {}: {} Output: {}",
                i + 1,
                ex.description,
                serde_json::to_string(&ex.answer.to_value()).expect("json value serializes")
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_attributes(samples: &LexSamples) -> String {
    let flat: Vec<String> = samples
        .attributes
        .iter()
        .flat_map(|(t, phrases)| phrases.iter().map(move |p| format!("{t}: {p}")))
        .collect();
    serde_json::to_string(&flat).expect("strings serialize")
}

fn legend_violation(kind: ViolationKind, region: Option<&RegionId>, detail: String) -> Violation {
    Violation {
        kind,
        region: region.cloned(),
        field: "type".into(),
        detail,
    }
}

/// Build the inference request. The skeleton must hold exactly one entry per
/// legend region plus the background.
pub fn render_template(
    template: &PromptTemplate,
    skeleton: &SemanticSpace,
    legend: &Legend,
    sketch_png: &[u8],
    samples: &LexSamples,
) -> Result<InferenceRequest> {
    if legend.is_empty() {
        return Err(Error::Validation(vec![legend_violation(
            ViolationKind::MissingRegion,
            None,
            "legend is empty".into(),
        )]));
    }
    let regions: BTreeSet<RegionId> = legend.iter().map(|(_, e)| e.region_id.clone()).collect();
    let structural: Vec<Violation> = validate(skeleton, &regions)
        .into_iter()
        .filter(|v| {
            !matches!(v.kind, ViolationKind::MissingField | ViolationKind::BackgroundState)
        })
        .collect();
    if !structural.is_empty() {
        return Err(Error::Validation(structural));
    }

    let lines: Vec<LegendLine> = legend
        .iter()
        .map(|(color, entry)| {
            let id = entry.region_id.clone();
            let skeleton_type = skeleton
                .single(&id)
                .map(|s| s.object_type.trim().to_string())
                .filter(|t| !t.is_empty());
            LegendLine {
                color: color.hex(),
                color_name: color.name().to_string(),
                object_type: skeleton_type.or_else(|| entry.user_type.clone()),
                region_id: id,
            }
        })
        .collect();

    let format = serde_json::to_string(&format_example(skeleton)).expect("json value serializes");
    let fill = |ph: &str| -> String {
        match ph {
            PH_INPUT_COLOR_MASK => describe_legend(&lines),
            PH_FORMAT_EXAMPLE => format.clone(),
            PH_FEW_SHOT => render_few_shot(&template.few_shot),
            PH_ATTRIBUTES => render_attributes(samples),
            PH_RELATIONSHIPS => serde_json::to_string(&samples.relationships).expect("strings serialize"),
            _ => unreachable!("template placeholders are checked on construction"),
        }
    };

    // Single pass so braces inside substituted JSON are never re-expanded.
    let body = &template.body;
    let mut text = String::with_capacity(body.len() * 4);
    let mut last = 0;
    for (at, token) in placeholder_tokens(body) {
        text.push_str(&body[last..at]);
        text.push_str(&fill(token));
        last = at + token.len();
    }
    text.push_str(&body[last..]);

    if let Some(ph) = PLACEHOLDERS.iter().find(|ph| text.contains(*ph)) {
        return Err(Error::Template(format!("rendered prompt still contains {ph}")));
    }
    Ok(InferenceRequest {
        rendered_text: text,
        sketch_image: Blob::new(sketch_png.to_vec()),
        region_legend: lines,
    })
}

/// Byte ranges of balanced top-level `{...}` blocks, skipping braces inside
/// JSON strings. An unmatched `{` is ignored.
pub fn find_json_objects(text: &str) -> Vec<&str> {
    fn close(bytes: &[u8], start: usize) -> Option<usize> {
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            }
        }
        None
    }
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = close(bytes, i) {
                out.push(&text[i..=end]);
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// A completion turned into a space, with non-fatal findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub space: SemanticSpace,
    /// Hedge words and unfilled fields; the offending values are kept.
    pub violations: Vec<Violation>,
}

/// Map relationship endpoints given as a type name back to region ids when
/// the type names exactly one region.
fn resolve_endpoints(space: &mut SemanticSpace) {
    let ids: BTreeSet<RegionId> = space.singles.iter().map(|s| s.region_id.clone()).collect();
    let by_type = |name: &RegionId, singles: &[crate::semantic::SingleObjectPrompt]| {
        let hits: Vec<&RegionId> = singles
            .iter()
            .filter(|s| s.object_type.eq_ignore_ascii_case(name.as_str()))
            .map(|s| &s.region_id)
            .collect();
        (hits.len() == 1).then(|| hits[0].clone())
    };
    let singles = space.singles.clone();
    for c in &mut space.crosses {
        for id in [&mut c.subject_id, &mut c.object_id] {
            if !ids.contains(id) {
                if let Some(found) = by_type(id, &singles) {
                    *id = found;
                }
            }
        }
    }
}

/// Extract the semantic-space block from free-form model output. The last
/// JSON object carrying a `single_object` key wins.
pub fn parse_completion(raw: &str, regions: &BTreeSet<RegionId>) -> Result<ParsedCompletion> {
    let value = find_json_objects(raw)
        .into_iter()
        .filter_map(|block| serde_json::from_str::<Value>(block).ok())
        .filter(|v| v.get("single_object").is_some_and(Value::is_object))
        .last()
        .ok_or_else(|| Error::Completion {
            message: "no semantic-space block found in completion".into(),
            raw_text: raw.to_string(),
        })?;
    let mut space = SemanticSpace::from_value(value).map_err(|e| Error::Completion {
        message: e.to_string(),
        raw_text: raw.to_string(),
    })?;
    resolve_endpoints(&mut space);
    let structural = validate(&space, regions);
    if !structural.is_empty() {
        return Err(Error::Validation(structural));
    }
    let mut violations = hedge_violations(&space);
    violations.extend(completeness_violations(&space));
    Ok(ParsedCompletion { space, violations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub max_tokens: u32,
    pub temperature: f32,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            max_tokens: 2048,
            temperature: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub raw_text: String,
    pub parsed: SemanticSpace,
    pub violations: Vec<Violation>,
    /// 1, or 2 when the repair retry was needed.
    pub attempts: u32,
}

fn repair_prompt(original: &str, reason: &str) -> String {
    format!(
        "{original}\n\n{REPAIR_INSTRUCTION} ({reason}). Reply again with the final output as a single JSON \
         object in exactly the format given above, with one entry per region and every \"\" filled."
    )
}

/// Ask the chat backend to fill the space. A completion that cannot be
/// parsed (or names the wrong regions) is retried once with a repair
/// instruction; backend errors are returned as-is.
pub fn infer_space(req: &InferenceRequest, backend: &dyn ChatBackend, params: &ChatParams) -> Result<Completion> {
    let regions = req.regions();
    let ask = |text: String| {
        backend.complete(&ChatRequest {
            text,
            image_png: req.sketch_image.clone(),
            max_tokens: params.max_tokens,
            temperature: params.temperature,
        })
    };
    let done = |raw_text: String, parsed: ParsedCompletion, attempts: u32| Completion {
        raw_text,
        parsed: parsed.space,
        violations: parsed.violations,
        attempts,
    };

    let raw = ask(req.rendered_text.clone())?;
    let reason = match parse_completion(&raw, &regions) {
        Ok(parsed) => return Ok(done(raw, parsed, 1)),
        Err(e) => failure_reason(&e),
    };
    let raw = ask(repair_prompt(&req.rendered_text, &reason))?;
    match parse_completion(&raw, &regions) {
        Ok(parsed) => Ok(done(raw, parsed, 2)),
        Err(e) => Err(Error::Completion {
            message: format!("completion unusable after retry: {}", failure_reason(&e)),
            raw_text: raw,
        }),
    }
}

fn failure_reason(e: &Error) -> String {
    match e {
        Error::Completion { message, .. } => message.clone(),
        other => other.to_string(),
    }
}
