//! Structured prompt model: per-region prompts, cross-region relationships
//! and overall look, plus flattening into diffusion-ready prompt strings.

mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use schema::{FIELD_NAMES, SPACE_KEYS};

/// Region reference. `"background"` is reserved for the background entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(String);

impl RegionId {
    pub const BACKGROUND: &'static str = "background";

    pub fn new(id: impl Into<String>) -> Self {
        RegionId(id.into())
    }

    pub fn background() -> Self {
        RegionId(Self::BACKGROUND.to_string())
    }

    pub fn is_background(&self) -> bool {
        self.0 == Self::BACKGROUND
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RegionId {
    fn from(s: &str) -> Self {
        RegionId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleObjectPrompt {
    pub region_id: RegionId,
    pub object_type: String,
    pub attributes: Vec<String>,
    pub state: Vec<String>,
}

impl SingleObjectPrompt {
    pub fn new(region_id: impl Into<RegionId>, object_type: &str) -> Self {
        SingleObjectPrompt {
            region_id: region_id.into(),
            object_type: object_type.to_string(),
            attributes: Vec::new(),
            state: Vec::new(),
        }
    }

    pub fn with_attributes(mut self, attrs: &[&str]) -> Self {
        self.attributes = attrs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_state(mut self, state: &[&str]) -> Self {
        self.state = state.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn is_background(&self) -> bool {
        self.region_id.is_background()
    }
}

impl From<RegionId> for SingleObjectPrompt {
    fn from(region_id: RegionId) -> Self {
        SingleObjectPrompt {
            region_id,
            object_type: String::new(),
            attributes: Vec::new(),
            state: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossObjectPrompt {
    pub subject_id: RegionId,
    pub object_id: RegionId,
    pub direction: String,
    /// Usually shaped "subjectA relation objectB".
    pub relationship: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverallPrompt {
    pub lighting: Option<String>,
    pub camera: Option<String>,
    pub style: Option<String>,
}

impl OverallPrompt {
    fn phrases(&self) -> impl Iterator<Item = &str> {
        [&self.lighting, &self.camera, &self.style]
            .into_iter()
            .filter_map(|p| p.as_deref())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticSpace {
    pub singles: Vec<SingleObjectPrompt>,
    pub crosses: Vec<CrossObjectPrompt>,
    pub overall: OverallPrompt,
}

impl SemanticSpace {
    /// Unfilled space with one entry per region (pre-filled with any type the
    /// user already gave) plus the background entry.
    pub fn skeleton<'a>(regions: impl IntoIterator<Item = (&'a RegionId, Option<&'a str>)>) -> Self {
        let mut singles: Vec<SingleObjectPrompt> = regions
            .into_iter()
            .map(|(id, user_type)| SingleObjectPrompt {
                object_type: user_type.unwrap_or_default().trim().to_string(),
                ..SingleObjectPrompt::from(id.clone())
            })
            .collect();
        singles.push(SingleObjectPrompt::from(RegionId::background()));
        SemanticSpace {
            singles,
            crosses: Vec::new(),
            overall: OverallPrompt::default(),
        }
    }

    pub fn single(&self, id: &RegionId) -> Option<&SingleObjectPrompt> {
        self.singles.iter().find(|s| &s.region_id == id)
    }

    pub fn background(&self) -> Option<&SingleObjectPrompt> {
        self.singles.iter().find(|s| s.is_background())
    }

    /// Non-background entries in stored order.
    pub fn objects(&self) -> impl Iterator<Item = &SingleObjectPrompt> {
        self.singles.iter().filter(|s| !s.is_background())
    }

    pub fn to_json(&self) -> String {
        schema::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        schema::from_json(text)
    }

    pub fn to_value(&self) -> serde_json::Value {
        schema::to_value(self)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        schema::from_value(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingField,
    MissingRegion,
    UnknownRegion,
    DuplicateRegion,
    MissingBackground,
    DuplicateBackground,
    BackgroundState,
    SelfRelation,
    DanglingReference,
    HedgeWord,
}

/// One problem found in a semantic space, naming the region and field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub region: Option<RegionId>,
    pub field: String,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, region: Option<&RegionId>, field: &str, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            region: region.cloned(),
            field: field.to_string(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.region {
            Some(r) => write!(f, "region {r}, field {}: {}", self.field, self.detail),
            None => write!(f, "field {}: {}", self.field, self.detail),
        }
    }
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Structural check against the set of sketch regions (background is
/// implicit). Returns an empty list when the space is usable.
pub fn validate(space: &SemanticSpace, regions: &BTreeSet<RegionId>) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();

    let backgrounds = space.singles.iter().filter(|s| s.is_background()).count();
    match backgrounds {
        0 => out.push(Violation::new(
            MissingBackground,
            Some(&RegionId::background()),
            "type",
            "no background entry",
        )),
        1 => {}
        n => out.push(Violation::new(
            DuplicateBackground,
            Some(&RegionId::background()),
            "type",
            format!("{n} background entries"),
        )),
    }

    let mut seen: BTreeMap<&RegionId, usize> = BTreeMap::new();
    for s in &space.singles {
        *seen.entry(&s.region_id).or_default() += 1;
        if !s.is_background() && !regions.contains(&s.region_id) {
            out.push(Violation::new(
                UnknownRegion,
                Some(&s.region_id),
                "type",
                "entry for a region that is not in the sketch",
            ));
        }
        if is_blank(&s.object_type) {
            out.push(Violation::new(MissingField, Some(&s.region_id), "type", "type is empty"));
        }
        if s.is_background() && s.state.iter().any(|p| !is_blank(p)) {
            out.push(Violation::new(
                BackgroundState,
                Some(&s.region_id),
                "state",
                "background only has type and attribute",
            ));
        }
    }
    for (id, n) in &seen {
        if *n > 1 && !id.is_background() {
            out.push(Violation::new(
                DuplicateRegion,
                Some(id),
                "type",
                format!("{n} entries for one region"),
            ));
        }
    }
    for id in regions {
        if !seen.contains_key(id) {
            out.push(Violation::new(MissingRegion, Some(id), "type", "region has no entry"));
        }
    }

    let known = |id: &RegionId| id.is_background() || regions.contains(id);
    for c in &space.crosses {
        if c.subject_id == c.object_id {
            out.push(Violation::new(
                SelfRelation,
                Some(&c.subject_id),
                "relationship",
                "subject and object are the same region",
            ));
        }
        for (id, field) in [(&c.subject_id, "subject"), (&c.object_id, "object")] {
            if !known(id) || space.single(id).is_none() {
                out.push(Violation::new(
                    DanglingReference,
                    Some(id),
                    field,
                    "relationship references an unknown region",
                ));
            }
        }
        if is_blank(&c.relationship) {
            out.push(Violation::new(
                MissingField,
                Some(&c.subject_id),
                "relationship",
                format!("relationship to {} is empty", c.object_id),
            ));
        }
    }
    out
}

/// Fields a completion was asked to fill but left empty.
pub fn completeness_violations(space: &SemanticSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    let blank_list = |l: &[String]| l.iter().all(|p| is_blank(p));
    for s in &space.singles {
        if blank_list(&s.attributes) {
            out.push(Violation::new(
                ViolationKind::MissingField,
                Some(&s.region_id),
                "attribute",
                "attribute is empty",
            ));
        }
        if !s.is_background() && blank_list(&s.state) {
            out.push(Violation::new(
                ViolationKind::MissingField,
                Some(&s.region_id),
                "state",
                "state is empty",
            ));
        }
    }
    for c in &space.crosses {
        if is_blank(&c.direction) {
            out.push(Violation::new(
                ViolationKind::MissingField,
                Some(&c.subject_id),
                "direction",
                format!("direction relative to {} is empty", c.object_id),
            ));
        }
    }
    out
}

pub const HEDGE_WORDS: [&str; 2] = ["or", "possibly"];

fn hedge_word(value: &str) -> Option<&'static str> {
    value
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|w| HEDGE_WORDS.iter().find(|h| w.eq_ignore_ascii_case(h)).copied())
}

/// Filled fields containing ambiguous wording such as "or" / "possibly".
pub fn hedge_violations(space: &SemanticSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |region: Option<&RegionId>, field: &str, value: &str| {
        if let Some(word) = hedge_word(value) {
            out.push(Violation::new(
                ViolationKind::HedgeWord,
                region,
                field,
                format!("ambiguous word {word:?} in {value:?}"),
            ));
        }
    };
    for s in &space.singles {
        let r = Some(&s.region_id);
        check(r, "type", &s.object_type);
        s.attributes.iter().for_each(|p| check(r, "attribute", p));
        s.state.iter().for_each(|p| check(r, "state", p));
    }
    for c in &space.crosses {
        check(Some(&c.subject_id), "direction", &c.direction);
        check(Some(&c.subject_id), "relationship", &c.relationship);
    }
    let o = &space.overall;
    for (field, value) in [("lighting", &o.lighting), ("camera", &o.camera), ("style", &o.style)] {
        if let Some(v) = value {
            check(None, field, v);
        }
    }
    out
}

/// Comma-joined prompt: type, attributes, state, then overall phrases.
pub fn flatten_region(s: &SingleObjectPrompt, overall: &OverallPrompt) -> Result<String> {
    if !s.is_background() && is_blank(&s.object_type) {
        return Err(Error::Validation(vec![Violation::new(
            ViolationKind::MissingField,
            Some(&s.region_id),
            "type",
            "type is empty",
        )]));
    }
    let segments: Vec<&str> = std::iter::once(s.object_type.as_str())
        .chain(s.attributes.iter().map(String::as_str))
        .chain(s.state.iter().map(String::as_str))
        .chain(overall.phrases())
        .map(|p| p.trim().trim_matches(',').trim())
        .filter(|p| !p.is_empty())
        .collect();
    Ok(segments.join(", "))
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn strip_suffix_ci<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let split = s.len().checked_sub(suffix.len())?;
    let tail = s.get(split..)?;
    tail.eq_ignore_ascii_case(suffix).then(|| &s[..split])
}

/// Prompt for one relationship, containing both object types and the
/// relation phrase, with the direction appended when present.
pub fn relationship_prompt(c: &CrossObjectPrompt, space: &SemanticSpace) -> Result<String> {
    let lookup = |id: &RegionId, field: &str| {
        space.single(id).ok_or_else(|| {
            Error::Validation(vec![Violation::new(
                ViolationKind::DanglingReference,
                Some(id),
                field,
                "relationship references an unknown region",
            )])
        })
    };
    let subject = lookup(&c.subject_id, "subject")?;
    let object = lookup(&c.object_id, "object")?;
    let name = |s: &SingleObjectPrompt| {
        let t = s.object_type.trim();
        if t.is_empty() {
            s.region_id.as_str().to_string()
        } else {
            t.to_string()
        }
    };
    let (subj, obj) = (name(subject), name(object));
    let relation = c.relationship.trim();

    let mut prompt = if contains_ci(relation, &subj) && contains_ci(relation, &obj) {
        relation.to_string()
    } else {
        let mut middle = relation;
        if let Some(rest) = strip_prefix_ci(middle, &subj) {
            middle = rest.trim_start();
        }
        if let Some(rest) = strip_suffix_ci(middle, &obj) {
            middle = rest.trim_end();
        }
        [subj.as_str(), middle, obj.as_str()]
            .into_iter()
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let direction = c.direction.trim();
    if !direction.is_empty() {
        prompt.push_str(", ");
        prompt.push_str(direction);
    }
    Ok(prompt)
}

/// Overlay `inferred` onto `user`: user-filled fields win, empty ones take the
/// inferred value.
pub fn merge_user_fields(user: &SemanticSpace, inferred: &SemanticSpace) -> SemanticSpace {
    let pick_str = |u: &str, i: &str| if is_blank(u) { i.to_string() } else { u.to_string() };
    let pick_list = |u: &Vec<String>, i: &Vec<String>| {
        if u.iter().all(|p| is_blank(p)) {
            i.clone()
        } else {
            u.clone()
        }
    };

    let mut singles: Vec<SingleObjectPrompt> = user
        .singles
        .iter()
        .map(|u| match inferred.single(&u.region_id) {
            Some(i) => SingleObjectPrompt {
                region_id: u.region_id.clone(),
                object_type: pick_str(&u.object_type, &i.object_type),
                attributes: pick_list(&u.attributes, &i.attributes),
                state: pick_list(&u.state, &i.state),
            },
            None => u.clone(),
        })
        .collect();
    for i in &inferred.singles {
        if user.single(&i.region_id).is_none() {
            singles.push(i.clone());
        }
    }

    let mut crosses: Vec<CrossObjectPrompt> = user
        .crosses
        .iter()
        .map(|u| {
            match inferred
                .crosses
                .iter()
                .find(|i| i.subject_id == u.subject_id && i.object_id == u.object_id)
            {
                Some(i) => CrossObjectPrompt {
                    direction: pick_str(&u.direction, &i.direction),
                    relationship: pick_str(&u.relationship, &i.relationship),
                    ..u.clone()
                },
                None => u.clone(),
            }
        })
        .collect();
    for i in &inferred.crosses {
        if !user
            .crosses
            .iter()
            .any(|u| u.subject_id == i.subject_id && u.object_id == i.object_id)
        {
            crosses.push(i.clone());
        }
    }

    let pick_opt = |u: &Option<String>, i: &Option<String>| match u {
        Some(v) if !is_blank(v) => Some(v.clone()),
        _ => i.clone(),
    };
    SemanticSpace {
        singles,
        crosses,
        overall: OverallPrompt {
            lighting: pick_opt(&user.overall.lighting, &inferred.overall.lighting),
            camera: pick_opt(&user.overall.camera, &inferred.overall.camera),
            style: pick_opt(&user.overall.style, &inferred.overall.style),
        },
    }
}

#[cfg(test)]
mod tests;
