//! Canonical document form of a [`SemanticSpace`].
//!
//! The same field names are used in the format example handed to the chat
//! model, so the renderer and the parser share one schema:
//!
//! ```json
//! {
//!   "single_object": {
//!     "girl": {"type": "girl", "attribute": "long hair, red dress", "state": "standing"},
//!     "background": {"type": "park", "attribute": "sunny"}
//!   },
//!   "cross_object": [
//!     {"subject": "girl", "object": "cat", "direction": "facing to the cat", "relationship": "girl touching cat"}
//!   ],
//!   "overall": {"lighting": "", "camera": "", "style": ""}
//! }
//! ```
//!
//! List-valued fields are written as comma-separated phrases; the parser also
//! accepts JSON arrays.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CrossObjectPrompt, OverallPrompt, RegionId, SemanticSpace, SingleObjectPrompt};
use crate::error::{Error, Result};

pub const SPACE_KEYS: [&str; 3] = ["single_object", "cross_object", "overall"];

pub const FIELD_NAMES: [&str; 8] = [
    "type",
    "attribute",
    "state",
    "direction",
    "relationship",
    "lighting",
    "camera",
    "style",
];

#[derive(Debug, Serialize, Deserialize)]
struct SpaceDoc {
    single_object: IndexMap<String, SingleDoc>,
    #[serde(default)]
    cross_object: Vec<CrossDoc>,
    #[serde(default)]
    overall: OverallDoc,
}

#[derive(Debug, Serialize, Deserialize)]
struct SingleDoc {
    #[serde(rename = "type", default)]
    object_type: String,
    #[serde(default)]
    attribute: Phrases,
    #[serde(default, skip_serializing_if = "Phrases::is_empty")]
    state: Phrases,
}

#[derive(Debug, Serialize, Deserialize)]
struct CrossDoc {
    subject: String,
    object: String,
    #[serde(default)]
    direction: String,
    #[serde(default)]
    relationship: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct OverallDoc {
    #[serde(default)]
    lighting: String,
    #[serde(default)]
    camera: String,
    #[serde(default)]
    style: String,
}

/// Phrase list that reads either `"a, b"` or `["a", "b"]` and writes the
/// comma-separated form.
#[derive(Debug, Default)]
struct Phrases(Vec<String>);

impl Phrases {
    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn split_phrases(text: &str) -> Vec<String> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

impl Serialize for Phrases {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.join(", "))
    }
}

impl<'de> Deserialize<'de> for Phrases {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<String>),
            Null(()),
        }
        Ok(Phrases(match Raw::deserialize(d)? {
            Raw::Text(t) => split_phrases(&t),
            Raw::List(items) => items.iter().flat_map(|t| split_phrases(t)).collect(),
            Raw::Null(()) => Vec::new(),
        }))
    }
}

fn opt(text: String) -> Option<String> {
    let t = text.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn to_doc(space: &SemanticSpace) -> SpaceDoc {
    SpaceDoc {
        single_object: space
            .singles
            .iter()
            .map(|s| {
                (
                    s.region_id.as_str().to_string(),
                    SingleDoc {
                        object_type: s.object_type.clone(),
                        attribute: Phrases(s.attributes.clone()),
                        state: Phrases(s.state.clone()),
                    },
                )
            })
            .collect(),
        cross_object: space
            .crosses
            .iter()
            .map(|c| CrossDoc {
                subject: c.subject_id.as_str().to_string(),
                object: c.object_id.as_str().to_string(),
                direction: c.direction.clone(),
                relationship: c.relationship.clone(),
            })
            .collect(),
        overall: OverallDoc {
            lighting: space.overall.lighting.clone().unwrap_or_default(),
            camera: space.overall.camera.clone().unwrap_or_default(),
            style: space.overall.style.clone().unwrap_or_default(),
        },
    }
}

fn from_doc(doc: SpaceDoc) -> SemanticSpace {
    SemanticSpace {
        singles: doc
            .single_object
            .into_iter()
            .map(|(id, s)| SingleObjectPrompt {
                region_id: RegionId::new(id.trim()),
                object_type: s.object_type.trim().to_string(),
                attributes: s.attribute.0,
                state: s.state.0,
            })
            .collect(),
        crosses: doc
            .cross_object
            .into_iter()
            .map(|c| CrossObjectPrompt {
                subject_id: RegionId::new(c.subject.trim()),
                object_id: RegionId::new(c.object.trim()),
                direction: c.direction.trim().to_string(),
                relationship: c.relationship.trim().to_string(),
            })
            .collect(),
        overall: OverallPrompt {
            lighting: opt(doc.overall.lighting),
            camera: opt(doc.overall.camera),
            style: opt(doc.overall.style),
        },
    }
}

pub(super) fn to_value(space: &SemanticSpace) -> Value {
    serde_json::to_value(to_doc(space)).expect("space document serializes")
}

pub(super) fn to_json(space: &SemanticSpace) -> String {
    serde_json::to_string_pretty(&to_doc(space)).expect("space document serializes")
}

pub(super) fn from_value(value: Value) -> Result<SemanticSpace> {
    let doc: SpaceDoc = serde_json::from_value(value)
        .map_err(|e| Error::Format(format!("semantic space document: {e}")))?;
    Ok(from_doc(doc))
}

pub(super) fn from_json(text: &str) -> Result<SemanticSpace> {
    let doc: SpaceDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("semantic space document: {e}"),
    })?;
    Ok(from_doc(doc))
}
