//! Cross-attention weighting plans.
//!
//! A plan is a list of `(latent mask, token span, lambda)` entries. Each
//! region's own prompt tokens are amplified inside the region. Each related
//! pair gets its relationship tokens amplified over the joint mask, and each
//! side's own tokens suppressed over the part of the joint mask that belongs
//! to the other side.
//!
//! Entries are realized as additive biases on pre-softmax logits;
//! [`apply_plan`] is the reference applier over a toy dense map.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blob::{decode_b64, encode_b64};
use crate::error::{Error, Result};
use crate::geometry::{joint_mask, mask_difference, RasterMask};
use crate::semantic::{RegionId, SemanticSpace, Violation, ViolationKind};

pub const DEFAULT_LAMBDA_REGION: f64 = 2.5;
pub const DEFAULT_LAMBDA_RELATION: f64 = 1.5;

/// Token range `[start, end)` inside one flattened prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub prompt_id: u32,
    pub start: u32,
    pub end: u32,
}

impl TokenSpan {
    pub fn new(prompt_id: u32, start: u32, end: u32) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty token span [{start}, {end})")));
        }
        Ok(TokenSpan {
            prompt_id,
            start,
            end,
        })
    }

    /// Span over a whole prompt of `len` tokens.
    pub fn whole(prompt_id: u32, len: u32) -> Result<Self> {
        Self::new(prompt_id, 0, len)
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Word-level token count: whitespace-separated words, with each comma
/// counted as its own token. Backends may re-tokenize; spans cover whole
/// prompts so only the upper bound matters.
pub fn prompt_token_count(text: &str) -> u32 {
    text.replace(',', " , ").split_whitespace().count() as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub mask: RasterMask,
    pub span: TokenSpan,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeightPlan {
    pub latent_width: u32,
    pub latent_height: u32,
    pub entries: Vec<WeightEntry>,
}

/// A relationship between regions `subject` and `object` (indices into the
/// region list given to [`build_plan`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationSpan {
    pub subject: usize,
    pub object: usize,
    pub span: TokenSpan,
}

fn relation_violation(detail: String) -> Error {
    Error::Validation(vec![Violation {
        kind: ViolationKind::DanglingReference,
        region: None,
        field: "relationship".into(),
        detail,
    }])
}

pub fn build_plan(
    regions: &[(RasterMask, TokenSpan)],
    relations: &[RelationSpan],
    lambda_region: f64,
    lambda_rel: f64,
) -> Result<AttentionWeightPlan> {
    if !lambda_region.is_finite() || !lambda_rel.is_finite() {
        return Err(Error::invalid("lambda values must be finite"));
    }
    let Some((first, _)) = regions.first() else {
        return Err(Error::invalid("attention plan needs at least one region"));
    };
    let (w, h) = first.dims();
    for (mask, span) in regions {
        first.same_dims(mask)?;
        if span.is_empty() {
            return Err(Error::invalid("region token span is empty"));
        }
    }

    let mut entries = Vec::with_capacity(regions.len() + 3 * relations.len());
    for (i, (mask, span)) in regions.iter().enumerate() {
        if mask.is_empty() {
            return Err(Error::Validation(vec![Violation {
                kind: ViolationKind::MissingField,
                region: None,
                field: "mask".into(),
                detail: format!("region {i} has an empty latent mask"),
            }]));
        }
        entries.push(WeightEntry {
            mask: mask.clone(),
            span: *span,
            lambda: lambda_region,
        });
    }
    for rel in relations {
        let (i, j) = (rel.subject, rel.object);
        if i >= regions.len() || j >= regions.len() {
            return Err(relation_violation(format!(
                "relation ({i}, {j}) references a region outside 0..{}",
                regions.len()
            )));
        }
        if i == j {
            return Err(relation_violation(format!("relation ({i}, {i}) relates a region to itself")));
        }
        if rel.span.is_empty() {
            return Err(Error::invalid("relation token span is empty"));
        }
        let (mi, ci) = &regions[i];
        let (mj, cj) = &regions[j];
        let mij = joint_mask(mi, mj)?;
        let suppress_i = mask_difference(&mij, mi)?;
        let suppress_j = mask_difference(&mij, mj)?;
        entries.push(WeightEntry {
            mask: mij,
            span: rel.span,
            lambda: lambda_rel,
        });
        entries.push(WeightEntry {
            mask: suppress_i,
            span: *ci,
            lambda: -lambda_rel,
        });
        entries.push(WeightEntry {
            mask: suppress_j,
            span: *cj,
            lambda: -lambda_rel,
        });
    }
    Ok(AttentionWeightPlan {
        latent_width: w,
        latent_height: h,
        entries,
    })
}

/// Dense `pixels x tokens` logit grid. Columns are the concatenation of the
/// token sequences of several prompts; `prompt_offsets[id]` is the first
/// column of prompt `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub width: u32,
    pub height: u32,
    pub tokens: usize,
    pub prompt_offsets: Vec<usize>,
    pub values: Vec<f64>,
}

impl AttentionMap {
    /// Single-prompt map with every logit set to `fill`.
    pub fn filled(width: u32, height: u32, tokens: usize, fill: f64) -> Self {
        AttentionMap {
            width,
            height,
            tokens,
            prompt_offsets: vec![0],
            values: vec![fill; width as usize * height as usize * tokens],
        }
    }

    pub fn from_values(width: u32, height: u32, tokens: usize, prompt_offsets: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize * tokens {
            return Err(Error::invalid("attention value count does not match dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("attention values must be finite"));
        }
        if prompt_offsets.iter().any(|&o| o > tokens) {
            return Err(Error::invalid("prompt offset beyond token count"));
        }
        Ok(AttentionMap {
            width,
            height,
            tokens,
            prompt_offsets,
            values,
        })
    }

    #[inline]
    pub fn index(&self, pixel: usize, column: usize) -> usize {
        pixel * self.tokens + column
    }

    pub fn get(&self, x: u32, y: u32, column: usize) -> f64 {
        self.values[self.index(y as usize * self.width as usize + x as usize, column)]
    }
}

fn apply_entry(map: &mut AttentionMap, entry: &WeightEntry) -> Result<()> {
    let offset = *map
        .prompt_offsets
        .get(entry.span.prompt_id as usize)
        .ok_or_else(|| Error::invalid(format!("unknown prompt id {}", entry.span.prompt_id)))?;
    let (c0, c1) = (offset + entry.span.start as usize, offset + entry.span.end as usize);
    if c1 > map.tokens {
        return Err(Error::invalid(format!(
            "span columns [{c0}, {c1}) exceed {} tokens",
            map.tokens
        )));
    }
    for (pixel, _) in entry.mask.bits().iter().enumerate().filter(|(_, &b)| b) {
        let base = map.index(pixel, 0);
        for v in &mut map.values[base + c0..base + c1] {
            *v += entry.lambda;
        }
    }
    Ok(())
}

/// Add each entry's lambda to every (pixel, token) cell it covers. Cells no
/// entry covers are returned unchanged.
pub fn apply_plan(map: &AttentionMap, plan: &AttentionWeightPlan) -> Result<AttentionMap> {
    if (map.width, map.height) != (plan.latent_width, plan.latent_height) {
        return Err(Error::invalid(format!(
            "attention map is {}x{} but plan is {}x{}",
            map.width, map.height, plan.latent_width, plan.latent_height
        )));
    }
    let mut out = map.clone();
    for entry in &plan.entries {
        if entry.mask.dims() != (plan.latent_width, plan.latent_height) {
            return Err(Error::invalid("plan entry mask does not match latent grid"));
        }
        apply_entry(&mut out, entry)?;
    }
    Ok(out)
}

/// For every region, the object types of all other non-background regions.
pub fn build_negative_prompts(space: &SemanticSpace) -> IndexMap<RegionId, String> {
    space
        .singles
        .iter()
        .map(|s| {
            let others: Vec<&str> = space
                .objects()
                .filter(|o| o.region_id != s.region_id)
                .map(|o| o.object_type.trim())
                .filter(|t| !t.is_empty())
                .collect();
            (s.region_id.clone(), others.join(", "))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EntryWire {
    mask_png_b64: String,
    prompt_id: u32,
    start: u32,
    end: u32,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanWire {
    latent_w: u32,
    latent_h: u32,
    entries: Vec<EntryWire>,
}

impl Serialize for AttentionWeightPlan {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PlanWire {
            latent_w: self.latent_width,
            latent_h: self.latent_height,
            entries: self
                .entries
                .iter()
                .map(|e| EntryWire {
                    mask_png_b64: encode_b64(&e.mask.to_png()),
                    prompt_id: e.span.prompt_id,
                    start: e.span.start,
                    end: e.span.end,
                    lambda: e.lambda,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttentionWeightPlan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = PlanWire::deserialize(d)?;
        let entries = wire
            .entries
            .into_iter()
            .map(|e| {
                let png = decode_b64(&e.mask_png_b64).map_err(D::Error::custom)?;
                let mask = RasterMask::from_png(&png).map_err(D::Error::custom)?;
                if mask.dims() != (wire.latent_w, wire.latent_h) {
                    return Err(D::Error::custom("entry mask does not match latent grid"));
                }
                if !e.lambda.is_finite() {
                    return Err(D::Error::custom("lambda must be finite"));
                }
                Ok(WeightEntry {
                    mask,
                    span: TokenSpan::new(e.prompt_id, e.start, e.end).map_err(D::Error::custom)?,
                    lambda: e.lambda,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(AttentionWeightPlan {
            latent_width: wire.latent_w,
            latent_height: wire.latent_h,
            entries,
        })
    }
}

impl AttentionWeightPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("attention plan: {e}")))
    }

    /// Prompt ids referenced by any entry.
    pub fn prompt_ids(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.span.prompt_id).collect()
    }
}
