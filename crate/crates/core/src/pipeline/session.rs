use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::candidates::{candidate_seed, generate_candidates, Candidate, SampleFailure};
use super::classify::{classify, ObjectKind};
use super::request::{plan_for, run_generation, GenerationRequest, RegionRole, RequestRegion, RequestRelation, SampleResult};
use super::Engine;
use crate::attention::build_negative_prompts;
use crate::blob::Blob;
use crate::config::AnchorConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    apply_transform_about, canny_with, compose_anchor, extract_regions, AffineTransform, AnchorLayer, EdgeMap,
    GrayImage, Legend, RasterMask, Region, RegionSketch,
};
use crate::lexicon::SampleConfig;
use crate::recommend::{infer_space, render_template, Completion, LexSamples};
use crate::seed::derive_seed;
use crate::semantic::{
    completeness_violations, flatten_region, hedge_violations, merge_user_fields, relationship_prompt, validate,
    OverallPrompt, RegionId, SemanticSpace, SingleObjectPrompt, Violation, ViolationKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchState {
    pub png: Blob,
    pub legend: Legend,
    pub width: u32,
    pub height: u32,
    /// Ordered by palette index.
    pub regions: Vec<Region>,
}

/// The latest candidate round of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub region_id: RegionId,
    pub version: u64,
    pub prompt: String,
    pub candidates: Vec<Candidate>,
    pub failures: Vec<SampleFailure>,
    pub scored: usize,
}

/// A selected candidate placed on the canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub region_id: RegionId,
    /// Candidate round the selection was made from.
    pub version: u64,
    pub candidate_index: usize,
    pub chosen: Candidate,
    /// Extracted mask and its edges at sketch resolution, untransformed.
    pub base_mask: RasterMask,
    pub base_edges: EdgeMap,
    pub transform: AffineTransform,
    /// Palette index of the region's color.
    pub z: u32,
    pub active_mask: RasterMask,
    /// Part of the transformed object lies off canvas.
    pub clipped: bool,
}

impl ObjectPlacement {
    fn pivot(&self) -> (f64, f64) {
        self.base_mask
            .bbox()
            .map(|b| b.center())
            .unwrap_or((self.base_mask.width() as f64 / 2.0, self.base_mask.height() as f64 / 2.0))
    }

    pub fn active_edges(&self) -> Result<EdgeMap> {
        Ok(EdgeMap(apply_transform_about(self.base_edges.as_mask(), &self.transform, self.pivot())?))
    }

    pub fn is_empty(&self) -> bool {
        self.active_mask.is_empty()
    }
}

/// One final generation: the exact request and its per-sample outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub request_digest: String,
    pub request: GenerationRequest,
    pub results: Vec<SampleResult>,
}

/// Outcome of recommendation: the raw completion and the merged space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOutcome {
    pub completion: Completion,
    pub space: SemanticSpace,
}

/// Workflow state of one sketch. Every operation either fully applies or
/// leaves the session untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub seed: u64,
    pub sketch: Option<SketchState>,
    pub space: Option<SemanticSpace>,
    pub kinds: BTreeMap<RegionId, ObjectKind>,
    pub candidates: BTreeMap<RegionId, CandidateSet>,
    /// Latest candidate round per region; never decreases.
    pub versions: BTreeMap<RegionId, u64>,
    pub placements: BTreeMap<RegionId, ObjectPlacement>,
    pub runs: Vec<GenerationRun>,
}

fn conflict(msg: impl Into<String>) -> Error {
    Error::Conflict(msg.into())
}

/// Canny edges of a candidate's object, at candidate resolution. The area
/// outside the object is filled with whichever of black or white contrasts
/// more with it, and edges are kept near the object only.
pub fn candidate_edges(c: &Candidate, cfg: &AnchorConfig) -> Result<EdgeMap> {
    let gray = GrayImage::from_png(c.image.as_bytes())?;
    let mask = &c.extracted_mask;
    if mask.dims() != (gray.width(), gray.height()) {
        return Err(Error::invalid("candidate mask and image sizes differ"));
    }
    if mask.is_empty() {
        return EdgeMap::empty(mask.width(), mask.height());
    }
    let (sum, n) = gray
        .values()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    let fill = if sum / n as f64 > 0.5 { 0.0 } else { 1.0 };
    let edges = canny_with(&gray.masked(mask, fill)?, &cfg.canny)?;
    Ok(EdgeMap(edges.as_mask().intersection(&mask.dilate(cfg.mask_dilation))?))
}

impl Session {
    pub fn new(seed: u64) -> Self {
        Session {
            seed,
            ..Session::default()
        }
    }

    fn sketch_state(&self) -> Result<&SketchState> {
        self.sketch.as_ref().ok_or_else(|| conflict("session has no sketch yet"))
    }

    pub fn regions(&self) -> &[Region] {
        self.sketch.as_ref().map_or(&[], |s| s.regions.as_slice())
    }

    pub fn region(&self, id: &RegionId) -> Result<&Region> {
        self.regions()
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::NotFound(format!("region {id}")))
    }

    fn region_ids(&self) -> BTreeSet<RegionId> {
        self.regions().iter().map(|r| r.id.clone()).collect()
    }

    /// Object type from the space, falling back to the legend.
    pub fn object_type(&self, id: &RegionId) -> Option<String> {
        let from_space = self
            .space
            .as_ref()
            .and_then(|s| s.single(id))
            .map(|s| s.object_type.trim().to_string())
            .filter(|t| !t.is_empty());
        from_space.or_else(|| {
            self.regions()
                .iter()
                .find(|r| &r.id == id)
                .and_then(|r| r.user_type.clone())
                .filter(|t| !t.trim().is_empty())
        })
    }

    fn classify_all(&self, engine: &Engine) -> Result<BTreeMap<RegionId, ObjectKind>> {
        let mut kinds = BTreeMap::new();
        for r in self.regions() {
            if let Some(t) = self.object_type(&r.id) {
                kinds.insert(r.id.clone(), classify(&t, &engine.categories, engine.backends.embedding.as_ref())?);
            }
        }
        Ok(kinds)
    }

    /// Replace the sketch. Candidates and placements are discarded; run
    /// history and version counters are kept.
    pub fn set_sketch(&mut self, engine: &Engine, png: &[u8], legend: Legend) -> Result<&[Region]> {
        let sketch = RegionSketch::from_png(png, legend.clone())?;
        let (width, height) = sketch.dims();
        let factor = engine.config.generation.latent_factor;
        if width % 8 != 0 || height % 8 != 0 || width % factor != 0 || height % factor != 0 {
            return Err(Error::invalid(format!(
                "sketch size {width}x{height} must be a multiple of 8 and of the latent factor {factor}"
            )));
        }
        let regions = extract_regions(&sketch)?;
        let space = SemanticSpace::skeleton(regions.iter().map(|r| (&r.id, r.user_type.as_deref())));
        let mut next = Session {
            sketch: Some(SketchState {
                png: Blob::new(png.to_vec()),
                legend,
                width,
                height,
                regions,
            }),
            space: Some(space),
            kinds: BTreeMap::new(),
            candidates: BTreeMap::new(),
            placements: BTreeMap::new(),
            ..self.clone()
        };
        next.kinds = next.classify_all(engine)?;
        *self = next;
        Ok(self.regions())
    }

    /// Fill the semantic space from the sketch with the chat backend. Fields
    /// the user already filled are kept.
    pub fn infer(&mut self, engine: &Engine) -> Result<InferOutcome> {
        let sketch = self.sketch_state()?;
        let current = self.space.clone().unwrap_or_default();
        let types: Vec<Option<String>> = sketch.regions.iter().map(|r| self.object_type(&r.id)).collect();
        let skeleton =
            SemanticSpace::skeleton(sketch.regions.iter().zip(&types).map(|(r, t)| (&r.id, t.as_deref())));
        let known: Vec<&str> = types.iter().flatten().map(String::as_str).collect();
        let rc = &engine.config.recommend;
        let sample_cfg = SampleConfig {
            k: rc.k,
            rng_seed: derive_seed(self.seed, "lexicon", 0),
            mode: rc.sample_mode,
        };
        let samples = LexSamples::sample(&engine.lexicon, &known, &sample_cfg);
        let req = render_template(&engine.template, &skeleton, &sketch.legend, sketch.png.as_bytes(), &samples)?;
        let completion = infer_space(&req, engine.backends.chat.as_ref(), &rc.chat_params())?;
        let space = merge_user_fields(&current, &completion.parsed);

        let mut next = Session {
            space: Some(space.clone()),
            ..self.clone()
        };
        next.kinds = next.classify_all(engine)?;
        *self = next;
        Ok(InferOutcome { completion, space })
    }

    /// Replace the semantic space after structural validation. Returns
    /// non-fatal findings (empty fields, hedge words).
    pub fn set_space(&mut self, engine: &Engine, space: SemanticSpace) -> Result<Vec<Violation>> {
        self.sketch_state()?;
        let violations = validate(&space, &self.region_ids());
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let mut warnings = completeness_violations(&space);
        warnings.extend(hedge_violations(&space));
        let mut next = Session {
            space: Some(space),
            ..self.clone()
        };
        next.kinds = next.classify_all(engine)?;
        *self = next;
        Ok(warnings)
    }

    fn single_prompt(&self, id: &RegionId) -> Result<String> {
        let single = self
            .space
            .as_ref()
            .and_then(|s| s.single(id))
            .cloned()
            .unwrap_or_else(|| SingleObjectPrompt::from(id.clone()));
        let single = SingleObjectPrompt {
            object_type: self.object_type(id).unwrap_or_default(),
            ..single
        };
        flatten_region(&single, &OverallPrompt::default())
    }

    /// Start a new candidate round for a thing region.
    pub fn generate_candidates(&mut self, engine: &Engine, id: &RegionId) -> Result<&CandidateSet> {
        let region = self.region(id)?;
        match self.kinds.get(id) {
            Some(ObjectKind::Thing) => {}
            Some(ObjectKind::Stuff) => {
                return Err(conflict(format!("region {id} is stuff; candidates are generated for things only")))
            }
            None => return Err(conflict(format!("region {id} has no object type yet"))),
        }
        let prompt = self.single_prompt(id)?;
        let version = self.versions.get(id).copied().unwrap_or(0) + 1;
        let cfg = &engine.config.candidates;
        let seeds: Vec<u64> = (0..cfg.batch)
            .map(|i| candidate_seed(self.seed, id.as_str(), version, i))
            .collect();
        let batch = generate_candidates(&region.mask, &prompt, &engine.backends, cfg, &seeds)?;
        self.versions.insert(id.clone(), version);
        self.candidates.insert(
            id.clone(),
            CandidateSet {
                region_id: id.clone(),
                version,
                prompt,
                candidates: batch.ranked,
                failures: batch.failures,
                scored: batch.scored,
            },
        );
        Ok(&self.candidates[id])
    }

    /// Choose candidate `index` of the region's latest round. A `version`
    /// other than the latest is rejected as stale.
    pub fn select_candidate(
        &mut self,
        engine: &Engine,
        id: &RegionId,
        index: usize,
        version: Option<u64>,
    ) -> Result<&ObjectPlacement> {
        let sketch = self.sketch_state()?;
        let region = self.region(id)?;
        let set = self
            .candidates
            .get(id)
            .ok_or_else(|| conflict(format!("region {id} has no candidates")))?;
        if let Some(v) = version {
            if v != set.version {
                return Err(conflict(format!(
                    "candidate list version {v} is stale; region {id} is at version {}",
                    set.version
                )));
            }
        }
        let chosen = set.candidates.get(index).cloned().ok_or_else(|| {
            Error::invalid(format!("candidate index {index} out of range 0..{}", set.candidates.len()))
        })?;
        let canvas = (sketch.width, sketch.height);
        let base_mask = chosen.extracted_mask.resize_nearest(canvas.0, canvas.1)?;
        let base_edges = EdgeMap(
            candidate_edges(&chosen, &engine.config.anchor)?
                .as_mask()
                .resize_nearest(canvas.0, canvas.1)?,
        );
        let placement = ObjectPlacement {
            region_id: id.clone(),
            version: set.version,
            candidate_index: index,
            chosen,
            active_mask: base_mask.clone(),
            base_mask,
            base_edges,
            transform: AffineTransform::IDENTITY,
            z: region.color.index() as u32,
            clipped: false,
        };
        self.placements.insert(id.clone(), placement);
        Ok(&self.placements[id])
    }

    /// Compose `t` onto the placement and recompute its mask. Moving an
    /// object partly or wholly off canvas is allowed and flagged.
    pub fn adjust_placement(&mut self, id: &RegionId, t: &AffineTransform) -> Result<&ObjectPlacement> {
        t.validate()?;
        let p = self
            .placements
            .get(id)
            .ok_or_else(|| conflict(format!("region {id} has no placement")))?;
        let transform = p.transform.then(t)?;
        let pivot = p.pivot();
        let active_mask = apply_transform_about(&p.base_mask, &transform, pivot)?;
        let clipped = match p.base_mask.bbox() {
            None => false,
            Some(b) => {
                let (w, h) = p.base_mask.dims();
                let s = transform.scale;
                let x0 = (b.min_x as f64 - pivot.0) * s + pivot.0 + transform.dx as f64;
                let x1 = (b.max_x as f64 + 1.0 - pivot.0) * s + pivot.0 + transform.dx as f64;
                let y0 = (b.min_y as f64 - pivot.1) * s + pivot.1 + transform.dy as f64;
                let y1 = (b.max_y as f64 + 1.0 - pivot.1) * s + pivot.1 + transform.dy as f64;
                x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64
            }
        };
        let next = ObjectPlacement {
            transform,
            active_mask,
            clipped,
            ..p.clone()
        };
        self.placements.insert(id.clone(), next);
        Ok(&self.placements[id])
    }

    /// Build the final request from the current space and placements.
    pub fn assemble_request(&self, engine: &Engine, samples: u32, seed: Option<u64>) -> Result<GenerationRequest> {
        let sketch = self.sketch_state()?;
        let space = self
            .space
            .as_ref()
            .ok_or_else(|| conflict("session has no semantic space"))?;
        if samples == 0 {
            return Err(Error::invalid("samples must be at least 1"));
        }
        let mut violations = validate(space, &self.region_ids());
        for r in &sketch.regions {
            if self.kinds.get(&r.id) == Some(&ObjectKind::Thing) && !self.placements.contains_key(&r.id) {
                violations.push(Violation {
                    kind: ViolationKind::MissingField,
                    region: Some(r.id.clone()),
                    field: "placement".into(),
                    detail: "thing region has no selected candidate".into(),
                });
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }

        let (w, h) = (sketch.width, sketch.height);
        let mut layers = Vec::new();
        let mut roles = Vec::new();
        for r in &sketch.regions {
            let palette = r.color.index() as u32;
            match self.placements.get(&r.id) {
                Some(p) if self.kinds.get(&r.id) == Some(&ObjectKind::Thing) => {
                    // Things always sit above stuff; among each group the
                    // palette order decides.
                    layers.push(AnchorLayer {
                        edges: p.active_edges()?,
                        mask: p.active_mask.clone(),
                        z: 1000 + p.z,
                    });
                    roles.push(RegionRole::Thing);
                }
                _ => {
                    layers.push(AnchorLayer {
                        edges: EdgeMap::empty(w, h)?,
                        mask: r.mask.clone(),
                        z: palette,
                    });
                    roles.push(RegionRole::Stuff);
                }
            }
        }
        let (anchor, masks) = if layers.is_empty() {
            (EdgeMap::empty(w, h)?, Vec::new())
        } else {
            compose_anchor(&layers)?
        };
        let mut covered = RasterMask::new(w, h)?;
        for m in &masks {
            covered.union_with(m)?;
        }

        let negatives = build_negative_prompts(space);
        let mut regions = Vec::new();
        let mut omitted = Vec::new();
        let entries = sketch
            .regions
            .iter()
            .zip(masks)
            .zip(roles)
            .map(|((r, m), role)| (r.id.clone(), m, role))
            .chain(std::iter::once((RegionId::background(), covered.complement(), RegionRole::Background)));
        for (id, mask, role) in entries {
            if mask.is_empty() {
                omitted.push(id);
                continue;
            }
            let single = space.single(&id).ok_or_else(|| Error::NotFound(format!("space entry for {id}")))?;
            regions.push(RequestRegion {
                prompt: flatten_region(single, &space.overall)?,
                negative_prompt: negatives.get(&id).cloned().unwrap_or_default(),
                region_id: id,
                role,
                mask,
            });
        }
        let present: BTreeSet<&RegionId> = regions.iter().map(|r| &r.region_id).collect();
        let relations = space
            .crosses
            .iter()
            .filter(|c| present.contains(&c.subject_id) && present.contains(&c.object_id))
            .map(|c| {
                Ok(RequestRelation {
                    subject: c.subject_id.clone(),
                    object: c.object_id.clone(),
                    prompt: relationship_prompt(c, space)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = &engine.config.generation;
        let plan = plan_for(&regions, &relations, g.latent_factor, g.lambda_region, g.lambda_relation, (w, h))?;
        let prompt = regions.iter().map(|r| r.prompt.as_str()).collect::<Vec<_>>().join(", ");
        Ok(GenerationRequest {
            width: w,
            height: h,
            steps: g.steps,
            seed: seed.unwrap_or(self.seed),
            samples,
            prompt,
            regions,
            relations,
            omitted,
            anchor,
            plan,
        })
    }

    /// Assemble, generate and record a run.
    pub fn generate(&mut self, engine: &Engine, samples: u32, seed: Option<u64>) -> Result<&GenerationRun> {
        let request = self.assemble_request(engine, samples, seed)?;
        let results = run_generation(&request, engine.backends.diffusion.as_ref());
        self.runs.push(GenerationRun {
            request_digest: request.digest(),
            request,
            results,
        });
        Ok(self.runs.last().expect("just pushed"))
    }
}
