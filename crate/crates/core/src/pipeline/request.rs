use serde::{Deserialize, Serialize};

use super::candidates::fan_out;
use crate::attention::{build_plan, prompt_token_count, AttentionWeightPlan, RelationSpan, TokenSpan};
use crate::backends::{DiffusionBackend, DiffusionJob, RegionPrompt};
use crate::blob::Blob;
use crate::error::Result;
use crate::geometry::{EdgeMap, RasterMask};
use crate::seed::{derive_seed, sha256_hex};
use crate::semantic::RegionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionRole {
    Thing,
    Stuff,
    Background,
}

/// One masked prompt of the final request. Prompt id equals the position in
/// [`GenerationRequest::regions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRegion {
    pub region_id: RegionId,
    pub role: RegionRole,
    pub mask: RasterMask,
    pub prompt: String,
    pub negative_prompt: String,
}

/// A relationship prompt; its prompt id follows the region prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRelation {
    pub subject: RegionId,
    pub object: RegionId,
    pub prompt: String,
}

/// Everything the final generation needs, in a backend-neutral form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub seed: u64,
    pub samples: u32,
    /// Region prompts joined, for backends without regional prompting.
    pub prompt: String,
    pub regions: Vec<RequestRegion>,
    pub relations: Vec<RequestRelation>,
    /// Regions whose mask ended up empty (occluded or moved off canvas).
    pub omitted: Vec<RegionId>,
    pub anchor: EdgeMap,
    pub plan: AttentionWeightPlan,
}

impl GenerationRequest {
    /// Prompt texts indexed by prompt id.
    pub fn prompts(&self) -> Vec<String> {
        self.regions
            .iter()
            .map(|r| r.prompt.clone())
            .chain(self.relations.iter().map(|r| r.prompt.clone()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn sample_seed(&self, index: u32) -> u64 {
        derive_seed(self.seed, "sample", index as u64)
    }

    pub fn job(&self, seed: u64) -> DiffusionJob {
        DiffusionJob {
            anchor: Some(Blob::new(self.anchor.as_mask().to_png())),
            weight_plan: Some(self.plan.clone()),
            prompts: self.prompts(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionPrompt {
                    mask: r.mask.clone(),
                    prompt: r.prompt.clone(),
                    negative_prompt: r.negative_prompt.clone(),
                })
                .collect(),
            ..DiffusionJob::new(self.prompt.clone(), self.width, self.height, self.steps, seed)
        }
    }
}

/// Attention plan over the request regions at latent resolution. Regions
/// that vanish at that resolution get no entries, nor do relations touching
/// them.
pub fn plan_for(
    regions: &[RequestRegion],
    relations: &[RequestRelation],
    latent_factor: u32,
    lambda_region: f64,
    lambda_rel: f64,
    canvas: (u32, u32),
) -> Result<AttentionWeightPlan> {
    let mut latent: Vec<(RasterMask, TokenSpan)> = Vec::new();
    let mut slot = vec![None; regions.len()];
    for (i, r) in regions.iter().enumerate() {
        let m = r.mask.downsample_majority(latent_factor)?;
        if !m.is_empty() {
            slot[i] = Some(latent.len());
            latent.push((m, TokenSpan::whole(i as u32, prompt_token_count(&r.prompt).max(1))?));
        }
    }
    if latent.is_empty() {
        return Ok(AttentionWeightPlan {
            latent_width: canvas.0.div_ceil(latent_factor),
            latent_height: canvas.1.div_ceil(latent_factor),
            entries: Vec::new(),
        });
    }
    let index_of = |id: &RegionId| regions.iter().position(|r| &r.region_id == id).and_then(|i| slot[i]);
    let mut spans = Vec::new();
    for (k, rel) in relations.iter().enumerate() {
        if let (Some(subject), Some(object)) = (index_of(&rel.subject), index_of(&rel.object)) {
            let id = (regions.len() + k) as u32;
            spans.push(RelationSpan {
                subject,
                object,
                span: TokenSpan::whole(id, prompt_token_count(&rel.prompt).max(1))?,
            });
        }
    }
    build_plan(&latent, &spans, lambda_region, lambda_rel)
}

/// Result of one requested sample; exactly one of `image` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: u32,
    pub seed: u64,
    pub image: Option<Blob>,
    pub error: Option<String>,
}

/// Call the backend once per sample with derived seeds. Failures are
/// recorded per sample rather than aborting the run.
pub fn run_generation(req: &GenerationRequest, diffusion: &dyn DiffusionBackend) -> Vec<SampleResult> {
    fan_out(req.samples as usize, |i| {
        let seed = req.sample_seed(i as u32);
        match diffusion.generate(&req.job(seed)) {
            Ok(png) => SampleResult {
                index: i as u32,
                seed,
                image: Some(Blob::new(png)),
                error: None,
            },
            Err(e) => SampleResult {
                index: i as u32,
                seed,
                image: None,
                error: Some(e.to_string()),
            },
        }
    })
}
