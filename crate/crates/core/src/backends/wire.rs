//! JSON bodies for the backend HTTP endpoints. Images travel base64-encoded.
//!
//! | endpoint                     | request                    | response                 |
//! |------------------------------|----------------------------|--------------------------|
//! | `POST /v1/diffusion/generate`| [`DiffusionRequest`]       | [`DiffusionResponse`]    |
//! | `POST /v1/segment/extract`   | [`SegmentRequest`]         | [`SegmentResponse`]      |
//! | `POST /v1/embed`             | [`EmbedRequest`]           | [`EmbedResponse`]        |
//! | `POST /v1/chat`              | [`ChatWireRequest`]        | [`ChatWireResponse`]     |
//!
//! `POST /v1/embed` with `image_png_b64` set returns `similarity` (image-text
//! score) instead of `embedding`.

use serde::{Deserialize, Serialize};

use super::{ChatRequest, DiffusionJob, RegionPrompt};
use crate::attention::AttentionWeightPlan;
use crate::blob::{decode_b64, encode_b64, Blob};
use crate::error::{Error, Result};
use crate::geometry::RasterMask;

pub const DIFFUSION_PATH: &str = "/v1/diffusion/generate";
pub const SEGMENT_PATH: &str = "/v1/segment/extract";
pub const EMBED_PATH: &str = "/v1/embed";
pub const CHAT_PATH: &str = "/v1/chat";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionWire {
    pub mask_png_b64: String,
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
}

/// txt2img-style field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionRequest {
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_png_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_plan: Option<AttentionWeightPlan>,
    /// Prompts addressed by `weight_plan` entries, indexed by prompt id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionResponse {
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_png_b64: String,
    pub hint_mask_png_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_png_b64: String,
    #[serde(default)]
    pub empty: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_png_b64: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmbedResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatWireRequest {
    pub text: String,
    /// Base64 PNG of the sketch.
    pub image: String,
    pub max_tokens: u32,
    pub temperature: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatWireResponse {
    pub text: String,
}

pub fn decode_image(b64: &str) -> Result<Vec<u8>> {
    decode_b64(b64).map_err(|e| Error::Format(format!("base64 image: {e}")))
}

pub fn decode_mask(b64: &str) -> Result<RasterMask> {
    RasterMask::from_png(&decode_image(b64)?)
}

impl From<&DiffusionJob> for DiffusionRequest {
    fn from(job: &DiffusionJob) -> Self {
        DiffusionRequest {
            prompt: job.prompt.clone(),
            negative_prompt: job.negative_prompt.clone(),
            width: job.width,
            height: job.height,
            steps: job.steps,
            seed: job.seed,
            anchor_png_b64: job.anchor.as_ref().map(|a| a.to_base64()),
            weight_plan: job.weight_plan.clone(),
            prompts: job.prompts.clone(),
            regions: job
                .regions
                .iter()
                .map(|r| RegionWire {
                    mask_png_b64: encode_b64(&r.mask.to_png()),
                    prompt: r.prompt.clone(),
                    negative_prompt: r.negative_prompt.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<DiffusionRequest> for DiffusionJob {
    type Error = Error;

    fn try_from(req: DiffusionRequest) -> Result<Self> {
        let regions = req
            .regions
            .into_iter()
            .map(|r| {
                Ok(RegionPrompt {
                    mask: decode_mask(&r.mask_png_b64)?,
                    prompt: r.prompt,
                    negative_prompt: r.negative_prompt,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DiffusionJob {
            prompt: req.prompt,
            negative_prompt: req.negative_prompt,
            width: req.width,
            height: req.height,
            steps: req.steps,
            seed: req.seed,
            anchor: req.anchor_png_b64.as_deref().map(decode_image).transpose()?.map(Blob::new),
            weight_plan: req.weight_plan,
            prompts: req.prompts,
            regions,
        })
    }
}

impl From<&ChatRequest> for ChatWireRequest {
    fn from(req: &ChatRequest) -> Self {
        ChatWireRequest {
            text: req.text.clone(),
            image: req.image_png.to_base64(),
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        }
    }
}

impl TryFrom<ChatWireRequest> for ChatRequest {
    type Error = Error;

    fn try_from(req: ChatWireRequest) -> Result<Self> {
        Ok(ChatRequest {
            text: req.text,
            image_png: Blob::new(decode_image(&req.image)?),
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        })
    }
}
