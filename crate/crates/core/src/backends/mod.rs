//! Clients for the four external model services: diffusion, segmentation,
//! text/image embedding and chat. Each has an HTTP implementation and a
//! deterministic mock so the whole pipeline runs offline.

mod http;
mod mock;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionWeightPlan;
use crate::blob::Blob;
use crate::error::{Error, Result};
use crate::geometry::RasterMask;

pub use http::{HttpChat, HttpClient, HttpDiffusion, HttpEmbedding, HttpSegmentation};
pub use mock::{
    trigram_embedding, ChatFault, DiffusionCall, MockChat, MockDiffusion, MockEmbedding, MockSegmentation,
    EMBEDDING_DIM,
};

/// Masked prompt for one region of a diffusion job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPrompt {
    pub mask: RasterMask,
    pub prompt: String,
    pub negative_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionJob {
    pub prompt: String,
    pub negative_prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub seed: u64,
    /// Edge image (PNG) for shape anchoring.
    pub anchor: Option<Blob>,
    pub weight_plan: Option<AttentionWeightPlan>,
    /// Token sequences addressed by the plan's prompt ids.
    pub prompts: Vec<String>,
    pub regions: Vec<RegionPrompt>,
}

impl DiffusionJob {
    pub fn new(prompt: impl Into<String>, width: u32, height: u32, steps: u32, seed: u64) -> Self {
        DiffusionJob {
            prompt: prompt.into(),
            negative_prompt: String::new(),
            width,
            height,
            steps,
            seed,
            anchor: None,
            weight_plan: None,
            prompts: Vec::new(),
            regions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::invalid(format!(
                "diffusion size {}x{} must be positive multiples of 8",
                self.width, self.height
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("diffusion steps must be at least 1"));
        }
        if let Some(plan) = &self.weight_plan {
            if let Some(id) = plan.prompt_ids().into_iter().find(|&id| id as usize >= self.prompts.len()) {
                return Err(Error::invalid(format!(
                    "weight plan references prompt {id} but the job has {} prompts",
                    self.prompts.len()
                )));
            }
        }
        if let Some(r) = self.regions.iter().find(|r| r.mask.dims() != (self.width, self.height)) {
            return Err(Error::invalid(format!(
                "region mask {}x{} does not match job size {}x{}",
                r.mask.width(),
                r.mask.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: RasterMask,
    /// Nothing in the image overlapped the hint.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub text: String,
    pub image_png: Blob,
    pub max_tokens: u32,
    pub temperature: f32,
}

pub trait DiffusionBackend: Send + Sync {
    /// Returns one PNG of the requested size.
    fn generate(&self, job: &DiffusionJob) -> Result<Vec<u8>>;
}

pub trait SegmentationBackend: Send + Sync {
    /// Foreground mask of the dominant object overlapping `hint`.
    fn extract(&self, image_png: &[u8], hint: &RasterMask) -> Result<Segmentation>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Unit-norm text embedding.
    fn embed(&self, text: &str) -> Result<Vec<f32>>;

    /// Raw image-text similarity (cosine, unscaled).
    fn clip_score(&self, image_png: &[u8], text: &str) -> Result<f64>;
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            timeout_secs: 60.0,
            retries: 2,
            retry_backoff_ms: 100,
            max_in_flight: 8,
            token_env: None,
        }
    }
}

impl BackendConfig {
    pub fn http(base_url: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::invalid("backend timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("backend max_in_flight must be at least 1"));
        }
        if self.kind == BackendKind::Http && self.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(Error::invalid("http backend needs a base_url"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub diffusion: BackendConfig,
    pub segmentation: BackendConfig,
    pub embedding: BackendConfig,
    pub chat: BackendConfig,
    /// Largest chat request (text plus image bytes) the mock accepts.
    pub mock_chat_max_request_bytes: usize,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        let with_env = |name: &str| BackendConfig {
            token_env: Some(name.to_string()),
            ..BackendConfig::default()
        };
        BackendsConfig {
            diffusion: with_env("ENGINE_DIFFUSION_TOKEN"),
            segmentation: with_env("ENGINE_SEGMENT_TOKEN"),
            embedding: with_env("ENGINE_EMBED_TOKEN"),
            chat: with_env("ENGINE_CHAT_TOKEN"),
            mock_chat_max_request_bytes: 8 * 1024 * 1024,
        }
    }
}

impl BackendsConfig {
    /// Point every backend at one HTTP server.
    pub fn all_http(base_url: &str) -> Self {
        let mut cfg = Self::default();
        for b in [&mut cfg.diffusion, &mut cfg.segmentation, &mut cfg.embedding, &mut cfg.chat] {
            b.kind = BackendKind::Http;
            b.base_url = Some(base_url.to_string());
        }
        cfg
    }
}

/// The set of backends a pipeline run talks to.
#[derive(Clone)]
pub struct Backends {
    pub diffusion: Arc<dyn DiffusionBackend>,
    pub segmentation: Arc<dyn SegmentationBackend>,
    pub embedding: Arc<dyn EmbeddingBackend>,
    pub chat: Arc<dyn ChatBackend>,
}

impl Backends {
    pub fn mock() -> Self {
        Backends {
            diffusion: Arc::new(MockDiffusion::new()),
            segmentation: Arc::new(MockSegmentation),
            embedding: Arc::new(MockEmbedding),
            chat: Arc::new(MockChat::new()),
        }
    }

    pub fn from_config(cfg: &BackendsConfig) -> Result<Self> {
        for b in [&cfg.diffusion, &cfg.segmentation, &cfg.embedding, &cfg.chat] {
            b.validate()?;
        }
        let diffusion: Arc<dyn DiffusionBackend> = match cfg.diffusion.kind {
            BackendKind::Mock => Arc::new(MockDiffusion::new()),
            BackendKind::Http => Arc::new(HttpDiffusion::new(HttpClient::new("diffusion", &cfg.diffusion)?)),
        };
        let segmentation: Arc<dyn SegmentationBackend> = match cfg.segmentation.kind {
            BackendKind::Mock => Arc::new(MockSegmentation),
            BackendKind::Http => Arc::new(HttpSegmentation::new(HttpClient::new(
                "segmentation",
                &cfg.segmentation,
            )?)),
        };
        let embedding: Arc<dyn EmbeddingBackend> = match cfg.embedding.kind {
            BackendKind::Mock => Arc::new(MockEmbedding),
            BackendKind::Http => Arc::new(HttpEmbedding::new(HttpClient::new("embedding", &cfg.embedding)?)),
        };
        let chat: Arc<dyn ChatBackend> = match cfg.chat.kind {
            BackendKind::Mock => Arc::new(MockChat::new().with_max_request_bytes(cfg.mock_chat_max_request_bytes)),
            BackendKind::Http => Arc::new(HttpChat::new(HttpClient::new("chat", &cfg.chat)?)),
        };
        Ok(Backends {
            diffusion,
            segmentation,
            embedding,
            chat,
        })
    }
}
