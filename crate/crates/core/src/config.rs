//! Engine configuration. Every tunable default lives here and round-trips
//! through TOML; see `config/engine.example.toml` at the repository root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{DEFAULT_LAMBDA_REGION, DEFAULT_LAMBDA_RELATION};
use crate::backends::BackendsConfig;
use crate::error::{Error, Result};
use crate::geometry::CannyParams;
use crate::lexicon::{SampleMode, DEFAULT_SAMPLE_K};
use crate::recommend::ChatParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub batch: usize,
    pub top_k: usize,
    pub w_iou: f64,
    pub w_clip: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            width: 512,
            height: 512,
            steps: 6,
            batch: 12,
            top_k: 4,
            w_iou: 0.5,
            w_clip: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub canny: CannyParams,
    /// Edges are kept within the extracted mask grown by this many pixels.
    pub mask_dilation: u32,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            canny: CannyParams::default(),
            mask_dilation: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub steps: u32,
    pub samples: u32,
    /// Image pixels per latent cell along each axis.
    pub latent_factor: u32,
    pub lambda_region: f64,
    pub lambda_relation: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            steps: 30,
            samples: 1,
            latent_factor: 8,
            lambda_region: DEFAULT_LAMBDA_REGION,
            lambda_relation: DEFAULT_LAMBDA_RELATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    /// Lexicon phrases sampled per object (and for relationships).
    pub k: usize,
    pub sample_mode: SampleMode,
    pub max_tokens: u32,
    pub temperature: f32,
    /// Lexicon snapshot to sample from; the bundled sample when unset.
    pub lexicon: Option<PathBuf>,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        let chat = ChatParams::default();
        RecommendConfig {
            k: DEFAULT_SAMPLE_K,
            sample_mode: SampleMode::Uniform,
            max_tokens: chat.max_tokens,
            temperature: chat.temperature,
            lexicon: None,
        }
    }
}

impl RecommendConfig {
    pub fn chat_params(&self) -> ChatParams {
        ChatParams {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub candidates: CandidateConfig,
    pub anchor: AnchorConfig,
    pub generation: GenerationConfig,
    pub recommend: RecommendConfig,
    pub backends: BackendsConfig,
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.candidates;
        if c.width == 0 || c.height == 0 || c.width % 8 != 0 || c.height % 8 != 0 {
            return Err(Error::invalid("candidate size must be positive multiples of 8"));
        }
        if c.steps == 0 || self.generation.steps == 0 {
            return Err(Error::invalid("step counts must be at least 1"));
        }
        if c.batch == 0 || c.top_k == 0 {
            return Err(Error::invalid("candidate batch and top_k must be at least 1"));
        }
        if !(c.w_iou >= 0.0 && c.w_clip >= 0.0 && (c.w_iou + c.w_clip - 1.0).abs() < 1e-9) {
            return Err(Error::invalid(format!(
                "score weights must be non-negative and sum to 1, got {} + {}",
                c.w_iou, c.w_clip
            )));
        }
        let canny = &self.anchor.canny;
        if !(0.0..=1.0).contains(&canny.low) || !(0.0..=1.0).contains(&canny.high) || canny.low >= canny.high {
            return Err(Error::invalid("canny thresholds must satisfy 0 <= low < high <= 1"));
        }
        if !(canny.sigma.is_finite() && canny.sigma > 0.0) {
            return Err(Error::invalid("canny sigma must be positive"));
        }
        let g = &self.generation;
        if g.latent_factor == 0 {
            return Err(Error::invalid("latent_factor must be at least 1"));
        }
        if !g.lambda_region.is_finite() || !g.lambda_relation.is_finite() {
            return Err(Error::invalid("lambda values must be finite"));
        }
        if self.recommend.k == 0 {
            return Err(Error::invalid("lexicon sample size k must be at least 1"));
        }
        for b in [
            &self.backends.diffusion,
            &self.backends.segmentation,
            &self.backends.embedding,
            &self.backends.chat,
        ] {
            b.validate()?;
        }
        Ok(())
    }
}
