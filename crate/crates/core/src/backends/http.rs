//! Blocking JSON-over-HTTP clients for the backend endpoints in [`super::wire`].

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    decode_image, decode_mask, ChatWireRequest, ChatWireResponse, DiffusionRequest, DiffusionResponse, EmbedRequest,
    EmbedResponse, SegmentRequest, SegmentResponse, CHAT_PATH, DIFFUSION_PATH, EMBED_PATH, SEGMENT_PATH,
};
use super::{
    BackendConfig, ChatBackend, ChatRequest, DiffusionBackend, DiffusionJob, EmbeddingBackend, Segmentation,
    SegmentationBackend,
};
use crate::blob::encode_b64;
use crate::error::{BackendFailure, Error, Result};
use crate::geometry::RasterMask;

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Shared transport: timeout, retry with linear backoff, bearer auth and an
/// in-flight limit.
#[derive(Clone)]
pub struct HttpClient {
    name: &'static str,
    base_url: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
    token: Option<String>,
    slots: Arc<Slots>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("name", &self.name)
            .field("base_url", &self.base_url)
            .field("retries", &self.retries)
            .finish_non_exhaustive()
    }
}

impl HttpClient {
    pub fn new(name: &'static str, cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let base_url = cfg
            .base_url
            .as_deref()
            .map(|u| u.trim_end_matches('/').to_string())
            .filter(|u| !u.is_empty())
            .ok_or_else(|| Error::invalid(format!("{name} backend needs a base_url")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = cfg
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        Ok(HttpClient {
            name,
            base_url,
            agent,
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.retry_backoff_ms),
            token,
            slots: Arc::new(Slots {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            }),
        })
    }

    fn fail(&self, kind: BackendFailure, msg: impl Into<String>) -> Error {
        Error::backend(self.name, kind, msg)
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R> {
        let _slot = self.slots.acquire();
        let mut req = self.agent.post(url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| self.fail(BackendFailure::Retriable, format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = resp
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(200)
                .collect::<String>();
            let kind = if status >= 500 || status == 408 || status == 429 {
                BackendFailure::Retriable
            } else {
                BackendFailure::Permanent
            };
            return Err(self.fail(kind, format!("{url}: HTTP {status} {detail}")));
        }
        resp.body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_json::<R>()
            .map_err(|e| match e {
                ureq::Error::Json(e) => self.fail(BackendFailure::Permanent, format!("{url}: bad response body: {e}")),
                e => self.fail(BackendFailure::Retriable, format!("{url}: {e}")),
            })
    }

    /// POST `body` to `path`, retrying retriable failures.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            match self.attempt(&url, body) {
                Err(e) if e.is_retriable() && attempt < self.retries => {
                    attempt += 1;
                    thread::sleep(self.backoff * attempt);
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpDiffusion(HttpClient);

impl HttpDiffusion {
    pub fn new(client: HttpClient) -> Self {
        HttpDiffusion(client)
    }
}

impl DiffusionBackend for HttpDiffusion {
    fn generate(&self, job: &DiffusionJob) -> Result<Vec<u8>> {
        job.validate()?;
        let resp: DiffusionResponse = self.0.post_json(DIFFUSION_PATH, &DiffusionRequest::from(job))?;
        let first = resp
            .images
            .first()
            .ok_or_else(|| self.0.fail(BackendFailure::Permanent, "response carried no images"))?;
        decode_image(first)
    }
}

#[derive(Debug, Clone)]
pub struct HttpSegmentation(HttpClient);

impl HttpSegmentation {
    pub fn new(client: HttpClient) -> Self {
        HttpSegmentation(client)
    }
}

impl SegmentationBackend for HttpSegmentation {
    fn extract(&self, image_png: &[u8], hint: &RasterMask) -> Result<Segmentation> {
        let body = SegmentRequest {
            image_png_b64: encode_b64(image_png),
            hint_mask_png_b64: encode_b64(&hint.to_png()),
        };
        let resp: SegmentResponse = self.0.post_json(SEGMENT_PATH, &body)?;
        let mask = decode_mask(&resp.mask_png_b64)?;
        if mask.dims() != hint.dims() {
            return Err(self.0.fail(
                BackendFailure::Permanent,
                format!("mask size {:?} does not match hint {:?}", mask.dims(), hint.dims()),
            ));
        }
        let empty = resp.empty || mask.is_empty();
        Ok(Segmentation { mask, empty })
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedding(HttpClient);

impl HttpEmbedding {
    pub fn new(client: HttpClient) -> Self {
        HttpEmbedding(client)
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let body = EmbedRequest {
            text: text.to_string(),
            image_png_b64: None,
        };
        let resp: EmbedResponse = self.0.post_json(EMBED_PATH, &body)?;
        resp.embedding
            .filter(|e| !e.is_empty())
            .ok_or_else(|| self.0.fail(BackendFailure::Permanent, "response carried no embedding"))
    }

    fn clip_score(&self, image_png: &[u8], text: &str) -> Result<f64> {
        let body = EmbedRequest {
            text: text.to_string(),
            image_png_b64: Some(encode_b64(image_png)),
        };
        let resp: EmbedResponse = self.0.post_json(EMBED_PATH, &body)?;
        resp.similarity
            .filter(|s| s.is_finite())
            .ok_or_else(|| self.0.fail(BackendFailure::Permanent, "response carried no similarity"))
    }
}

#[derive(Debug, Clone)]
pub struct HttpChat(HttpClient);

impl HttpChat {
    pub fn new(client: HttpClient) -> Self {
        HttpChat(client)
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let resp: ChatWireResponse = self.0.post_json(CHAT_PATH, &ChatWireRequest::from(request))?;
        Ok(resp.text)
    }
}
