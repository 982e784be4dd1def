//! Session operations shared by the HTTP routes and the CLI. Each returns a
//! JSON view or an [`ApiError`] carrying the HTTP status to report.

use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};
use sketchplan_core::blob::decode_b64;
use sketchplan_core::geometry::{AffineTransform, Legend, PaletteColor, RasterMask};
use sketchplan_core::pipeline::{CandidateSet, Engine, GenerationRun, ObjectPlacement, Session};
use sketchplan_core::semantic::{RegionId, SemanticSpace, Violation};
use sketchplan_core::Error;

use crate::store::{artifact_name, timestamp, SessionRecord, Store};

/// Upper bound on samples per generate call.
pub const MAX_SAMPLES: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub body: Value,
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

impl ApiError {
    pub fn new(status: u16, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": kind, "message": message.into()}),
        }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(404, "not_found", format!("no session {id:?}"))
    }

    pub fn storage(e: std::io::Error) -> Self {
        Self::new(500, "storage", e.to_string())
    }

    pub fn bad_body(e: serde_json::Error) -> Self {
        let status = if e.is_syntax() || e.is_eof() { 400 } else { 422 };
        Self::new(status, "bad_request", format!("request body: {e}"))
    }

    pub fn message(&self) -> &str {
        self.body["message"].as_str().unwrap_or_default()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::Format(_) | Error::Parse { .. } => Self::new(422, "invalid", message),
            Error::Validation(violations) => ApiError {
                status: 422,
                body: json!({"error": "validation", "message": message, "violations": violations}),
            },
            Error::Completion { raw_text, .. } => ApiError {
                status: 502,
                body: json!({"error": "completion", "message": message, "raw_text": raw_text}),
            },
            Error::Backend { backend, kind, .. } => ApiError {
                status: 502,
                body: json!({"error": "backend", "message": message, "backend": backend, "kind": kind}),
            },
            Error::Conflict(_) => Self::new(409, "conflict", message),
            Error::NotFound(_) => Self::new(404, "not_found", message),
            Error::Template(_) | Error::Io(_) => Self::new(500, "internal", message),
        }
    }
}

/// Parse a JSON body; an empty body yields the default value.
pub fn parse_body<T: for<'de> Deserialize<'de> + Default>(bytes: &[u8]) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(ApiError::bad_body)
}

/// Parse a JSON body that must be present.
pub fn parse_required<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(ApiError::bad_body)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBody {
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchBody {
    pub sketch_png_b64: String,
    pub legend: Legend,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceBody {
    pub space: Value,
    /// Revision the client's edit was based on.
    pub base_revision: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectBody {
    pub version: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementBody {
    pub dx: i32,
    pub dy: i32,
    pub scale: f64,
}

impl Default for PlacementBody {
    fn default() -> Self {
        PlacementBody {
            dx: 0,
            dy: 0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateBody {
    pub samples: u32,
    pub seed: Option<u64>,
}

impl Default for GenerateBody {
    fn default() -> Self {
        GenerateBody { samples: 1, seed: None }
    }
}

fn artifact_url(id: &str, bytes: &[u8]) -> String {
    format!("/sessions/{id}/artifacts/{}", artifact_name(bytes))
}

fn bbox_view(mask: &RasterMask) -> Value {
    match mask.bbox() {
        Some(b) => json!([b.min_x, b.min_y, b.max_x, b.max_y]),
        None => Value::Null,
    }
}

fn regions_view(session: &Session) -> Value {
    let regions: Vec<Value> = session
        .regions()
        .iter()
        .map(|r| {
            json!({
                "region_id": r.id,
                "color": r.color,
                "color_name": r.color.name(),
                "type": session.object_type(&r.id),
                "kind": session.kinds.get(&r.id),
                "pixels": r.mask.count(),
                "bbox": bbox_view(&r.mask),
            })
        })
        .collect();
    Value::Array(regions)
}

fn sketch_view(id: &str, session: &Session) -> Value {
    match &session.sketch {
        Some(s) => json!({
            "width": s.width,
            "height": s.height,
            "png": artifact_url(id, s.png.as_bytes()),
            "legend": s.legend,
            "regions": regions_view(session),
        }),
        None => Value::Null,
    }
}

fn candidates_view(id: &str, set: &CandidateSet) -> Value {
    let candidates: Vec<Value> = set
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "index": i,
                "batch_index": c.batch_index,
                "seed": c.seed,
                "iou": c.iou,
                "clip_score": c.clip_score,
                "clip_norm": c.clip_norm,
                "combined": c.combined,
                "extraction_empty": c.extraction_empty,
                "thumbnail": artifact_url(id, c.image.as_bytes()),
                "mask": artifact_url(id, &c.extracted_mask.to_png()),
            })
        })
        .collect();
    json!({
        "region_id": set.region_id,
        "version": set.version,
        "prompt": set.prompt,
        "scored": set.scored,
        "failures": set.failures,
        "candidates": candidates,
    })
}

fn placement_view(id: &str, p: &ObjectPlacement) -> Value {
    json!({
        "region_id": p.region_id,
        "version": p.version,
        "candidate_index": p.candidate_index,
        "transform": p.transform,
        "clipped": p.clipped,
        "empty": p.is_empty(),
        "pixels": p.active_mask.count(),
        "bbox": bbox_view(&p.active_mask),
        "mask": artifact_url(id, &p.active_mask.to_png()),
    })
}

fn run_view(id: &str, run: &GenerationRun) -> Value {
    let results: Vec<Value> = run
        .results
        .iter()
        .map(|r| {
            json!({
                "index": r.index,
                "seed": r.seed,
                "image": r.image.as_ref().map(|b| artifact_url(id, b.as_bytes())),
                "error": r.error,
            })
        })
        .collect();
    json!({
        "request_digest": run.request_digest,
        "seed": run.request.seed,
        "samples": run.request.samples,
        "omitted": run.request.omitted,
        "results": results,
    })
}

fn session_view(record: &SessionRecord) -> Value {
    let id = record.id.as_str();
    let s = &record.session;
    json!({
        "id": id,
        "revision": record.revision,
        "created_at": record.created_at,
        "updated_at": record.updated_at,
        "seed": s.seed,
        "sketch": sketch_view(id, s),
        "space": s.space.as_ref().map(SemanticSpace::to_value),
        "candidates": s.candidates.values().map(|c| candidates_view(id, c)).collect::<Vec<_>>(),
        "placements": s.placements.values().map(|p| placement_view(id, p)).collect::<Vec<_>>(),
        "runs": s.runs.iter().map(|r| run_view(id, r)).collect::<Vec<_>>(),
    })
}

fn violation_lines(violations: &[Violation]) -> Vec<String> {
    violations.iter().map(|v| v.to_string()).collect()
}

#[derive(Clone)]
pub struct Service {
    pub store: Arc<Store>,
    pub engine: Arc<Engine>,
}

impl Service {
    pub fn new(store: Store, engine: Engine) -> Self {
        Service {
            store: Arc::new(store),
            engine: Arc::new(engine),
        }
    }

    /// Run `f` on a copy of the session under its writer lease. Only a
    /// successful call is persisted and published.
    async fn mutate<T, F>(&self, id: &str, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&Engine, &mut Session, &SessionRecord) -> ApiResult<T> + Send + 'static,
    {
        let slot = self.store.slot(id).ok_or_else(|| ApiError::not_found(id))?;
        let _lease = slot.lease.lock().await;
        let (store, engine, worker) = (self.store.clone(), self.engine.clone(), slot.clone());
        let task = tokio::task::spawn_blocking(move || {
            let current = worker.snapshot();
            let mut session = current.session.clone();
            let out = f(&engine, &mut session, &current)?;
            let next = SessionRecord {
                id: current.id.clone(),
                created_at: current.created_at.clone(),
                updated_at: timestamp(),
                revision: current.revision + 1,
                session,
            };
            store.commit(&worker, next).map_err(ApiError::storage)?;
            Ok(out)
        });
        task.await
            .map_err(|e| ApiError::new(500, "internal", format!("worker failed: {e}")))?
    }

    fn snapshot(&self, id: &str) -> ApiResult<Arc<SessionRecord>> {
        self.store.get(id).ok_or_else(|| ApiError::not_found(id))
    }

    pub async fn create_session(&self, body: CreateBody) -> ApiResult<Value> {
        let seed = body.seed.unwrap_or_else(rand_seed);
        let store = self.store.clone();
        let record = tokio::task::spawn_blocking(move || store.create(Session::new(seed)))
            .await
            .map_err(|e| ApiError::new(500, "internal", format!("worker failed: {e}")))?
            .map_err(ApiError::storage)?;
        Ok(session_view(&record))
    }

    pub fn list_sessions(&self) -> Value {
        json!({"sessions": self.store.ids()})
    }

    pub fn get_session(&self, id: &str) -> ApiResult<Value> {
        Ok(session_view(self.snapshot(id)?.as_ref()))
    }

    pub async fn put_sketch(&self, id: &str, body: SketchBody) -> ApiResult<Value> {
        let png = decode_b64(&body.sketch_png_b64)
            .map_err(|e| ApiError::new(422, "invalid", format!("sketch_png_b64: {e}")))?;
        let sid = id.to_string();
        self.mutate(id, move |engine, session, _| {
            session.set_sketch(engine, &png, body.legend)?;
            Ok(sketch_view(&sid, session))
        })
        .await
    }

    pub async fn infer(&self, id: &str) -> ApiResult<Value> {
        self.mutate(id, |engine, session, _| {
            let outcome = session.infer(engine)?;
            Ok(json!({
                "space": outcome.space.to_value(),
                "violations": outcome.completion.violations,
                "raw_text": outcome.completion.raw_text,
                "attempts": outcome.completion.attempts,
                "regions": regions_view(session),
            }))
        })
        .await
    }

    pub async fn put_space(&self, id: &str, body: SpaceBody) -> ApiResult<Value> {
        let space = SemanticSpace::from_value(body.space)?;
        self.mutate(id, move |engine, session, current| {
            let warnings = session.set_space(engine, space)?;
            let mut notes = Vec::new();
            if let Some(base) = body.base_revision.filter(|&b| b != current.revision) {
                notes.push(format!(
                    "session changed since revision {base} (now {}); this edit replaced the newer space",
                    current.revision
                ));
            }
            Ok(json!({
                "violations": warnings,
                "warnings": violation_lines(&warnings),
                "notes": notes,
                "regions": regions_view(session),
            }))
        })
        .await
    }

    pub async fn generate_candidates(&self, id: &str, region: &str) -> ApiResult<Value> {
        let (sid, rid) = (id.to_string(), RegionId::new(region));
        self.mutate(id, move |engine, session, _| {
            let set = session.generate_candidates(engine, &rid)?;
            Ok(candidates_view(&sid, set))
        })
        .await
    }

    pub async fn select(&self, id: &str, region: &str, index: usize, body: SelectBody) -> ApiResult<Value> {
        let (sid, rid) = (id.to_string(), RegionId::new(region));
        self.mutate(id, move |engine, session, _| {
            let p = session.select_candidate(engine, &rid, index, body.version)?;
            Ok(placement_view(&sid, p))
        })
        .await
    }

    pub async fn place(&self, id: &str, region: &str, body: PlacementBody) -> ApiResult<Value> {
        let t = AffineTransform::new(body.dx, body.dy, body.scale)?;
        let (sid, rid) = (id.to_string(), RegionId::new(region));
        self.mutate(id, move |_, session, _| {
            let p = session.adjust_placement(&rid, &t)?;
            Ok(placement_view(&sid, p))
        })
        .await
    }

    pub async fn generate(&self, id: &str, body: GenerateBody) -> ApiResult<Value> {
        if body.samples > MAX_SAMPLES {
            return Err(ApiError::new(
                422,
                "invalid",
                format!("samples must be at most {MAX_SAMPLES}, got {}", body.samples),
            ));
        }
        let sid = id.to_string();
        self.mutate(id, move |engine, session, _| {
            let run = session.generate(engine, body.samples, body.seed)?;
            Ok(run_view(&sid, run))
        })
        .await
    }

    pub fn results(&self, id: &str) -> ApiResult<Value> {
        let record = self.snapshot(id)?;
        let runs: Vec<Value> = record.session.runs.iter().map(|r| run_view(id, r)).collect();
        Ok(json!({"runs": runs}))
    }

    pub fn artifact(&self, id: &str, name: &str) -> ApiResult<Vec<u8>> {
        self.snapshot(id)?;
        let path = self
            .store
            .artifact_path(id, name)
            .ok_or_else(|| ApiError::new(404, "not_found", format!("no artifact {name:?}")))?;
        std::fs::read(path).map_err(|_| ApiError::new(404, "not_found", format!("no artifact {name:?}")))
    }
}

pub fn palette() -> Value {
    let colors: Vec<Value> = PaletteColor::all()
        .map(|c| json!({"index": c.index(), "name": c.name(), "hex": c.hex()}))
        .collect();
    json!({"colors": colors})
}

fn rand_seed() -> u64 {
    u64::from_le_bytes(uuid::Uuid::new_v4().as_bytes()[..8].try_into().expect("8 bytes"))
}
