//! Python bindings: masks, edges, attention plans, ranking and the session
//! workflow. Structured values cross the boundary as plain dicts and lists.

use pyo3::exceptions::{PyKeyError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;
use sketchplan_core::attention::{self, RelationSpan, TokenSpan};
use sketchplan_core::backends::Backends;
use sketchplan_core::config::EngineConfig;
use sketchplan_core::geometry::{self, AffineTransform, GrayImage, Legend, PaletteColor, RasterMask};
use sketchplan_core::pipeline as core_pipeline;
use sketchplan_core::semantic::{RegionId, SemanticSpace};
use sketchplan_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Format(_) | Error::Parse { .. } | Error::Validation(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::NotFound(_) => PyKeyError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a JSON string or any object `json.dumps` can serialize.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s);
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn bytes<'py>(py: Python<'py>, b: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, b)
}

/// Binary raster mask.
#[pyclass(name = "Mask", eq, from_py_object, module = "sketchplan")]
#[derive(Clone, PartialEq)]
struct Mask(RasterMask);

#[pymethods]
impl Mask {
    #[new]
    fn new(width: u32, height: u32) -> PyResult<Self> {
        RasterMask::new(width, height).map(Mask).map_err(py_err)
    }

    /// Filled half-open rectangle `[x0, x1) x [y0, y1)`.
    #[staticmethod]
    fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> PyResult<Self> {
        RasterMask::rect(width, height, x0, y0, x1, y1).map(Mask).map_err(py_err)
    }

    #[staticmethod]
    fn from_png(png: &[u8]) -> PyResult<Self> {
        RasterMask::from_png(png).map(Mask).map_err(py_err)
    }

    fn to_png<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        bytes(py, &self.0.to_png())
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn get(&self, x: u32, y: u32) -> PyResult<bool> {
        self.check(x, y)?;
        Ok(self.0.get(x, y))
    }

    fn set(&mut self, x: u32, y: u32, value: bool) -> PyResult<()> {
        self.check(x, y)?;
        self.0.set(x, y, value);
        Ok(())
    }

    fn union(&self, other: &Mask) -> PyResult<Mask> {
        self.0.union(&other.0).map(Mask).map_err(py_err)
    }

    fn intersection(&self, other: &Mask) -> PyResult<Mask> {
        self.0.intersection(&other.0).map(Mask).map_err(py_err)
    }

    fn difference(&self, other: &Mask) -> PyResult<Mask> {
        self.0.difference(&other.0).map(Mask).map_err(py_err)
    }

    fn dilate(&self, radius: u32) -> Mask {
        Mask(self.0.dilate(radius))
    }

    /// Inclusive `(min_x, min_y, max_x, max_y)`, or None when empty.
    fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        self.0.bbox().map(|b| (b.min_x, b.min_y, b.max_x, b.max_y))
    }

    fn __len__(&self) -> usize {
        self.0.count()
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, {} set)", self.0.width(), self.0.height(), self.0.count())
    }
}

impl Mask {
    fn check(&self, x: u32, y: u32) -> PyResult<()> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err(format!("({x}, {y}) is outside the mask")));
        }
        Ok(())
    }
}

#[pyfunction]
fn iou(a: &Mask, b: &Mask) -> PyResult<f64> {
    geometry::iou(&a.0, &b.0).map_err(py_err)
}

#[pyfunction]
fn joint_mask(a: &Mask, b: &Mask) -> PyResult<Mask> {
    geometry::joint_mask(&a.0, &b.0).map(Mask).map_err(py_err)
}

#[pyfunction]
fn mask_difference(a: &Mask, b: &Mask) -> PyResult<Mask> {
    geometry::mask_difference(&a.0, &b.0).map(Mask).map_err(py_err)
}

/// Canny edges of a mask treated as a 0/1 intensity image.
#[pyfunction]
#[pyo3(signature = (mask, low = 0.1, high = 0.2))]
fn canny(mask: &Mask, low: f32, high: f32) -> PyResult<Mask> {
    geometry::canny(&GrayImage::from_mask(&mask.0), low, high)
        .map(|e| Mask(e.into_mask()))
        .map_err(py_err)
}

/// Canny edges of a PNG, converted to grayscale in `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (png, low = 0.1, high = 0.2))]
fn canny_png(png: &[u8], low: f32, high: f32) -> PyResult<Mask> {
    let img = GrayImage::from_png(png).map_err(py_err)?;
    geometry::canny(&img, low, high).map(|e| Mask(e.into_mask())).map_err(py_err)
}

type Span = (u32, u32, u32);

fn span((prompt_id, start, end): Span) -> PyResult<TokenSpan> {
    TokenSpan::new(prompt_id, start, end).map_err(py_err)
}

/// Attention plan entries as `(mask, (prompt_id, start, end), lambda)`.
///
/// `regions` is a list of `(mask, span)`; `relations` a list of
/// `(subject_index, object_index, span)`.
#[pyfunction]
fn build_plan(
    regions: Vec<(Mask, Span)>,
    relations: Vec<(usize, usize, Span)>,
    lambda_region: f64,
    lambda_rel: f64,
) -> PyResult<Vec<(Mask, Span, f64)>> {
    let regions = regions
        .into_iter()
        .map(|(m, s)| Ok((m.0, span(s)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let relations = relations
        .into_iter()
        .map(|(subject, object, s)| {
            Ok(RelationSpan {
                subject,
                object,
                span: span(s)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let plan = attention::build_plan(&regions, &relations, lambda_region, lambda_rel).map_err(py_err)?;
    Ok(plan
        .entries
        .into_iter()
        .map(|e| (Mask(e.mask), (e.span.prompt_id, e.span.start, e.span.end), e.lambda))
        .collect())
}

#[pyfunction]
fn normalize_clip(scores: Vec<f64>) -> Vec<f64> {
    core_pipeline::normalize_clip(&scores)
}

/// `(index, combined)` pairs best first for `(iou, clip_norm)` scores.
#[pyfunction]
#[pyo3(signature = (scores, w_iou = 0.5, w_clip = 0.5))]
fn rank_scores(scores: Vec<(f64, f64)>, w_iou: f64, w_clip: f64) -> Vec<(usize, f64)> {
    core_pipeline::rank_scores(&scores, w_iou, w_clip)
}

/// `(index, name, hex)` for every palette color.
#[pyfunction]
fn palette() -> Vec<(usize, &'static str, String)> {
    PaletteColor::all().map(|c| (c.index(), c.name(), c.hex())).collect()
}

#[pyclass(name = "Engine", frozen, module = "sketchplan")]
struct Engine(core_pipeline::Engine);

#[pymethods]
impl Engine {
    /// Default configuration with deterministic offline backends.
    #[staticmethod]
    fn mock() -> Self {
        Engine(core_pipeline::Engine::mock())
    }

    /// Engine from TOML configuration text. `backend` is "http" to use the
    /// configured endpoints or "mock" for the offline stand-ins.
    #[staticmethod]
    #[pyo3(signature = (text, backend = "http"))]
    fn from_toml(text: &str, backend: &str) -> PyResult<Self> {
        let config = EngineConfig::from_toml_str(text).map_err(py_err)?;
        let engine = match backend {
            "http" => core_pipeline::Engine::new(config),
            "mock" => core_pipeline::Engine::with_backends(config, Backends::mock()),
            other => return Err(PyValueError::new_err(format!("unknown backend {other:?}"))),
        };
        engine.map(Engine).map_err(py_err)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.config)
    }
}

fn legend_from(obj: &Bound<'_, PyAny>) -> PyResult<Legend> {
    Legend::from_json(&json_text(obj)?).map_err(py_err)
}

/// Interactive workflow state. Every method either applies fully or leaves
/// the session unchanged.
#[pyclass(name = "Session", module = "sketchplan")]
struct Session(core_pipeline::Session);

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Session(core_pipeline::Session::new(seed))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    /// Load a palette-colored sketch; returns the region ids found.
    fn set_sketch(&mut self, engine: &Engine, png: &[u8], legend: &Bound<'_, PyAny>) -> PyResult<Vec<String>> {
        let legend = legend_from(legend)?;
        let regions = self.0.set_sketch(&engine.0, png, legend).map_err(py_err)?;
        Ok(regions.iter().map(|r| r.id.as_str().to_string()).collect())
    }

    fn region_mask(&self, region: &str) -> PyResult<Mask> {
        self.0.region(&RegionId::new(region)).map(|r| Mask(r.mask.clone())).map_err(py_err)
    }

    /// Recommend a semantic space; returns the completion record.
    fn infer<'py>(&mut self, py: Python<'py>, engine: &Engine) -> PyResult<Bound<'py, PyAny>> {
        let outcome = self.0.infer(&engine.0).map_err(py_err)?;
        let c = &outcome.completion;
        to_py(
            py,
            &serde_json::json!({
                "raw_text": c.raw_text,
                "space": outcome.space.to_value(),
                "violations": c.violations,
                "attempts": c.attempts,
            }),
        )
    }

    #[getter]
    fn space<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.space.as_ref().map(SemanticSpace::to_value))
    }

    /// Replace the semantic space; returns advisory violations.
    fn set_space<'py>(
        &mut self,
        py: Python<'py>,
        engine: &Engine,
        space: &Bound<'_, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let space = SemanticSpace::from_json(&json_text(space)?).map_err(py_err)?;
        let notes = self.0.set_space(&engine.0, space).map_err(py_err)?;
        to_py(py, &notes)
    }

    /// Generate and rank candidates for a region. Scores are returned; the
    /// images are available through `candidate_image`.
    fn generate_candidates<'py>(
        &mut self,
        py: Python<'py>,
        engine: &Engine,
        region: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let set = self.0.generate_candidates(&engine.0, &RegionId::new(region)).map_err(py_err)?;
        let scores: Vec<serde_json::Value> = set
            .candidates
            .iter()
            .map(|c| {
                serde_json::json!({
                    "batch_index": c.batch_index,
                    "seed": c.seed,
                    "iou": c.iou,
                    "clip_score": c.clip_score,
                    "clip_norm": c.clip_norm,
                    "combined": c.combined,
                })
            })
            .collect();
        to_py(
            py,
            &serde_json::json!({
                "version": set.version,
                "prompt": set.prompt,
                "candidates": scores,
                "failures": set.failures,
                "scored": set.scored,
            }),
        )
    }

    fn candidate_image<'py>(&self, py: Python<'py>, region: &str, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let set = self
            .0
            .candidates
            .get(&RegionId::new(region))
            .ok_or_else(|| PyKeyError::new_err(format!("no candidates for {region:?}")))?;
        let c = set
            .candidates
            .get(index)
            .ok_or_else(|| PyKeyError::new_err(format!("candidate {index} out of range")))?;
        Ok(bytes(py, c.image.as_bytes()))
    }

    #[pyo3(signature = (engine, region, index, version = None))]
    fn select(&mut self, engine: &Engine, region: &str, index: usize, version: Option<u64>) -> PyResult<()> {
        self.0
            .select_candidate(&engine.0, &RegionId::new(region), index, version)
            .map(|_| ())
            .map_err(py_err)
    }

    /// Move and scale a placed object; returns its mask on the canvas.
    #[pyo3(signature = (region, dx = 0, dy = 0, scale = 1.0))]
    fn place(&mut self, region: &str, dx: i32, dy: i32, scale: f64) -> PyResult<Mask> {
        let t = AffineTransform::new(dx, dy, scale).map_err(py_err)?;
        let placed = self.0.adjust_placement(&RegionId::new(region), &t).map_err(py_err)?;
        Ok(Mask(placed.active_mask.clone()))
    }

    /// Final generation; one entry per sample, None where it failed.
    #[pyo3(signature = (engine, samples = 1, seed = None))]
    fn generate<'py>(
        &mut self,
        py: Python<'py>,
        engine: &Engine,
        samples: u32,
        seed: Option<u64>,
    ) -> PyResult<Vec<Option<Bound<'py, PyBytes>>>> {
        let run = self.0.generate(&engine.0, samples, seed).map_err(py_err)?;
        Ok(run
            .results
            .iter()
            .map(|r| r.image.as_ref().map(|b| bytes(py, b.as_bytes())))
            .collect())
    }

    /// The request of the latest generation.
    fn last_request<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.runs.last().map(|r| &r.request))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(Session)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Infer, auto-select the top candidate per object and generate.
#[pyfunction]
#[pyo3(signature = (engine, png, legend, seed = 7, samples = 1))]
fn run_headless<'py>(
    py: Python<'py>,
    engine: &Engine,
    png: &[u8],
    legend: &Bound<'_, PyAny>,
    seed: u64,
    samples: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let legend = legend_from(legend)?;
    let run = core_pipeline::run_headless(&engine.0, png, legend, seed, samples).map_err(py_err)?;
    let out = to_py(
        py,
        &serde_json::json!({
            "auto_selected": run.auto_selected,
            "space": run.session.space.as_ref().map(SemanticSpace::to_value),
            "request_digest": run.run.request_digest,
            "completion_attempts": run.completion.attempts,
        }),
    )?;
    let images: Vec<Option<Bound<'py, PyBytes>>> = run
        .run
        .results
        .iter()
        .map(|r| r.image.as_ref().map(|b| bytes(py, b.as_bytes())))
        .collect();
    out.set_item("images", images)?;
    Ok(out)
}

#[pymodule]
fn sketchplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mask>()?;
    m.add_class::<Engine>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(joint_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mask_difference, m)?)?;
    m.add_function(wrap_pyfunction!(canny, m)?)?;
    m.add_function(wrap_pyfunction!(canny_png, m)?)?;
    m.add_function(wrap_pyfunction!(build_plan, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_clip, m)?)?;
    m.add_function(wrap_pyfunction!(rank_scores, m)?)?;
    m.add_function(wrap_pyfunction!(palette, m)?)?;
    m.add_function(wrap_pyfunction!(run_headless, m)?)?;
    Ok(())
}
