//! Deterministic stand-ins for the model services. Outputs are pure
//! functions of the inputs (and seed); call logs are kept for inspection
//! only and never influence results.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{ImageFormat, Rgb, RgbImage};
use rand::Rng;
use serde_json::{Map, Value};

use super::{ChatBackend, ChatRequest, DiffusionBackend, DiffusionJob, EmbeddingBackend, Segmentation, SegmentationBackend};
use crate::error::{BackendFailure, Error, Result};
use crate::geometry::RasterMask;
use crate::recommend::{find_json_objects, FORMAT_MARKER};
use crate::seed::{rng_from_seed, stable_hash};

const WHITE: [u8; 3] = [255, 255, 255];
const ANCHOR_INK: [u8; 3] = [40, 40, 40];

/// What a mock diffusion call was asked to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusionCall {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub seed: u64,
    pub regions: usize,
    pub has_anchor: bool,
    pub has_plan: bool,
}

/// Draws one organic blob per region mask, centered on the mask centroid,
/// onto a white canvas. Shape jitter and color are keyed by prompt and seed.
#[derive(Debug, Default)]
pub struct MockDiffusion {
    log: Mutex<Vec<DiffusionCall>>,
    fail: bool,
}

impl MockDiffusion {
    pub fn new() -> Self {
        Self::default()
    }

    /// A backend whose every call fails with a retriable error.
    pub fn failing() -> Self {
        MockDiffusion {
            fail: true,
            ..Self::default()
        }
    }

    pub fn calls(&self) -> Vec<DiffusionCall> {
        self.log.lock().expect("log lock").clone()
    }
}

fn blob_color(prompt: &str) -> [u8; 3] {
    let h = stable_hash(&[b"color", prompt.as_bytes()]);
    let ch = |shift: u32| 48 + ((h >> shift) & 0xff) as u8 % 160;
    [ch(0), ch(8), ch(16)]
}

fn draw_blob(img: &mut RgbImage, center: (f64, f64), radii: (f64, f64), color: [u8; 3], seed: u64) {
    let mut rng = rng_from_seed(seed);
    let lobes = rng.random_range(2..=4) as f64;
    let wobble = rng.random_range(0.0..0.15);
    let phase = rng.random_range(0.0..TAU);
    let (w, h) = img.dimensions();
    let (rx, ry) = (radii.0.max(1.0), radii.1.max(1.0));
    let reach = 1.0 + wobble;
    let x0 = ((center.0 - rx * reach).floor().max(0.0)) as u32;
    let x1 = ((center.0 + rx * reach).ceil().min(w as f64)) as u32;
    let y0 = ((center.1 - ry * reach).floor().max(0.0)) as u32;
    let y1 = ((center.1 + ry * reach).ceil().min(h as f64)) as u32;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = (x as f64 + 0.5 - center.0) / rx;
            let dy = (y as f64 + 0.5 - center.1) / ry;
            let r = dx.hypot(dy);
            let limit = 1.0 + wobble * (lobes * dy.atan2(dx) + phase).sin();
            if r <= limit {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("encoding into memory cannot fail");
    out.into_inner()
}

impl DiffusionBackend for MockDiffusion {
    fn generate(&self, job: &DiffusionJob) -> Result<Vec<u8>> {
        job.validate()?;
        self.log.lock().expect("log lock").push(DiffusionCall {
            prompt: job.prompt.clone(),
            width: job.width,
            height: job.height,
            steps: job.steps,
            seed: job.seed,
            regions: job.regions.len(),
            has_anchor: job.anchor.is_some(),
            has_plan: job.weight_plan.is_some(),
        });
        if self.fail {
            return Err(Error::backend("diffusion", BackendFailure::Retriable, "mock diffusion is down"));
        }

        let (w, h) = (job.width, job.height);
        let mut img = RgbImage::from_pixel(w, h, Rgb(WHITE));
        let canvas = RasterMask::rect(w, h, w / 4, h / 4, w - w / 4, h - h / 4)?;
        let whole = [(canvas, job.prompt.as_str())];
        let regions: Vec<(RasterMask, &str)> = if job.regions.is_empty() {
            whole.to_vec()
        } else {
            job.regions.iter().map(|r| (r.mask.clone(), r.prompt.as_str())).collect()
        };
        for (i, (mask, prompt)) in regions.iter().enumerate() {
            let (Some(centroid), Some(bbox)) = (mask.centroid(), mask.bbox()) else {
                continue;
            };
            let seed = stable_hash(&[prompt.as_bytes(), &job.seed.to_le_bytes(), &(i as u64).to_le_bytes()]);
            let mut rng = rng_from_seed(seed);
            let half = (bbox.width() as f64 / 2.0, bbox.height() as f64 / 2.0);
            let jitter = (
                rng.random_range(-0.05..=0.05) * bbox.width() as f64,
                rng.random_range(-0.05..=0.05) * bbox.height() as f64,
            );
            let radii = (half.0 * rng.random_range(0.55..1.05), half.1 * rng.random_range(0.55..1.05));
            draw_blob(
                &mut img,
                (centroid.0 + jitter.0, centroid.1 + jitter.1),
                radii,
                blob_color(prompt),
                rng.random(),
            );
        }
        if let Some(anchor) = &job.anchor {
            let edges = RasterMask::from_png(anchor.as_bytes())?;
            if edges.dims() == (w, h) {
                for (i, _) in edges.bits().iter().enumerate().filter(|(_, &b)| b) {
                    img.put_pixel(i as u32 % w, i as u32 / w, Rgb(ANCHOR_INK));
                }
            }
        }
        Ok(encode_rgb(&img))
    }
}

/// Picks the 4-connected non-white component with the largest overlap with
/// the hint (ties: larger component, then first in scan order).
#[derive(Debug, Default, Clone, Copy)]
pub struct MockSegmentation;

impl SegmentationBackend for MockSegmentation {
    fn extract(&self, image_png: &[u8], hint: &RasterMask) -> Result<Segmentation> {
        let img = image::load_from_memory_with_format(image_png, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("segmentation input: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if (w, h) != hint.dims() {
            return Err(Error::invalid(format!(
                "image {w}x{h} and hint {}x{} differ",
                hint.width(),
                hint.height()
            )));
        }
        let fg: Vec<bool> = img.pixels().map(|p| p.0 != WHITE).collect();
        let mut label = vec![usize::MAX; fg.len()];
        let mut best: Option<(usize, usize, Vec<usize>)> = None;
        let mut next = 0;
        for start in 0..fg.len() {
            if !fg[start] || label[start] != usize::MAX {
                continue;
            }
            let mut members = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = next;
            while let Some(i) = queue.pop_front() {
                members.push(i);
                let (x, y) = (i % w as usize, i / w as usize);
                let mut visit = |j: usize| {
                    if fg[j] && label[j] == usize::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w as usize {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w as usize);
                }
                if y + 1 < h as usize {
                    visit(i + w as usize);
                }
            }
            next += 1;
            let overlap = members.iter().filter(|&&i| hint.bits()[i]).count();
            let better = match &best {
                None => overlap > 0,
                Some((o, n, _)) => overlap > *o || (overlap == *o && members.len() > *n),
            };
            if better {
                best = Some((overlap, members.len(), members));
            }
        }
        let mut mask = RasterMask::new(w, h)?;
        match best {
            Some((_, _, members)) => {
                for i in members {
                    mask.set(i as u32 % w, i as u32 / w, true);
                }
                Ok(Segmentation { mask, empty: false })
            }
            None => Ok(Segmentation { mask, empty: true }),
        }
    }
}

pub const EMBEDDING_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Character-trigram hashing projection, L2-normalized.
pub fn trigram_embedding(text: &str) -> Vec<f32> {
    let padded: Vec<char> = format!(" {} ", text.trim().to_lowercase()).chars().collect();
    let mut v = vec![0f32; EMBEDDING_DIM];
    for tri in padded.windows(3) {
        let s: String = tri.iter().collect();
        v[(fnv1a(s.as_bytes()) % EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MockEmbedding;

impl EmbeddingBackend for MockEmbedding {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        Ok(trigram_embedding(text))
    }

    /// Pseudo similarity in the typical raw CLIP range `[0.15, 0.35)`.
    fn clip_score(&self, image_png: &[u8], text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot score empty text"));
        }
        let h = stable_hash(&[b"clip", image_png, text.as_bytes()]);
        Ok(0.15 + 0.2 * (h >> 11) as f64 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ChatFault {
    #[default]
    None,
    /// Every completion is malformed.
    Always,
    /// The first `n` completions are malformed.
    FirstN(usize),
}

/// Fills the format example embedded in the prompt with deterministic
/// phrases, wrapped in reasoning prose and a fenced JSON block.
#[derive(Debug, Default)]
pub struct MockChat {
    fault: ChatFault,
    max_request_bytes: Option<usize>,
    calls: AtomicUsize,
}

const ATTRIBUTES: [&str; 8] = [
    "bright colors",
    "detailed texture",
    "soft edges",
    "small",
    "large",
    "wooden",
    "shiny",
    "fluffy",
];
const STATES: [&str; 6] = ["standing", "still", "resting", "sitting", "moving", "leaning"];
const BACKGROUNDS: [&str; 4] = ["park", "street", "meadow", "living room"];
const BACKGROUND_ATTRS: [&str; 4] = ["sunny", "quiet", "green grass", "warm tones"];
const RELATIONS: [&str; 5] = ["next to", "beside", "in front of", "behind", "looking at"];
const OBJECTS: [&str; 4] = ["person", "dog", "car", "tree"];

fn pick<'a>(list: &[&'a str], key: &[&[u8]]) -> &'a str {
    list[(stable_hash(key) % list.len() as u64) as usize]
}

fn is_blank(v: Option<&Value>) -> bool {
    v.and_then(Value::as_str).is_none_or(|s| s.trim().is_empty())
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(mut self, fault: ChatFault) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_max_request_bytes(mut self, max: usize) -> Self {
        self.max_request_bytes = Some(max);
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fill(template: &Value) -> Value {
        let mut doc = template.clone();
        let mut types: Map<String, Value> = Map::new();
        if let Some(singles) = doc.get_mut("single_object").and_then(Value::as_object_mut) {
            for (id, entry) in singles.iter_mut() {
                let Some(entry) = entry.as_object_mut() else { continue };
                let background = id == "background";
                if is_blank(entry.get("type")) {
                    let t = if background {
                        pick(&BACKGROUNDS, &[b"bg"])
                    } else {
                        pick(&OBJECTS, &[id.as_bytes()])
                    };
                    entry.insert("type".into(), t.into());
                }
                let t = entry["type"].as_str().unwrap_or_default().to_string();
                if is_blank(entry.get("attribute")) {
                    let a = if background {
                        pick(&BACKGROUND_ATTRS, &[t.as_bytes()]).to_string()
                    } else {
                        format!(
                            "{}, {}",
                            pick(&ATTRIBUTES[..4], &[t.as_bytes(), b"a"]),
                            pick(&ATTRIBUTES[4..], &[t.as_bytes(), b"b"])
                        )
                    };
                    entry.insert("attribute".into(), a.into());
                }
                if !background && is_blank(entry.get("state")) {
                    entry.insert("state".into(), pick(&STATES, &[t.as_bytes()]).into());
                }
                types.insert(id.clone(), Value::String(t));
            }
        }
        let type_of = |id: &str| {
            types
                .get(id)
                .and_then(Value::as_str)
                .unwrap_or(id)
                .to_string()
        };
        if let Some(crosses) = doc.get_mut("cross_object").and_then(Value::as_array_mut) {
            for entry in crosses.iter_mut().filter_map(Value::as_object_mut) {
                let subj = type_of(entry.get("subject").and_then(Value::as_str).unwrap_or_default());
                let obj = type_of(entry.get("object").and_then(Value::as_str).unwrap_or_default());
                if is_blank(entry.get("direction")) {
                    entry.insert("direction".into(), format!("facing to the {obj}").into());
                }
                if is_blank(entry.get("relationship")) {
                    let rel = pick(&RELATIONS, &[subj.as_bytes(), obj.as_bytes()]);
                    entry.insert("relationship".into(), format!("{subj} {rel} {obj}").into());
                }
            }
        }
        if let Some(overall) = doc.get_mut("overall").and_then(Value::as_object_mut) {
            for (key, value) in [
                ("lighting", "natural daylight"),
                ("camera", "wide-angle shot"),
                ("style", "realistic"),
            ] {
                if is_blank(overall.get(key)) {
                    overall.insert(key.into(), value.into());
                }
            }
        }
        doc
    }
}

impl ChatBackend for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let size = request.text.len() + request.image_png.as_bytes().len();
        if let Some(max) = self.max_request_bytes {
            if size > max {
                return Err(Error::backend(
                    "chat",
                    BackendFailure::Permanent,
                    format!("request of {size} bytes exceeds limit of {max}"),
                ));
            }
        }
        let faulty = match self.fault {
            ChatFault::None => false,
            ChatFault::Always => true,
            ChatFault::FirstN(n) => call < n,
        };
        if faulty {
            return Ok("I could not read the sketch clearly, the output is {unfinished".into());
        }

        let after = request
            .text
            .find(FORMAT_MARKER)
            .map(|i| &request.text[i + FORMAT_MARKER.len()..])
            .unwrap_or(&request.text);
        let template = find_json_objects(after)
            .into_iter()
            .filter_map(|block| serde_json::from_str::<Value>(block).ok())
            .find(|v| v.get("single_object").is_some())
            .ok_or_else(|| {
                Error::backend(
                    "chat",
                    BackendFailure::Permanent,
                    "mock chat found no format example in the request",
                )
            })?;
        let filled = Self::fill(&template);
        let regions = filled["single_object"].as_object().map_or(0, |m| m.len());
        Ok(format!(
            "Let me analyze the mask first. There are {regions} entries {{including the background}} \
             and each object sits in its own colored area, so I infer the details from size and position.\n\n\
             ```json\n{}\n```\n",
            serde_json::to_string_pretty(&filled).expect("json value serializes")
        ))
    }
}
