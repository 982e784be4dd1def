use std::cmp::Ordering;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, DiffusionJob, RegionPrompt};
use crate::blob::Blob;
use crate::config::CandidateConfig;
use crate::error::{Error, Result};
use crate::geometry::{iou, RasterMask};
use crate::seed::derive_seed;

/// One low-step single-object generation with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the generated batch.
    pub batch_index: usize,
    pub seed: u64,
    pub image: Blob,
    /// Object mask at candidate resolution.
    pub extracted_mask: RasterMask,
    /// Segmentation found nothing overlapping the region.
    pub extraction_empty: bool,
    pub iou: f64,
    pub clip_score: f64,
    pub clip_norm: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    /// Best first, at most `top_k`.
    pub ranked: Vec<Candidate>,
    /// Batch members that failed at any stage.
    pub failures: Vec<SampleFailure>,
    /// Number of successfully scored batch members.
    pub scored: usize,
}

/// Min-max normalization within the batch; a batch with no spread maps to 1.
pub fn normalize_clip(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .map(|s| if hi > lo { (s - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

pub fn combined_score(iou: f64, clip_norm: f64, w_iou: f64, w_clip: f64) -> f64 {
    w_iou * iou + w_clip * clip_norm
}

/// Order of `(iou, clip_norm)` pairs: combined score descending, then iou
/// descending, then position ascending. Returns positions with their scores.
pub fn rank_scores(scores: &[(f64, f64)], w_iou: f64, w_clip: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &(iou, clip))| (i, combined_score(iou, clip, w_iou, w_clip)))
        .collect();
    order.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| scores[b.0].0.total_cmp(&scores[a.0].0))
            .then(a.0.cmp(&b.0))
    });
    order
}

/// Seed of member `index` of round `version` for `region`.
pub fn candidate_seed(session_seed: u64, region: &str, version: u64, index: usize) -> u64 {
    derive_seed(session_seed, &format!("candidate:{region}:{version}"), index as u64)
}

struct Scored {
    index: usize,
    seed: u64,
    image: Vec<u8>,
    mask: RasterMask,
    empty: bool,
    iou: f64,
    clip: f64,
}

/// Run `f(0..n)` on scoped threads and collect results in index order.
pub(crate) fn fan_out<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..n).map(|i| s.spawn(move || f(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Generate, segment and score a batch of single-object images for one
/// region and keep the best `top_k`.
///
/// `region_mask` is in sketch coordinates and is resized to the candidate
/// resolution. Members that fail are reported in `failures`; the call fails
/// only when no member could be scored.
pub fn generate_candidates(
    region_mask: &RasterMask,
    prompt: &str,
    backends: &Backends,
    cfg: &CandidateConfig,
    seeds: &[u64],
) -> Result<CandidateBatch> {
    if prompt.trim().is_empty() {
        return Err(Error::invalid("candidate prompt is empty"));
    }
    if region_mask.is_empty() {
        return Err(Error::invalid("region mask is empty"));
    }
    if seeds.len() != cfg.batch {
        return Err(Error::invalid(format!("{} seeds for a batch of {}", seeds.len(), cfg.batch)));
    }
    let hint = region_mask.resize_nearest(cfg.width, cfg.height)?;

    let score = |index: usize| -> Result<Scored> {
        let seed = seeds[index];
        let mut job = DiffusionJob::new(prompt, cfg.width, cfg.height, cfg.steps, seed);
        job.regions.push(RegionPrompt {
            mask: hint.clone(),
            prompt: prompt.to_string(),
            negative_prompt: String::new(),
        });
        let image = backends.diffusion.generate(&job)?;
        let seg = backends.segmentation.extract(&image, &hint)?;
        if seg.mask.dims() != hint.dims() {
            return Err(Error::invalid("segmentation mask size differs from the image"));
        }
        let overlap = iou(&seg.mask, &hint)?;
        let clip = backends.embedding.clip_score(&image, prompt)?;
        Ok(Scored {
            index,
            seed,
            image,
            empty: seg.empty,
            mask: seg.mask,
            iou: overlap,
            clip,
        })
    };

    let mut scored = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (i, outcome) in fan_out(cfg.batch, score).into_iter().enumerate() {
        match outcome {
            Ok(s) => scored.push(s),
            Err(e) => {
                failures.push(SampleFailure {
                    index: i,
                    seed: seeds[i],
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if scored.is_empty() {
        return Err(first_error.unwrap_or_else(|| Error::invalid("empty candidate batch")));
    }

    let norms = normalize_clip(&scored.iter().map(|s| s.clip).collect::<Vec<_>>());
    let pairs: Vec<(f64, f64)> = scored.iter().zip(&norms).map(|(s, &n)| (s.iou, n)).collect();
    let order = rank_scores(&pairs, cfg.w_iou, cfg.w_clip);
    let count = scored.len();
    let mut slots: Vec<Option<Scored>> = scored.into_iter().map(Some).collect();
    let ranked = order
        .into_iter()
        .take(cfg.top_k)
        .map(|(pos, combined)| {
            let s = slots[pos].take().expect("each position ranked once");
            Candidate {
                batch_index: s.index,
                seed: s.seed,
                image: Blob::new(s.image),
                extracted_mask: s.mask,
                extraction_empty: s.empty,
                iou: s.iou,
                clip_score: s.clip,
                clip_norm: norms[pos],
                combined,
            }
        })
        .collect();
    Ok(CandidateBatch {
        ranked,
        failures,
        scored: count,
    })
}

/// Total order used by [`rank_scores`], exposed for checking rankings.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.combined
        .total_cmp(&a.combined)
        .then_with(|| b.iou.total_cmp(&a.iou))
        .then(a.batch_index.cmp(&b.batch_index))
}
