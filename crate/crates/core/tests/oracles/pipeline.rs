use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchplan_core::backends::{
    Backends, ChatBackend, ChatRequest, DiffusionBackend, DiffusionJob, EmbeddingBackend, MockChat,
    MockDiffusion, MockEmbedding, Segmentation, SegmentationBackend,
};
use sketchplan_core::config::{CandidateConfig, EngineConfig, RecommendConfig};
use sketchplan_core::error::BackendFailure;
use sketchplan_core::geometry::{render_sketch_png, Legend, PaletteColor, RasterMask};
use sketchplan_core::lexicon::{Lexicon, PhraseKind, SampleConfig};
use sketchplan_core::pipeline::{generate_candidates, rank_scores, Engine, Session};
use sketchplan_core::{Error, Result};

const W: u32 = 256;

fn color(i: usize) -> PaletteColor {
    PaletteColor::from_index(i).unwrap()
}

/// Girl (red disc), cat (blue box) and sky (green band) on a 256x256 canvas.
pub fn scene() -> (Vec<u8>, Legend) {
    let girl = RasterMask::from_fn(W, W, |x, y| (x as f64 + 0.5 - 70.0).hypot(y as f64 + 0.5 - 150.0) <= 40.0).unwrap();
    let cat = RasterMask::rect(W, W, 150, 170, 220, 220).unwrap();
    let sky = RasterMask::rect(W, W, 0, 0, W, 60).unwrap();
    let png = render_sketch_png(W, W, &[(color(1), &sky), (color(0), &girl), (color(3), &cat)]).unwrap();
    let legend = Legend::new()
        .with(color(0), "girl", Some("girl"))
        .unwrap()
        .with(color(3), "cat", Some("cat"))
        .unwrap()
        .with(color(1), "sky", Some("sky"))
        .unwrap();
    (png, legend)
}

#[derive(Default)]
struct RecordingChat {
    inner: MockChat,
    texts: Mutex<Vec<String>>,
}

impl ChatBackend for RecordingChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.texts.lock().unwrap().push(request.text.clone());
        self.inner.complete(request)
    }
}

pub fn candidate_jobs_follow_constants() {
    let defaults = CandidateConfig::default();
    assert_eq!(
        (defaults.width, defaults.height, defaults.steps, defaults.batch, defaults.top_k),
        (512, 512, 6, 12, 4)
    );

    let diffusion = Arc::new(MockDiffusion::new());
    let backends = Backends {
        diffusion: diffusion.clone(),
        ..Backends::mock()
    };
    let engine = Engine::with_backends(EngineConfig::default(), backends).unwrap();
    let (png, legend) = scene();
    let mut session = Session::new(21);
    session.set_sketch(&engine, &png, legend).unwrap();
    session.infer(&engine).unwrap();
    let before = diffusion.calls().len();
    let set = session.generate_candidates(&engine, &"girl".into()).unwrap().clone();
    let calls = &diffusion.calls()[before..];
    assert_eq!(calls.len(), 12);
    for call in calls {
        assert_eq!((call.width, call.height, call.steps), (512, 512, 6));
        assert_eq!(call.regions, 1);
    }
    assert_eq!(set.candidates.len(), 4);
    assert_eq!(set.scored, 12);
}

pub fn lexicon_draws_ten() {
    assert_eq!(SampleConfig::default().k, 10);
    assert_eq!(RecommendConfig::default().k, 10);

    let mut lexicon = Lexicon::new();
    for i in 0..25 {
        lexicon.add(PhraseKind::Attribute, "girl", &format!("trait{i:02}"), 1 + i).unwrap();
        lexicon.add(PhraseKind::Attribute, "cat", &format!("fur{i:02}"), 1).unwrap();
    }
    lexicon.add(PhraseKind::Attribute, "sky", "blue", 3).unwrap();
    let chat = Arc::new(RecordingChat::default());
    let backends = Backends {
        chat: chat.clone(),
        ..Backends::mock()
    };
    let mut engine = Engine::with_backends(EngineConfig::default(), backends).unwrap();
    engine.lexicon = Arc::new(lexicon);
    let (png, legend) = scene();
    let mut session = Session::new(5);
    session.set_sketch(&engine, &png, legend).unwrap();
    session.infer(&engine).unwrap();

    let texts = chat.texts.lock().unwrap();
    let prompt = &texts[0];
    assert_eq!(prompt.matches("\"girl: trait").count(), 10);
    assert_eq!(prompt.matches("\"cat: fur").count(), 10);
    assert_eq!(prompt.matches("\"sky: blue\"").count(), 1);
}

/// Position order by counting, for each member, how many others beat it.
fn brute_force_order(scores: &[(f64, f64)], w_iou: f64, w_clip: f64) -> Vec<usize> {
    let combined: Vec<f64> = scores.iter().map(|(i, c)| w_iou * i + w_clip * c).collect();
    let beats = |a: usize, b: usize| {
        combined[a] > combined[b]
            || (combined[a] == combined[b] && scores[a].0 > scores[b].0)
            || (combined[a] == combined[b] && scores[a].0 == scores[b].0 && a < b)
    };
    let mut slots = vec![usize::MAX; scores.len()];
    for i in 0..scores.len() {
        let rank = (0..scores.len()).filter(|&j| j != i && beats(j, i)).count();
        assert_eq!(slots[rank], usize::MAX, "ranks collide");
        slots[rank] = i;
    }
    slots
}

fn coarse(rng: &mut ChaCha8Rng) -> f64 {
    // Few distinct values so ties on both keys are common.
    rng.random_range(0..5) as f64 / 4.0
}

pub fn rank_scores_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.random_range(1..=16);
        let scores: Vec<(f64, f64)> = (0..n).map(|_| (coarse(&mut rng), coarse(&mut rng))).collect();
        let got: Vec<usize> = rank_scores(&scores, 0.5, 0.5).into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, brute_force_order(&scores, 0.5, 0.5), "{scores:?}");
    }
}

/// Diffusion output is the seed; segmentation and scoring look it up.
struct Scripted {
    table: HashMap<u64, Option<(usize, f64)>>,
}

fn seed_of(png: &[u8]) -> u64 {
    u64::from_le_bytes(png.try_into().unwrap())
}

impl DiffusionBackend for Scripted {
    fn generate(&self, job: &DiffusionJob) -> Result<Vec<u8>> {
        match self.table[&job.seed] {
            Some(_) => Ok(job.seed.to_le_bytes().to_vec()),
            None => Err(Error::backend("diffusion", BackendFailure::Retriable, "scripted failure")),
        }
    }
}

impl SegmentationBackend for Scripted {
    fn extract(&self, png: &[u8], hint: &RasterMask) -> Result<Segmentation> {
        let (pixels, _) = self.table[&seed_of(png)].unwrap();
        let w = hint.width() as usize;
        let mask = RasterMask::from_fn(hint.width(), hint.height(), |x, y| y as usize * w + (x as usize) < pixels)?;
        Ok(Segmentation {
            empty: pixels == 0,
            mask,
        })
    }
}

impl EmbeddingBackend for Scripted {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        MockEmbedding.embed(text)
    }

    fn clip_score(&self, png: &[u8], _text: &str) -> Result<f64> {
        Ok(self.table[&seed_of(png)].unwrap().1)
    }
}

pub fn batches_rank_like_brute_force() {
    let cfg = CandidateConfig::default();
    let area = (cfg.width * cfg.height) as usize;
    let region = RasterMask::rect(64, 64, 0, 0, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for round in 0..50u64 {
        let seeds: Vec<u64> = (0..cfg.batch as u64).map(|i| round * 100 + i).collect();
        let entries: Vec<Option<(usize, f64)>> = seeds
            .iter()
            .enumerate()
            .map(|(i, _)| {
                // Keep at least one member alive.
                if i > 0 && rng.random_bool(0.15) {
                    None
                } else {
                    Some((rng.random_range(0..5) * area / 4, 0.15 + 0.05 * rng.random_range(0..4) as f64))
                }
            })
            .collect();
        let scripted = Arc::new(Scripted {
            table: seeds.iter().copied().zip(entries.iter().copied()).collect(),
        });
        let backends = Backends {
            diffusion: scripted.clone(),
            segmentation: scripted.clone(),
            embedding: scripted,
            chat: Arc::new(MockChat::new()),
        };
        let batch = generate_candidates(&region, "a dog", &backends, &cfg, &seeds).unwrap();

        let alive: Vec<usize> = (0..seeds.len()).filter(|&i| entries[i].is_some()).collect();
        let clips: Vec<f64> = alive.iter().map(|&i| entries[i].unwrap().1).collect();
        let (lo, hi) = clips.iter().fold((f64::MAX, f64::MIN), |(l, h), &c| (l.min(c), h.max(c)));
        let pairs: Vec<(f64, f64)> = alive
            .iter()
            .zip(&clips)
            .map(|(&i, &c)| {
                let iou = entries[i].unwrap().0 as f64 / area as f64;
                (iou, if hi > lo { (c - lo) / (hi - lo) } else { 1.0 })
            })
            .collect();
        let expected: Vec<usize> = brute_force_order(&pairs, cfg.w_iou, cfg.w_clip)
            .into_iter()
            .take(cfg.top_k)
            .map(|p| alive[p])
            .collect();
        let got: Vec<usize> = batch.ranked.iter().map(|c| c.batch_index).collect();
        assert_eq!(got, expected, "round {round}");
        assert_eq!(batch.scored, alive.len());
        assert_eq!(batch.failures.len(), seeds.len() - alive.len());
        for c in &batch.ranked {
            let p = alive.iter().position(|&i| i == c.batch_index).unwrap();
            assert_eq!((c.iou, c.clip_norm), pairs[p]);
        }
    }
}
