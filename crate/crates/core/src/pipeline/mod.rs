//! Decompose-and-recompose orchestration: classify regions into things and
//! stuff, generate and rank single-object candidates, place the chosen
//! shapes, and assemble the final anchored, attention-weighted request.

mod candidates;
mod classify;
mod request;
mod session;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use candidates::{
    candidate_order, candidate_seed, combined_score, generate_candidates, normalize_clip, rank_scores, Candidate,
    CandidateBatch, SampleFailure,
};
pub use classify::{classify, CategoryList, ObjectKind};
pub use request::{
    plan_for, run_generation, GenerationRequest, RegionRole, RequestRegion, RequestRelation, SampleResult,
};
pub use session::{
    candidate_edges, CandidateSet, GenerationRun, InferOutcome, ObjectPlacement, Session, SketchState,
};

use crate::backends::Backends;
use crate::config::EngineConfig;
use crate::error::Result;
use crate::geometry::Legend;
use crate::lexicon::Lexicon;
use crate::recommend::{Completion, PromptTemplate};
use crate::semantic::RegionId;

/// Shared, read-only context for session operations.
#[derive(Clone)]
pub struct Engine {
    pub config: EngineConfig,
    pub backends: Backends,
    pub categories: CategoryList,
    pub lexicon: Arc<Lexicon>,
    pub template: PromptTemplate,
}

impl Engine {
    /// Backends built from `config.backends`.
    pub fn new(config: EngineConfig) -> Result<Self> {
        let backends = Backends::from_config(&config.backends)?;
        Self::with_backends(config, backends)
    }

    pub fn with_backends(config: EngineConfig, backends: Backends) -> Result<Self> {
        config.validate()?;
        let lexicon = match &config.recommend.lexicon {
            Some(path) => Lexicon::load(path)?,
            None => Lexicon::bundled_sample(),
        };
        Ok(Engine {
            config,
            backends,
            categories: CategoryList::default(),
            lexicon: Arc::new(lexicon),
            template: PromptTemplate::default(),
        })
    }

    /// Default configuration with mock backends.
    pub fn mock() -> Self {
        Self::with_backends(EngineConfig::default(), Backends::mock()).expect("default config is valid")
    }
}

/// Everything a headless run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlessRun {
    pub session: Session,
    pub completion: Completion,
    /// Regions whose top-ranked candidate was selected automatically.
    pub auto_selected: Vec<RegionId>,
    pub run: GenerationRun,
}

/// Sketch in, images out: infer the space, take the top candidate for every
/// thing region, then generate.
pub fn run_headless(engine: &Engine, sketch_png: &[u8], legend: Legend, seed: u64, samples: u32) -> Result<HeadlessRun> {
    let mut session = Session::new(seed);
    session.set_sketch(engine, sketch_png, legend)?;
    let completion = session.infer(engine)?.completion;
    let things: Vec<RegionId> = session
        .regions()
        .iter()
        .filter(|r| session.kinds.get(&r.id) == Some(&ObjectKind::Thing))
        .map(|r| r.id.clone())
        .collect();
    for id in &things {
        session.generate_candidates(engine, id)?;
        session.select_candidate(engine, id, 0, None)?;
    }
    let run = session.generate(engine, samples, None)?.clone();
    Ok(HeadlessRun {
        session,
        completion,
        auto_selected: things,
        run,
    })
}
