//! Planning engine that turns color-coded region sketches and short prompts
//! into spatially anchored image-generation requests.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`] raster masks, affine placement, canny edges, anchor composition
//! * [`semantic`] the structured per-region / cross-region / overall prompt model
//! * [`lexicon`] attribute and relationship dictionaries used to ground prompting
//! * [`recommend`] multimodal prompt rendering and completion parsing
//! * [`attention`] cross-attention amplification / suppression plans
//! * [`backends`] diffusion, segmentation, embedding and chat clients (HTTP + mock)
//! * [`pipeline`] candidate generation, ranking, placement and request assembly

pub mod attention;
pub mod backends;
pub mod blob;
pub mod config;
pub mod error;
pub mod geometry;
pub mod lexicon;
pub mod pipeline;
pub mod recommend;
pub mod seed;
pub mod semantic;

pub use error::{Error, Result};
