//! HTTP session API, on-disk session store and headless runner for the
//! sketchplan engine.

pub mod headless;
pub mod http;
pub mod ops;
pub mod store;

use std::path::Path;

use sketchplan_core::backends::Backends;
use sketchplan_core::config::EngineConfig;
use sketchplan_core::pipeline::Engine;

/// Which implementation serves the model backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendChoice {
    Mock,
    Http,
}

pub fn load_config(path: Option<&Path>) -> sketchplan_core::Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => Ok(EngineConfig::default()),
    }
}

pub fn build_engine(config: EngineConfig, backend: BackendChoice) -> sketchplan_core::Result<Engine> {
    match backend {
        BackendChoice::Mock => Engine::with_backends(config, Backends::mock()),
        BackendChoice::Http => Engine::new(config),
    }
}
