//! Flood surface reconstruction, wave synthesis, meshing and view planning.

pub mod config;
pub mod displaywall;
pub mod engine;
pub mod geom;
pub mod heightfield;
pub mod ingest;
pub mod meshgen;
pub mod pack;
pub mod query;
pub mod scenario;
pub mod synth;
pub mod viewplan;
pub mod wavesynth;
