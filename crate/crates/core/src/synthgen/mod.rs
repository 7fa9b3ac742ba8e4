//! Seeded synthetic world and multi-sensor patch corpus.

pub mod corpus;
pub mod modality;
pub mod render;
pub mod world;

pub use corpus::{sample_patches, CorpusConfig, LabelRecord, PatchCorpus, PatchInfo, Variable};
pub use modality::{Modality, Source};
pub use render::{climate_class, land_cover_class, render, NoiseConfig, Window, CLIMATE_CLASSES, CLIMATE_NAMES, LAND_COVER_CLASSES, LAND_COVER_NAMES};
pub use world::{generate_world, Field, LatentWorld, WorldConfig};
