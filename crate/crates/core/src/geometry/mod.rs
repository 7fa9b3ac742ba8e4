//! Manifold characterisation of embedding clouds.

pub mod cca;
pub mod mle;
pub mod profile;
pub mod spectral;

pub use cca::{cca, CcaResult};
pub use mle::{dedup_rows, mle_id};
pub use profile::{geometry_profile, write_profile, GeometryProfile, ProbeRecord, DEFAULT_K, DEFAULT_PROBES};
pub use spectral::{dominant_dimension, local_spectrum, n80, participation_ratio, pr_from_eigs};
