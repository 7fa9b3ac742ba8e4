//! Per-modality vector indexes and reference cards.

pub mod card;
pub mod index;
pub mod kmeans;

pub use card::{default_signal, make_card, CardDimension, CardGeometry, CardSkill, ReferenceCard, SignalText, CARD_CHAR_LIMIT, CARD_SCHEMA_VERSION};
pub use index::{build_index, build_ivf, Hit, InvertedLists, Metric, ModalityIndex};
pub use kmeans::{kmeans, KMeans, KMEANS_ITERATIONS};
