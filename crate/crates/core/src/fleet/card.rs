use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryProfile;
use crate::interp::{DimensionDictionary, MetricKind, SkillEntry, SkillMatrix};
use crate::synthgen::{Modality, Source};

pub const CARD_SCHEMA_VERSION: u32 = 1;
/// Prompt budget for one serialized card.
pub const CARD_CHAR_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalText {
    pub physical_signal: String,
    pub caveat: String,
    /// Terms a question may use when it needs this sensor.
    pub keywords: Vec<String>,
}

pub fn default_signal(m: Modality) -> SignalText {
    let (signal, caveat, keywords): (&str, &str, &[&str]) = match m {
        Modality::Optical => (
            "Ten-band surface reflectance: vegetation greenness, surface wetness and bright bare ground.",
            "Cannot see through clouds (sar can). Sees the surface only, with no direct temperature signal.",
            &["reflectance", "green", "canopy", "vegetation", "land cover", "forest", "grassland", "barren", "dense", "bright"],
        ),
        Modality::Sar => (
            "Two-polarisation radar backscatter in dB: surface roughness, soil moisture and vegetation volume.",
            "Sees through clouds, unlike optical. Speckle makes single pixels noisy and there is no temperature signal.",
            &[
                "radar", "backscatter", "rough", "moisture", "wet", "water", "flood", "saturated", "inundat", "standing water",
            ],
        ),
        Modality::Thermal => (
            "Day and night land-surface temperature: warmth, elevation lapse and evaporative cooling of wet ground.",
            "Cannot see through clouds. Measures skin temperature, not vegetation type.",
            &["temperature", "warm", "hot", "cool", "cold", "heat", "night", "day", "evaporative cooling", "climate"],
        ),
        Modality::Phenology => (
            "Four seasonal reflectance composites: green-up amplitude tracks precipitation and seasonality.",
            "Cannot see through clouds in any composite. Weak on terrain and soil texture.",
            &["season", "green up", "greening", "rain", "precipitation", "monsoon", "cycle", "growth", "climate"],
        ),
        Modality::Toposoil => (
            "Elevation, slope, aspect and three soil properties (texture, clay, organic fraction).",
            "Static terrain and soil only: no seasonal, weather or vegetation signal.",
            &[
                "elevation", "slope", "steep", "terrain", "altitude", "high", "flat", "mountain", "soil texture", "clay",
                "lowland", "plain",
            ],
        ),
    };
    SignalText {
        physical_signal: signal.into(),
        caveat: caveat.into(),
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardDimension {
    pub dim: usize,
    pub rho: Option<f64>,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardGeometry {
    pub global_pr: f64,
    pub mle_id: f64,
    pub local_n80_mean: f64,
    pub embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardSkill {
    pub metric: MetricKind,
    pub value: f64,
}

/// Compact, versioned summary of one modality for the router.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCard {
    pub schema_version: u32,
    pub modality: Modality,
    pub physical_signal: String,
    pub caveat: String,
    pub keywords: Vec<String>,
    pub summary: String,
    pub dimension_dictionary: BTreeMap<String, Vec<CardDimension>>,
    pub geometry: CardGeometry,
    pub skill: BTreeMap<String, CardSkill>,
}

fn round4(v: f64) -> f64 {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn make_card(
    modality: Modality,
    dictionary: &DimensionDictionary,
    profile: &GeometryProfile,
    skill: &SkillMatrix,
    signal: &SignalText,
) -> Result<ReferenceCard> {
    let source = Source::Specialist(modality);
    let rows: Vec<_> = skill.entries.iter().filter(|e| e.source == source).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("no skill entries for {modality}")));
    }
    let skill_map: BTreeMap<String, CardSkill> = rows
        .iter()
        .map(|e| (e.variable.name().to_string(), CardSkill { metric: e.metric, value: round4(e.value) }))
        .collect();
    let dims = dictionary
        .variables
        .iter()
        .map(|(v, entries)| {
            let list = entries
                .iter()
                .map(|d| CardDimension { dim: d.dim, rho: d.spearman.map(round4), importance: round4(d.importance) })
                .collect();
            (v.clone(), list)
        })
        .collect();
    let mut best: Option<&SkillEntry> = None;
    let mut worst: Option<&SkillEntry> = None;
    for e in rows.iter().copied().filter(|e| e.metric == MetricKind::R2) {
        if best.is_none_or(|b| e.value > b.value) {
            best = Some(e);
        }
        if worst.is_none_or(|w| e.value < w.value) {
            worst = Some(e);
        }
    }
    let mut summary = format!(
        "{modality}: intrinsic dimension {:.1}, local n80 {:.1} of {} dims.",
        profile.mle_id, profile.local_n80_mean, profile.embedding_dim
    );
    if let (Some(b), Some(w)) = (best, worst) {
        summary.push_str(&format!(
            " Best continuous variable {} (R² {:.2}); weakest {} (R² {:.2}).",
            b.variable.name(),
            b.value,
            w.variable.name(),
            w.value
        ));
    }
    let card = ReferenceCard {
        schema_version: CARD_SCHEMA_VERSION,
        modality,
        physical_signal: signal.physical_signal.clone(),
        caveat: signal.caveat.clone(),
        keywords: signal.keywords.clone(),
        summary,
        dimension_dictionary: dims,
        geometry: CardGeometry {
            global_pr: round4(profile.global_pr),
            mle_id: round4(profile.mle_id),
            local_n80_mean: round4(profile.local_n80_mean),
            embedding_dim: profile.embedding_dim,
        },
        skill: skill_map,
    };
    card.validate()?;
    Ok(card)
}

impl ReferenceCard {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CARD_SCHEMA_VERSION {
            return Err(Error::Parse { what: "reference card", detail: format!("schema version {}", self.schema_version) });
        }
        let d = self.geometry.embedding_dim;
        if let Some(bad) = self.dimension_dictionary.values().flatten().find(|x| x.dim >= d) {
            return Err(Error::Parse { what: "reference card", detail: format!("dimension {} is outside 0..{d}", bad.dim) });
        }
        let len = self.to_json().chars().count();
        if len > CARD_CHAR_LIMIT {
            return Err(Error::Overlength { modality: self.modality.to_string(), len, limit: CARD_CHAR_LIMIT });
        }
        Ok(())
    }

    /// Deterministic compact JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("card serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let card: ReferenceCard = serde_json::from_str(text)?;
        card.validate()?;
        Ok(card)
    }
}
