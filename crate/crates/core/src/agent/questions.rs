use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{Modality, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SingleModality,
    MultiModality,
    SarFavorable,
    GeneralistFavorable,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::SingleModality, Category::MultiModality, Category::SarFavorable, Category::GeneralistFavorable];

    pub fn name(self) -> &'static str {
        match self {
            Category::SingleModality => "single_modality",
            Category::MultiModality => "multi_modality",
            Category::SarFavorable => "sar_favorable",
            Category::GeneralistFavorable => "generalist_favorable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// Grid row/col of the context patch.
    pub location: Option<(usize, usize)>,
    pub category: Category,
    /// Physically appropriate sensors; empty when any answer will do.
    pub expected: Vec<Modality>,
    /// Variables a good answer quantifies.
    #[serde(default)]
    pub variables: Vec<Variable>,
}

impl Question {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid(format!("question {} has empty text", self.id)));
        }
        let mut seen = self.expected.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.expected.len() {
            return Err(Error::invalid(format!("question {} repeats an expected modality", self.id)));
        }
        Ok(())
    }
}

use Modality::{Optical as O, Phenology as P, Sar as S, Thermal as T, Toposoil as G};
use Variable::{
    Aridity as AR, Climate as CL, Elevation as EL, LandCover as LC, Precipitation as PR, SoilMoisture as SM,
    Temperature as TE,
};

type Row = (Category, &'static str, &'static [Modality], &'static [Variable]);

const BUILTIN: [Row; 40] = [
    (Category::SingleModality, "How warm is the land surface at this location during the day?", &[T], &[TE]),
    (Category::SingleModality, "What is the elevation and slope here?", &[G], &[EL]),
    (Category::SingleModality, "How hot do nights get at this site compared with nearby terrain?", &[T], &[TE]),
    (Category::SingleModality, "Is this patch steep mountainous terrain or a flat plain?", &[G], &[EL]),
    (Category::SingleModality, "How much annual rainfall does this area receive?", &[P], &[PR]),
    (Category::SingleModality, "How strongly does the vegetation green up over the seasons here?", &[P], &[PR]),
    (Category::SingleModality, "What soil texture and clay content does this ground have?", &[G], &[SM]),
    (Category::SingleModality, "How green and dense is the canopy seen in the reflectance here?", &[O], &[LC]),
    (Category::SingleModality, "What is the surface temperature regime of this patch?", &[T], &[TE]),
    (Category::SingleModality, "Does the seasonal precipitation cycle drive vegetation growth at this site?", &[P], &[PR]),
    (Category::MultiModality, "How do elevation and temperature together shape conditions at this site?", &[G, T], &[EL, TE]),
    (Category::MultiModality, "Is this a wet lowland with dense vegetation?", &[S, G, O], &[SM, EL, LC]),
    (Category::MultiModality, "How do rainfall and land surface temperature combine into aridity here?", &[P, T], &[AR, PR, TE]),
    (Category::MultiModality, "What land cover grows on this terrain and how high is it?", &[O, G], &[LC, EL]),
    (Category::MultiModality, "Are soil moisture and vegetation greenness linked at this patch?", &[S, O], &[SM, LC]),
    (Category::MultiModality, "How does the seasonal greening relate to terrain elevation here?", &[P, G], &[PR, EL]),
    (Category::MultiModality, "Is this a cool high-altitude site with sparse vegetation?", &[T, G, O], &[TE, EL, LC]),
    (Category::MultiModality, "Does evaporative cooling from wet soil lower the surface temperature here?", &[T, S], &[TE, SM]),
    (Category::MultiModality, "Which climate zone does this site fall in given its warmth and rainfall?", &[T, P], &[CL, TE, PR]),
    (Category::MultiModality, "How dry is this landscape considering rainfall, heat and soil?", &[P, T, G], &[AR, PR, TE]),
    (Category::SarFavorable, "Is there standing water beneath the cloud cover after the storm?", &[S], &[SM]),
    (Category::SarFavorable, "How wet is the soil here under persistent overcast skies?", &[S], &[SM]),
    (Category::SarFavorable, "Can we map surface roughness at night through the clouds?", &[S], &[SM]),
    (Category::SarFavorable, "Has the ground flooded under the storm clouds this week?", &[S], &[SM]),
    (Category::SarFavorable, "What is the soil moisture during the cloudy monsoon?", &[S], &[SM]),
    (Category::SarFavorable, "Is the wetland saturated beneath the overcast?", &[S], &[SM, LC]),
    (Category::SarFavorable, "Are fields waterlogged after heavy rain with clouds still overhead?", &[S], &[SM]),
    (Category::SarFavorable, "Can radar backscatter reveal the moisture of this patch at night?", &[S], &[SM]),
    (Category::SarFavorable, "Under thick cloud, how rough and wet is the surface?", &[S], &[SM]),
    (Category::SarFavorable, "Is the soil saturated under the storm clouds at this site?", &[S], &[SM]),
    (Category::GeneralistFavorable, "Give an overall description of the landscape at this location.", &[], &[LC, EL, TE]),
    (Category::GeneralistFavorable, "Find places broadly similar to this one across all characteristics.", &[], &[]),
    (Category::GeneralistFavorable, "Summarize the general environmental conditions here.", &[], &[TE, PR, SM]),
    (Category::GeneralistFavorable, "What kind of place is this overall: climate, terrain and vegetation?", &[T, G, O], &[CL, EL, LC]),
    (Category::GeneralistFavorable, "Provide a comprehensive profile of this site.", &[], &[]),
    (Category::GeneralistFavorable, "How does this location compare overall with typical sites in the region?", &[], &[]),
    (Category::GeneralistFavorable, "Characterize the general climate regime of this area.", &[T, P], &[CL]),
    (Category::GeneralistFavorable, "Describe the overall land cover and terrain setting of this place.", &[O, G], &[LC, EL]),
    (Category::GeneralistFavorable, "Give a holistic summary of moisture, heat and terrain here.", &[S, T, G], &[SM, TE, EL]),
    (Category::GeneralistFavorable, "What broad environmental class does this patch belong to?", &[], &[CL, LC]),
];

/// The built-in 40-question set, ten per category. Locations follow a fixed
/// lattice over a `rows × cols` world.
pub fn builtin_questions(rows: usize, cols: usize) -> Vec<Question> {
    BUILTIN
        .iter()
        .enumerate()
        .map(|(i, &(category, text, expected, variables))| Question {
            id: format!("q{:02}", i + 1),
            text: text.to_string(),
            location: Some(((31 + 97 * i) % rows.max(1), (211 + 53 * i) % cols.max(1))),
            category,
            expected: expected.to_vec(),
            variables: variables.to_vec(),
        })
        .collect()
}

pub fn save_questions(path: &Path, questions: &[Question]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(questions)?).map_err(|e| Error::io(path, e))
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let qs: Vec<Question> = serde_json::from_str(&text)?;
    for q in &qs {
        q.validate()?;
    }
    Ok(qs)
}
