use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::llm::{extract_json, ChatClient, Role};
use super::questions::Question;
use crate::error::{Error, Result};
use crate::fleet::ReferenceCard;
use crate::synthgen::{Modality, Source, Variable};

/// Structured retrieval plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub modalities: Vec<Modality>,
    pub include_generalist: bool,
    pub rationale: String,
    #[serde(default)]
    pub router: String,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub retries: usize,
}

impl Plan {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::invalid("plan selects no modality"));
        }
        let mut m = self.modalities.clone();
        m.sort();
        m.dedup();
        if m.len() != self.modalities.len() {
            return Err(Error::invalid("plan repeats a modality"));
        }
        Ok(())
    }

    /// Specialists in plan order, then the generalist when included.
    pub fn sources(&self) -> Vec<Source> {
        let mut s: Vec<Source> = self.modalities.iter().map(|&m| Source::Specialist(m)).collect();
        if self.include_generalist {
            s.push(Source::Generalist);
        }
        s
    }

    pub fn selects(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }
}

const CLOUD_TERMS: [&str; 5] = ["cloud", "overcast", "storm", "fog", "haze"];
const GENERALIST_TERMS: [&str; 14] = [
    "overall", "general", "broad", "similar", "summar", "comprehensive", "holistic", "profile", "compare", "typical",
    "describe", "descript", "characteriz", "environmental class",
];
const CLOUD_BONUS: f64 = 2.0;
const SKILL_WEIGHT: f64 = 0.25;
const MIN_SCORE: f64 = 1.0;
const RELATIVE_CUT: f64 = 0.75;

fn variable_terms(v: Variable) -> &'static [&'static str] {
    match v {
        Variable::SoilMoisture => &["moisture", "wet", "saturated", "waterlogged", "flood"],
        Variable::Precipitation => &["rain", "precipitation", "monsoon"],
        Variable::Temperature => &["temperature", "warm", "hot", "cool", "cold", "heat"],
        Variable::Elevation => &["elevation", "altitude", "slope", "steep", "high", "terrain"],
        Variable::Aridity => &["arid", "dry", "drought", "aridity"],
        Variable::LandCover => &["land cover", "vegetation", "canopy", "forest", "grassland", "wetland"],
        Variable::Climate => &["climate"],
    }
}

/// Lower-case words of `text` joined by single spaces.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Phrases match on word boundaries; a single word also matches as a word
/// prefix ("flood" in "flooded").
pub fn term_matches(normalized: &str, term: &str) -> bool {
    if term.contains(' ') {
        format!(" {normalized} ").contains(&format!(" {term} "))
    } else {
        normalized.split(' ').any(|w| w.starts_with(term))
    }
}

/// Variables a question text mentions, in reporting order.
pub fn mentioned_variables(text: &str) -> Vec<Variable> {
    let n = normalize(text);
    Variable::ALL.into_iter().filter(|&v| variable_terms(v).iter().any(|t| term_matches(&n, t))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleTrace {
    pub scores: BTreeMap<Modality, f64>,
    pub matched: BTreeMap<Modality, Vec<String>>,
}

/// Scores every card against the question: one point per matched card
/// keyword, ±2 for cloud questions by the card's cloud caveat, plus a small
/// skill bonus for mentioned variables.
pub fn rule_scores(question: &str, cards: &[ReferenceCard]) -> RuleTrace {
    let n = normalize(question);
    let cloudy = CLOUD_TERMS.iter().any(|t| term_matches(&n, t));
    let vars = mentioned_variables(question);
    let mut scores = BTreeMap::new();
    let mut matched = BTreeMap::new();
    for card in cards {
        let hits: Vec<String> = card.keywords.iter().filter(|k| term_matches(&n, k)).cloned().collect();
        let mut s = hits.len() as f64;
        if cloudy {
            let caveat = card.caveat.to_lowercase();
            if caveat.contains("cannot see through clouds") {
                s -= CLOUD_BONUS;
            } else if caveat.contains("sees through clouds") {
                s += CLOUD_BONUS;
            }
        }
        for v in &vars {
            if let Some(k) = card.skill.get(v.name()) {
                s += SKILL_WEIGHT * k.value.clamp(0.0, 1.0);
            }
        }
        scores.insert(card.modality, s);
        matched.insert(card.modality, hits);
    }
    RuleTrace { scores, matched }
}

/// Deterministic keyword and capability router.
pub fn route_rules(question: &str, cards: &[ReferenceCard]) -> Result<Plan> {
    if question.trim().is_empty() {
        return Err(Error::invalid("cannot route an empty question"));
    }
    for m in Modality::ALL {
        if !cards.iter().any(|c| c.modality == m) {
            return Err(Error::invalid(format!("no reference card for {m}")));
        }
    }
    let trace = rule_scores(question, cards);
    let best = trace.scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = MIN_SCORE.max(RELATIVE_CUT * best);
    let mut modalities: Vec<Modality> = Modality::ALL.into_iter().filter(|m| trace.scores[m] >= cut).collect();
    if modalities.is_empty() {
        let top = Modality::ALL.into_iter().find(|m| trace.scores[m] == best).expect("scores are finite");
        modalities.push(top);
    }
    let n = normalize(question);
    let include_generalist = GENERALIST_TERMS.iter().any(|t| term_matches(&n, t));
    let rationale = modalities
        .iter()
        .map(|m| format!("{m} {:.2} [{}]", trace.scores[m], trace.matched[m].join(", ")))
        .collect::<Vec<_>>()
        .join("; ");
    let plan = Plan { modalities, include_generalist, rationale, router: "rules".into(), fallback: false, retries: 0 };
    plan.validate()?;
    Ok(plan)
}

pub const ROUTER_SYSTEM: &str = "You route questions about an environmental site to sensor-specific embedding indexes. \
Reply with one JSON object: {\"modalities\": [names], \"include_generalist\": bool, \"rationale\": string}. \
Valid names: optical, sar, thermal, phenology, toposoil. Select at least one.";

pub fn router_prompt(question: &str, cards: &[ReferenceCard]) -> String {
    let cards: Vec<String> = cards.iter().map(|c| c.to_json()).collect();
    format!("Reference cards:\n{}\n\nQuestion: {question}", cards.join("\n"))
}

#[derive(Deserialize)]
struct PlanReply {
    modalities: Vec<Modality>,
    #[serde(default)]
    include_generalist: bool,
    #[serde(default)]
    rationale: String,
}

/// Parses a router reply into a plan.
pub fn parse_plan(reply: &str) -> Result<Plan> {
    let body = extract_json(reply).ok_or_else(|| Error::Parse { what: "router reply", detail: "no JSON object".into() })?;
    let r: PlanReply =
        serde_json::from_str(body).map_err(|e| Error::Parse { what: "router reply", detail: e.to_string() })?;
    let plan = Plan {
        modalities: r.modalities,
        include_generalist: r.include_generalist,
        rationale: r.rationale,
        router: "llm".into(),
        fallback: false,
        retries: 0,
    };
    plan.validate()?;
    Ok(plan)
}

/// Endpoint router: one retry on a failed call or unparseable reply, then the rule router
/// with `fallback` set.
pub fn route_llm(question: &str, cards: &[ReferenceCard], client: &dyn ChatClient) -> Result<Plan> {
    let prompt = router_prompt(question, cards);
    let mut last = String::new();
    for attempt in 0..2 {
        match client.complete(Role::Router, ROUTER_SYSTEM, &prompt) {
            Ok(reply) => match parse_plan(&reply) {
                Ok(mut plan) => {
                    plan.retries = attempt;
                    return Ok(plan);
                }
                Err(e) => last = e.to_string(),
            },
            Err(e) => last = e.to_string(),
        }
    }
    log::warn!("router endpoint failed ({last}); falling back to rules");
    let mut plan = route_rules(question, cards)?;
    plan.fallback = true;
    plan.rationale = format!("fallback after endpoint failure: {last}; {}", plan.rationale);
    Ok(plan)
}

/// Fraction of questions whose plan selects an expected modality; questions
/// with no expectation are left out. `None` when nothing is scorable.
pub fn hit_rate(plans: &[Plan], questions: &[Question]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, q) in plans.iter().zip(questions) {
        if q.expected.is_empty() {
            continue;
        }
        total += 1;
        if q.expected.iter().any(|&m| p.selects(m)) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
