use serde::{Deserialize, Serialize};

use super::llm::{extract_json, ChatClient, Role};
use super::questions::Question;
use super::synth::cited_sources;
use crate::error::{Error, Result};
use crate::synthgen::{LabelRecord, Source, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RubricWeights {
    pub grounding: f64,
    pub accuracy: f64,
    pub completeness: f64,
    pub coherence: f64,
    pub utility: f64,
}

impl Default for RubricWeights {
    fn default() -> Self {
        Self { grounding: 0.2, accuracy: 0.2, completeness: 0.2, coherence: 0.2, utility: 0.2 }
    }
}

impl RubricWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.grounding, self.accuracy, self.completeness, self.coherence, self.utility]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("rubric weights {w:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }
}

/// Rubric values in [1, 5]: grounding, scientific accuracy, completeness,
/// coherence, practical utility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rubric {
    pub grounding: f64,
    pub accuracy: f64,
    pub completeness: f64,
    pub coherence: f64,
    pub utility: f64,
}

impl Rubric {
    pub fn as_array(&self) -> [f64; 5] {
        [self.grounding, self.accuracy, self.completeness, self.coherence, self.utility]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub judge: String,
    pub rubric: Rubric,
    pub weights: RubricWeights,
    pub total: f64,
}

impl JudgeScore {
    pub fn new(judge: impl Into<String>, rubric: Rubric, weights: RubricWeights) -> Result<Self> {
        weights.validate()?;
        if rubric.as_array().iter().any(|&r| !(1.0..=5.0).contains(&r)) {
            return Err(Error::invalid(format!("rubric values {:?} must lie in [1, 5]", rubric.as_array())));
        }
        let mut total = 0.0;
        for (w, r) in weights.as_array().iter().zip(rubric.as_array()) {
            total += w * r;
        }
        Ok(Self { judge: judge.into(), rubric, weights, total })
    }
}

pub const HEURISTIC_JUDGE: &str = "heuristic";

/// Error scale per continuous variable for the heuristic accuracy item.
fn error_scale(v: Variable) -> f64 {
    match v {
        Variable::SoilMoisture => 0.05,
        Variable::Precipitation => 250.0,
        Variable::Temperature => 4.0,
        Variable::Elevation => 400.0,
        Variable::Aridity => 0.3,
        Variable::LandCover | Variable::Climate => 1.0,
    }
}

/// Estimate lines `- name: value ...` of an offline answer.
pub fn parse_estimates(answer: &str) -> Vec<(Variable, f64)> {
    let mut out = Vec::new();
    for line in answer.lines() {
        let Some(rest) = line.strip_prefix("- ") else { continue };
        let Some((name, tail)) = rest.split_once(": ") else { continue };
        let Ok(v) = name.parse::<Variable>() else { continue };
        let value = if v.is_categorical() {
            tail.split_once("(class ").and_then(|(_, t)| t.split(')').next()).and_then(|t| t.parse::<f64>().ok())
        } else {
            tail.split_whitespace().next().and_then(|t| t.parse::<f64>().ok())
        };
        if let Some(x) = value {
            out.push((v, x));
        }
    }
    out
}

/// Deterministic, non-semantic scorer that exercises the statistics path.
/// Accuracy compares estimates with the context patch's own labels.
pub fn judge_heuristic(
    question: &Question,
    answer: &str,
    reference: Option<&LabelRecord>,
    weights: RubricWeights,
) -> Result<JudgeScore> {
    let estimates = parse_estimates(answer);
    let grade = |frac: f64| 1.0 + 4.0 * frac.clamp(0.0, 1.0);
    let grounding = if question.variables.is_empty() {
        grade(if estimates.is_empty() { 0.0 } else { 1.0 })
    } else {
        let cited = question.variables.iter().filter(|v| estimates.iter().any(|e| e.0 == **v)).count();
        grade(cited as f64 / question.variables.len() as f64)
    };
    let accuracy = match reference {
        Some(truth) if !estimates.is_empty() => {
            let focus: Vec<&(Variable, f64)> = if question.variables.is_empty() {
                estimates.iter().collect()
            } else {
                estimates.iter().filter(|e| question.variables.contains(&e.0)).collect()
            };
            if focus.is_empty() {
                1.0
            } else {
                let err = focus
                    .iter()
                    .map(|&&(v, x)| {
                        let t = truth.get(v);
                        if v.is_categorical() {
                            f64::from(u8::from(x != t))
                        } else {
                            ((x - t).abs() / error_scale(v)).min(1.0)
                        }
                    })
                    .sum::<f64>()
                    / focus.len() as f64;
                grade(1.0 - err)
            }
        }
        _ => 3.0,
    };
    let cited = cited_sources(answer);
    let completeness = if question.expected.is_empty() {
        grade(cited.len() as f64 / 2.0)
    } else {
        let hit = question.expected.iter().filter(|&&m| cited.contains(&Source::Specialist(m))).count();
        grade(hit as f64 / question.expected.len() as f64)
    };
    let chars = answer.chars().count() as f64;
    let coherence = if chars < 80.0 { grade(chars / 80.0) } else { grade(1.0 - ((chars - 2000.0) / 2000.0).max(0.0)) };
    let utility = 0.5 * (accuracy + completeness);
    JudgeScore::new(HEURISTIC_JUDGE, Rubric { grounding, accuracy, completeness, coherence, utility }, weights)
}

pub const JUDGE_SYSTEM: &str = "You grade answers to environmental questions. Score each item from 1 to 5: \
grounding (claims tied to cited retrievals), accuracy (scientific correctness), completeness, coherence, \
utility (practical usefulness). Reply with one JSON object with exactly these five numeric keys.";

/// Parses a judge reply into a rubric.
pub fn parse_rubric(reply: &str) -> Result<Rubric> {
    let body = extract_json(reply).ok_or_else(|| Error::Parse { what: "judge reply", detail: "no JSON object".into() })?;
    serde_json::from_str(body).map_err(|e| Error::Parse { what: "judge reply", detail: e.to_string() })
}

/// Endpoint judge with one retry on an unusable reply.
pub fn judge_llm(question: &Question, answer: &str, client: &dyn ChatClient, weights: RubricWeights) -> Result<JudgeScore> {
    let prompt = format!("Question: {}\n\nAnswer:\n{answer}", question.text);
    let mut last = None;
    for _ in 0..2 {
        let attempt = client
            .complete(Role::Judge, JUDGE_SYSTEM, &prompt)
            .and_then(|r| parse_rubric(&r))
            .and_then(|rubric| JudgeScore::new(client.name(), rubric, weights));
        match attempt {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("two attempts"))
}
