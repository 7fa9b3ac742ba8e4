use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::{judge_heuristic, judge_llm, Rubric, RubricWeights, HEURISTIC_JUDGE};
use super::llm::ChatClient;
use super::questions::{Category, Question};
use super::retrieve::{context_patch, retrieve};
use super::router::{hit_rate, route_llm, route_rules, Plan};
use super::stats::{cohens_d_deltas, paired_bootstrap_p};
use super::synth::synthesize;
use crate::error::{Error, Result};
use crate::fleet::{ModalityIndex, ReferenceCard};
use crate::ndcore::stats::pearson;
use crate::synthgen::{PatchCorpus, Source};

/// Absolute delta below which a pair counts as tied.
pub const TIE_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    GeneralistOnly,
    FleetOnly,
    GeneralistPlusFleet,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::GeneralistOnly, Condition::FleetOnly, Condition::GeneralistPlusFleet];

    pub fn name(self) -> &'static str {
        match self {
            Condition::GeneralistOnly => "generalist_only",
            Condition::FleetOnly => "fleet_only",
            Condition::GeneralistPlusFleet => "generalist_plus_fleet",
        }
    }

    /// Sources queried under this condition for a routed plan.
    pub fn sources(self, plan: Option<&Plan>) -> Option<Vec<Source>> {
        match self {
            Condition::GeneralistOnly => Some(vec![Source::Generalist]),
            Condition::FleetOnly => plan.map(|p| p.modalities.iter().map(|&m| Source::Specialist(m)).collect()),
            Condition::GeneralistPlusFleet => plan.map(|p| {
                let mut s: Vec<Source> = p.modalities.iter().map(|&m| Source::Specialist(m)).collect();
                s.push(Source::Generalist);
                s
            }),
        }
    }
}

/// (treatment, baseline) pairs; deltas are treatment − baseline.
pub const CONTRASTS: [(Condition, Condition); 3] = [
    (Condition::FleetOnly, Condition::GeneralistOnly),
    (Condition::GeneralistPlusFleet, Condition::GeneralistOnly),
    (Condition::GeneralistPlusFleet, Condition::FleetOnly),
];

pub fn contrast_name(c: (Condition, Condition)) -> String {
    format!("{}_vs_{}", c.0.name(), c.1.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub nprobe: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub weights: RubricWeights,
    pub default_patch: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 5, nprobe: 4, bootstrap: 10_000, seed: 0, weights: RubricWeights::default(), default_patch: None }
    }
}

pub enum Router<'a> {
    Rules,
    Llm(&'a dyn ChatClient),
}

pub enum Judge<'a> {
    Heuristic,
    Llm(&'a dyn ChatClient),
}

impl Judge<'_> {
    pub fn name(&self) -> String {
        match self {
            Judge::Heuristic => HEURISTIC_JUDGE.to_string(),
            Judge::Llm(c) => c.name(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Judge::Heuristic => "heuristic (non-semantic; validates the statistics only)",
            Judge::Llm(_) => "llm",
        }
    }
}

pub struct EvalInputs<'a> {
    pub questions: &'a [Question],
    pub cards: &'a [ReferenceCard],
    pub indexes: &'a BTreeMap<Source, ModalityIndex>,
    pub corpus: &'a PatchCorpus,
    pub router: Router<'a>,
    pub synthesizer: Option<&'a dyn ChatClient>,
    pub judges: Vec<Judge<'a>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub question_id: String,
    pub category: Category,
    pub condition: Condition,
    pub judge: String,
    pub rubric: Rubric,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub question_id: String,
    pub context_patch: usize,
    pub plan: Plan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub question_id: String,
    pub condition: Option<Condition>,
    pub judge: Option<String>,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastStats {
    pub judge: String,
    pub contrast: String,
    pub category: String,
    pub n: usize,
    pub mean_delta: Option<f64>,
    pub cohens_d: Option<f64>,
    pub p: Option<f64>,
    pub note: Option<String>,
    pub improved: usize,
    pub declined: usize,
    pub tied: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeAgreement {
    pub judge_a: String,
    pub judge_b: String,
    /// Pearson correlation of per-question deltas.
    pub delta_correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterJudge {
    pub contrast: String,
    pub d_by_judge: BTreeMap<String, Option<f64>>,
    pub agreement: Vec<JudgeAgreement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conditions: Vec<Condition>,
    pub judges: BTreeMap<String, String>,
    pub config: EvalConfig,
    pub question_count: usize,
    pub hit_rate: Option<f64>,
    pub plans: Vec<PlanRecord>,
    pub scores: Vec<ScoreRecord>,
    pub contrasts: Vec<ContrastStats>,
    pub inter_judge: Vec<InterJudge>,
    pub failures: Vec<Failure>,
}

struct QuestionOutcome {
    plan: Option<PlanRecord>,
    scores: Vec<ScoreRecord>,
    failures: Vec<Failure>,
}

fn run_question(q: &Question, inputs: &EvalInputs<'_>, cfg: &EvalConfig) -> QuestionOutcome {
    let mut out = QuestionOutcome { plan: None, scores: Vec::new(), failures: Vec::new() };
    let fail = |condition: Option<Condition>, judge: Option<String>, stage: &str, e: &Error| Failure {
        question_id: q.id.clone(),
        condition,
        judge,
        stage: stage.to_string(),
        message: e.to_string(),
    };
    let context = match context_patch(inputs.corpus, q.location, cfg.default_patch) {
        Ok(c) => c,
        Err(e) => {
            out.failures.push(fail(None, None, "context", &e));
            return out;
        }
    };
    let plan = match &inputs.router {
        Router::Rules => route_rules(&q.text, inputs.cards),
        Router::Llm(c) => route_llm(&q.text, inputs.cards, *c),
    };
    let plan = match plan {
        Ok(p) => Some(p),
        Err(e) => {
            out.failures.push(fail(None, None, "route", &e));
            None
        }
    };
    for cond in Condition::ALL {
        let Some(sources) = cond.sources(plan.as_ref()) else { continue };
        let answer = retrieve(&sources, inputs.indexes, inputs.corpus, context, cfg.k, cfg.nprobe)
            .map_err(|e| ("retrieve", e))
            .and_then(|b| synthesize(q, &b, inputs.synthesizer).map_err(|e| ("synthesize", e)));
        let answer = match answer {
            Ok(a) => a,
            Err((stage, e)) => {
                out.failures.push(fail(Some(cond), None, stage, &e));
                continue;
            }
        };
        for judge in &inputs.judges {
            let score = match judge {
                Judge::Heuristic => judge_heuristic(q, &answer, Some(&inputs.corpus.labels[context]), cfg.weights),
                Judge::Llm(c) => judge_llm(q, &answer, *c, cfg.weights),
            };
            match score {
                Ok(s) => out.scores.push(ScoreRecord {
                    question_id: q.id.clone(),
                    category: q.category,
                    condition: cond,
                    judge: s.judge,
                    rubric: s.rubric,
                    total: s.total,
                }),
                Err(e) => out.failures.push(fail(Some(cond), Some(judge.name()), "judge", &e)),
            }
        }
    }
    out.plan = plan.map(|plan| PlanRecord { question_id: q.id.clone(), context_patch: context, plan });
    out
}

fn summarize(judge: &str, contrast: String, category: String, deltas: &[f64], b: usize, seed: u64) -> ContrastStats {
    let improved = deltas.iter().filter(|&&d| d > TIE_THRESHOLD).count();
    let declined = deltas.iter().filter(|&&d| d < -TIE_THRESHOLD).count();
    let mean_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
    let (cohens_d, note) = match cohens_d_deltas(deltas) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ContrastStats {
        judge: judge.to_string(),
        contrast,
        category,
        n: deltas.len(),
        mean_delta,
        cohens_d,
        p: paired_bootstrap_p(deltas, b, seed).ok(),
        note,
        improved,
        declined,
        tied: deltas.len() - improved - declined,
    }
}

/// Per-question deltas of one judge and contrast, in question order.
fn deltas_for(scores: &[ScoreRecord], questions: &[Question], judge: &str, c: (Condition, Condition)) -> Vec<(usize, f64)> {
    let mut table: BTreeMap<(&str, Condition), f64> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.judge == judge) {
        table.insert((s.question_id.as_str(), s.condition), s.total);
    }
    questions
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let t = table.get(&(q.id.as_str(), c.0))?;
            let b = table.get(&(q.id.as_str(), c.1))?;
            Some((i, t - b))
        })
        .collect()
}

/// Runs every question under the three conditions and aggregates the
/// paired statistics. Failures are recorded, never dropped.
pub fn evaluate(inputs: &EvalInputs<'_>, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.weights.validate()?;
    if inputs.judges.is_empty() {
        return Err(Error::invalid("evaluation needs at least one judge"));
    }
    let mut judges = BTreeMap::new();
    for j in &inputs.judges {
        if judges.insert(j.name(), j.kind().to_string()).is_some() {
            return Err(Error::invalid(format!("judge name `{}` is used twice", j.name())));
        }
    }
    let outcomes: Vec<QuestionOutcome> = inputs.questions.par_iter().map(|q| run_question(q, inputs, cfg)).collect();
    let mut plans = Vec::new();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        plans.extend(o.plan);
        scores.extend(o.scores);
        failures.extend(o.failures);
    }
    let planned: Vec<Question> =
        inputs.questions.iter().filter(|q| plans.iter().any(|p| p.question_id == q.id)).cloned().collect();
    let plan_list: Vec<Plan> = plans.iter().map(|p| p.plan.clone()).collect();

    let mut contrasts = Vec::new();
    let mut inter_judge = Vec::new();
    for (ci, &c) in CONTRASTS.iter().enumerate() {
        let mut d_by_judge = BTreeMap::new();
        let mut per_judge: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
        for judge in judges.keys() {
            let deltas = deltas_for(&scores, inputs.questions, judge, c);
            let all: Vec<f64> = deltas.iter().map(|d| d.1).collect();
            let overall = summarize(judge, contrast_name(c), "all".into(), &all, cfg.bootstrap, cfg.seed ^ ((ci as u64) << 8));
            d_by_judge.insert(judge.clone(), overall.cohens_d);
            contrasts.push(overall);
            for (ki, cat) in Category::ALL.iter().enumerate() {
                let sub: Vec<f64> =
                    deltas.iter().filter(|(i, _)| inputs.questions[*i].category == *cat).map(|d| d.1).collect();
                let seed = cfg.seed ^ (((ci as u64) << 8) | (ki as u64 + 1));
                contrasts.push(summarize(judge, contrast_name(c), cat.name().into(), &sub, cfg.bootstrap, seed));
            }
            per_judge.insert(judge.clone(), deltas);
        }
        let names: Vec<&String> = per_judge.keys().collect();
        let mut agreement = Vec::new();
        for a in 0..names.len() {
            for b in a + 1..names.len() {
                let (da, db) = (&per_judge[names[a]], &per_judge[names[b]]);
                let (xa, xb): (Vec<f64>, Vec<f64>) = da
                    .iter()
                    .filter_map(|&(i, x)| db.iter().find(|p| p.0 == i).map(|p| (x, p.1)))
                    .unzip();
                agreement.push(JudgeAgreement {
                    judge_a: names[a].clone(),
                    judge_b: names[b].clone(),
                    delta_correlation: pearson(&xa, &xb).ok(),
                });
            }
        }
        inter_judge.push(InterJudge { contrast: contrast_name(c), d_by_judge, agreement });
    }
    Ok(EvalReport {
        conditions: Condition::ALL.to_vec(),
        judges,
        config: cfg.clone(),
        question_count: inputs.questions.len(),
        hit_rate: hit_rate(&plan_list, &planned),
        plans,
        scores,
        contrasts,
        inter_judge,
        failures,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `report.json` and `scores.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("scores.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_record([
            "question_id", "category", "condition", "judge", "grounding", "accuracy", "completeness", "coherence",
            "utility", "total",
        ])?;
        for s in &self.scores {
            let r = s.rubric.as_array().map(|x| x.to_string());
            w.write_record([
                s.question_id.as_str(),
                s.category.name(),
                s.condition.name(),
                s.judge.as_str(),
                &r[0],
                &r[1],
                &r[2],
                &r[3],
                &r[4],
                &s.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
