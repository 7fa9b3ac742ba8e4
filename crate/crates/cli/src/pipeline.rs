//! Stage graph, artifact layout and idempotent execution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sensorfleet::agent::{
    builtin_questions, evaluate, hit_rate, load_questions, route_llm, route_rules, save_questions, ChatClient, EvalConfig,
    EvalInputs, EvalReport, HttpChatClient, Judge, Plan, Question, Router,
};
use sensorfleet::fleet::{build_ivf, default_signal, make_card, ModalityIndex, ReferenceCard};
use sensorfleet::geometry::{cca, dedup_rows, geometry_profile, write_profile, GeometryProfile};
use sensorfleet::interp::{
    dimension_dictionary, joint_gain, region_skill, skill_matrix, spatial_blocks, target_of, write_regions_csv,
    DictionaryConfig, DimensionDictionary, FoldAssignment, MetricKind, SkillMatrix,
};
use sensorfleet::jepa::{embed_corpus, train, Checkpoint};
use sensorfleet::ndcore::io::{read_tensor, write_tensor};
use sensorfleet::synthgen::{generate_world, sample_patches, Modality, PatchCorpus, Source, Variable};
use sensorfleet::Tensor;

use crate::config::{JudgeKind, RouterKind, RunConfig, SynthKind};
use crate::stamp::{check_outputs, hash_outputs, read_stamp, sha256_hex, versions, write_stamp, Stamp, CONFIG_COPY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Pretrain,
    Embed,
    Geometry,
    Interp,
    Compl,
    Index,
    Cards,
    Route,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Gen,
        Stage::Pretrain,
        Stage::Embed,
        Stage::Geometry,
        Stage::Interp,
        Stage::Compl,
        Stage::Index,
        Stage::Cards,
        Stage::Route,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Pretrain => "pretrain",
            Stage::Embed => "embed",
            Stage::Geometry => "geometry",
            Stage::Interp => "interp",
            Stage::Compl => "compl",
            Stage::Index => "index",
            Stage::Cards => "cards",
            Stage::Route => "route",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    /// Artifact directory under the run root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Gen => "corpus",
            Stage::Pretrain => "checkpoints",
            Stage::Embed => "embeddings",
            other => other.name(),
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Gen => &[],
            Pretrain => &[Gen],
            Embed => &[Gen, Pretrain],
            Geometry | Interp | Compl => &[Gen, Embed],
            Index => &[Embed],
            Cards => &[Geometry, Interp],
            Route => &[Cards],
            Eval => &[Gen, Index, Cards, Route],
            Report => &[Geometry, Interp, Compl, Eval],
        }
    }

    /// Per-stage stream tag mixed into the run seed.
    fn tag(self) -> u64 {
        Stage::ALL.iter().position(|&s| s == self).expect("stage is listed") as u64 + 1
    }

    /// The part of the config the stage reads.
    fn config_slice(self, cfg: &RunConfig) -> Value {
        match self {
            Stage::Gen => json!({ "seed": cfg.seed, "world": cfg.world, "corpus": cfg.corpus }),
            Stage::Pretrain => json!({ "seed": cfg.seed, "encoder": cfg.encoder, "train": cfg.train }),
            Stage::Embed | Stage::Cards | Stage::Report => json!({}),
            Stage::Geometry | Stage::Interp | Stage::Compl | Stage::Index => {
                json!({ "seed": cfg.seed, "world": cfg.world, "analysis": cfg.analysis })
            }
            Stage::Route => json!({ "world": cfg.world, "agent": cfg.agent }),
            Stage::Eval => json!({ "seed": cfg.seed, "agent": cfg.agent }),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// A failure attributed to the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {:#}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Stream seed for draw `idx` of a stage.
pub fn stage_seed(seed: u64, stage: Stage, idx: usize) -> u64 {
    seed ^ (stage.tag() << 40 | idx as u64)
}

fn stage_key(stage: Stage, cfg: &RunConfig, upstream: &BTreeMap<String, String>) -> String {
    let doc = json!({
        "stage": stage.name(),
        "config": stage.config_slice(cfg),
        "upstream": upstream,
        "versions": versions(),
    });
    sha256_hex(doc.to_string().as_bytes())
}

pub struct Pipeline {
    cfg: RunConfig,
    config_json: String,
    root: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Self {
        let config_json = cfg.to_pretty_json() + "\n";
        Self { cfg, config_json, root: root.into() }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir())
    }

    fn upstream_keys(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut keys = BTreeMap::new();
        for &up in stage.upstream() {
            let stamp = read_stamp(&self.dir(up))?
                .ok_or_else(|| anyhow!("needs `{}` artifacts in {}; run that stage first", up.name(), self.dir(up).display()))?;
            keys.insert(up.name().to_string(), stamp.stage_key);
        }
        Ok(keys)
    }

    /// Runs one stage unconditionally, replacing its directory.
    pub fn run_stage(&self, stage: Stage) -> Result<(), StageError> {
        self.run_inner(stage, false).map(|_| ()).map_err(|error| StageError { stage, error })
    }

    /// Every stage in order, skipping those whose recorded key and outputs
    /// still match.
    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>, StageError> {
        Stage::ALL
            .into_iter()
            .map(|s| self.run_inner(s, true).map(|o| (s, o)).map_err(|error| StageError { stage: s, error }))
            .collect()
    }

    fn run_inner(&self, stage: Stage, skip_done: bool) -> Result<Outcome> {
        let upstream = self.upstream_keys(stage)?;
        let key = stage_key(stage, &self.cfg, &upstream);
        let dir = self.dir(stage);
        if skip_done {
            if let Some(stamp) = read_stamp(&dir)? {
                if stamp.stage_key == key && check_outputs(&dir, &stamp).is_ok() {
                    log::info!("{}: up to date, skipped", stage.name());
                    return Ok(Outcome::Skipped);
                }
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(self.root.join(CONFIG_COPY), &self.config_json)?;
        let t0 = Instant::now();
        log::info!("{}: running", stage.name());
        self.execute(stage, &dir)?;
        fs::write(dir.join(CONFIG_COPY), &self.config_json)?;
        let stamp = Stamp {
            stage: stage.name().to_string(),
            stage_key: key,
            config_hash: sha256_hex(self.config_json.as_bytes()),
            seed: self.cfg.seed,
            versions: versions(),
            upstream,
            outputs: hash_outputs(&dir)?,
        };
        write_stamp(&dir, &stamp)?;
        log::info!("{}: done in {:.1}s", stage.name(), t0.elapsed().as_secs_f64());
        Ok(Outcome::Ran)
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<()> {
        match stage {
            Stage::Gen => self.gen(dir),
            Stage::Pretrain => self.pretrain(dir),
            Stage::Embed => self.embed(dir),
            Stage::Geometry => self.geometry(dir),
            Stage::Interp => self.interp(dir),
            Stage::Compl => self.compl(dir),
            Stage::Index => self.index(dir),
            Stage::Cards => self.cards(dir),
            Stage::Route => self.route(dir),
            Stage::Eval => self.eval(dir),
            Stage::Report => self.report(dir),
        }
    }

    fn extent(&self) -> (usize, usize) {
        (self.cfg.world.rows, self.cfg.world.cols)
    }

    fn corpus(&self) -> Result<PatchCorpus> {
        Ok(PatchCorpus::load(&self.dir(Stage::Gen))?)
    }

    fn embeddings(&self) -> Result<Vec<(Source, Tensor)>> {
        Source::ALL
            .into_iter()
            .map(|s| Ok((s, read_tensor(&self.dir(Stage::Embed).join(s.name()))?)))
            .collect()
    }

    fn folds(&self, corpus: &PatchCorpus) -> Result<FoldAssignment> {
        let a = &self.cfg.analysis;
        Ok(spatial_blocks(&corpus.locations(), self.extent(), a.block_rows, a.block_cols, a.folds)?)
    }

    fn cards_from_disk(&self) -> Result<Vec<ReferenceCard>> {
        Modality::ALL
            .into_iter()
            .map(|m| {
                let path = self.dir(Stage::Cards).join(format!("{}.json", m.name()));
                Ok(ReferenceCard::parse(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?)
            })
            .collect()
    }

    fn llm_client(&self, dir: &Path) -> Result<HttpChatClient> {
        HttpChatClient::from_env(self.cfg.agent.endpoint.clone(), Some(dir.join("llm_exchanges.jsonl")))
            .ok_or_else(|| anyhow!("an llm role is configured but FLEET_LLM_URL is not set"))
    }

    fn gen(&self, dir: &Path) -> Result<()> {
        let world = generate_world(self.cfg.seed, &self.cfg.world)?;
        let corpus = sample_patches(&world, &self.cfg.corpus, stage_seed(self.cfg.seed, Stage::Gen, 0))?;
        corpus.verify_labels(&world)?;
        corpus.save(dir)?;
        Ok(())
    }

    fn pretrain(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        for (i, s) in Source::ALL.into_iter().enumerate() {
            let t0 = Instant::now();
            let tc = self.cfg.train_for(stage_seed(self.cfg.seed, Stage::Pretrain, i));
            let ckpt = train(&corpus, s, &self.cfg.encoder_for(s), &tc).with_context(|| format!("training {s}"))?;
            ckpt.save(&dir.join(s.name()))?;
            log::info!("pretrain: {s} trained for {} epochs in {:.1}s", tc.epochs, t0.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn embed(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        for s in Source::ALL {
            let ckpt = Checkpoint::load(&self.dir(Stage::Pretrain).join(s.name()))?;
            write_tensor(&dir.join(s.name()), &embed_corpus(&ckpt, &corpus)?)?;
        }
        Ok(())
    }

    fn geometry(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let locations = corpus.locations();
        let a = &self.cfg.analysis;
        let mut summary = BTreeMap::new();
        for (i, (s, e)) in self.embeddings()?.into_iter().enumerate() {
            let probes = a.probes.min(dedup_rows(&e).len());
            let (profile, records) = geometry_profile(&e, probes, a.k, stage_seed(self.cfg.seed, Stage::Geometry, i))
                .with_context(|| format!("profiling {s}"))?;
            write_profile(&dir.join(s.name()), &profile, &records, &locations)?;
            summary.insert(s.name().to_string(), profile);
        }
        fs::write(dir.join("profiles.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }

    fn interp(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let folds = self.folds(&corpus)?;
        fs::write(dir.join("folds.json"), serde_json::to_string(&folds)?)?;
        let embs = self.embeddings()?;
        let rf = self.cfg.rf(stage_seed(self.cfg.seed, Stage::Interp, 0));
        let refs: Vec<(Source, &Tensor)> = embs.iter().map(|(s, e)| (*s, e)).collect();
        let skill = skill_matrix(&refs, &corpus, &Variable::ALL, &folds, &rf)?;
        skill.write_csv(&dir.join("skill_matrix.csv"))?;
        fs::write(dir.join("skill_matrix.json"), serde_json::to_string_pretty(&skill)?)?;

        let a = &self.cfg.analysis;
        let dc = DictionaryConfig {
            top_k: a.dictionary_top_k,
            repeats: a.perm_repeats,
            seed: stage_seed(self.cfg.seed, Stage::Interp, 1),
        };
        let locations = corpus.locations();
        let mut regions = Vec::new();
        for (s, e) in &embs {
            let dict = dimension_dictionary(e, &corpus, &Variable::ALL, &folds, &rf, &dc)
                .with_context(|| format!("dimension dictionary for {s}"))?;
            fs::create_dir_all(dir.join("dictionary"))?;
            fs::write(dir.join("dictionary").join(format!("{}.json", s.name())), serde_json::to_string_pretty(&dict)?)?;
            for v in Variable::ALL {
                for r in region_skill(e, &target_of(&corpus, v), &locations, self.extent(), &a.regions, &rf)? {
                    regions.push((v, *s, r));
                }
            }
        }
        write_regions_csv(&dir.join("regions.csv"), &regions)?;
        Ok(())
    }

    fn compl(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let folds = self.folds(&corpus)?;
        let embs = self.embeddings()?;
        let mut cca_rows = Vec::new();
        for (i, (sa, ea)) in embs.iter().enumerate() {
            for (sb, eb) in &embs[i + 1..] {
                let r = cca(ea, eb, None).with_context(|| format!("cca {sa} vs {sb}"))?;
                cca_rows.push(json!({ "a": sa, "b": sb, "mean": r.mean(), "correlations": r.correlations }));
            }
        }
        fs::write(dir.join("cca.json"), serde_json::to_string_pretty(&cca_rows)?)?;

        let rf = self.cfg.rf(stage_seed(self.cfg.seed, Stage::Compl, 0));
        let (_, general) = embs.iter().find(|(s, _)| *s == Source::Generalist).expect("generalist is embedded");
        let mut gains = Vec::new();
        for (s, e) in embs.iter().filter(|(s, _)| *s != Source::Generalist) {
            for v in Variable::ALL {
                let g = joint_gain(general, e, &target_of(&corpus, v), &folds, &rf)
                    .with_context(|| format!("joint gain generalist + {s} on {}", v.name()))?;
                gains.push(JointGainRow {
                    a: Source::Generalist,
                    b: *s,
                    variable: v,
                    metric: MetricKind::of(&target_of(&corpus, v)),
                    r2_a: g.r2_a,
                    r2_b: g.r2_b,
                    r2_joint: g.r2_joint,
                    delta: g.delta,
                });
            }
        }
        fs::write(dir.join("joint_gain.json"), serde_json::to_string_pretty(&gains)?)?;
        Ok(())
    }

    fn index(&self, dir: &Path) -> Result<()> {
        let a = &self.cfg.analysis;
        for (i, (s, e)) in self.embeddings()?.into_iter().enumerate() {
            let lists = a.ivf_lists.min(e.rows());
            let idx = build_ivf(s, &e, lists, stage_seed(self.cfg.seed, Stage::Index, i), a.metric)?;
            idx.save(&dir.join(s.name()))?;
        }
        Ok(())
    }

    fn cards(&self, dir: &Path) -> Result<()> {
        let interp = self.dir(Stage::Interp);
        let skill: SkillMatrix = read_json(&interp.join("skill_matrix.json"))?;
        for m in Modality::ALL {
            let s = Source::Specialist(m);
            let dict: DimensionDictionary = read_json(&interp.join("dictionary").join(format!("{}.json", s.name())))?;
            let profile: GeometryProfile = read_json(&self.dir(Stage::Geometry).join(s.name()).join("profile.json"))?;
            let card = make_card(m, &dict, &profile, &skill, &default_signal(m))?;
            fs::write(dir.join(format!("{}.json", m.name())), card.to_json())?;
        }
        Ok(())
    }

    fn questions(&self) -> Result<Vec<Question>> {
        match &self.cfg.agent.questions {
            Some(p) => Ok(load_questions(p)?),
            None => Ok(builtin_questions(self.cfg.world.rows, self.cfg.world.cols)),
        }
    }

    fn route(&self, dir: &Path) -> Result<()> {
        let questions = self.questions()?;
        let cards = self.cards_from_disk()?;
        let client = match self.cfg.agent.router {
            RouterKind::Rules => None,
            RouterKind::Llm => Some(self.llm_client(dir)?),
        };
        let mut plans = Vec::new();
        for q in &questions {
            let plan = match &client {
                None => route_rules(&q.text, &cards),
                Some(c) => route_llm(&q.text, &cards, c),
            }
            .with_context(|| format!("routing {}", q.id))?;
            plans.push(plan);
        }
        save_questions(&dir.join("questions.json"), &questions)?;
        let doc = RouteDoc {
            hit_rate: hit_rate(&plans, &questions),
            plans: questions.iter().zip(plans).map(|(q, plan)| RoutedQuestion { question_id: q.id.clone(), plan }).collect(),
        };
        fs::write(dir.join("plans.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    fn eval(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let cards = self.cards_from_disk()?;
        let questions = load_questions(&self.dir(Stage::Route).join("questions.json"))?;
        let mut indexes = BTreeMap::new();
        for s in Source::ALL {
            indexes.insert(s, ModalityIndex::load(&self.dir(Stage::Index).join(s.name()))?);
        }
        let agent = &self.cfg.agent;
        let needs_llm = agent.router == RouterKind::Llm
            || agent.synthesizer == SynthKind::Llm
            || agent.judges.contains(&JudgeKind::Llm);
        let client = if needs_llm { Some(self.llm_client(dir)?) } else { None };
        let llm = || client.as_ref().map(|c| c as &dyn ChatClient).expect("client exists when an llm role is set");
        let inputs = EvalInputs {
            questions: &questions,
            cards: &cards,
            indexes: &indexes,
            corpus: &corpus,
            router: match agent.router {
                RouterKind::Rules => Router::Rules,
                RouterKind::Llm => Router::Llm(llm()),
            },
            synthesizer: (agent.synthesizer == SynthKind::Llm).then(llm),
            judges: agent
                .judges
                .iter()
                .map(|j| match j {
                    JudgeKind::Heuristic => Judge::Heuristic,
                    JudgeKind::Llm => Judge::Llm(llm()),
                })
                .collect(),
        };
        let ec = EvalConfig {
            k: agent.k,
            nprobe: agent.nprobe,
            bootstrap: agent.bootstrap,
            seed: stage_seed(self.cfg.seed, Stage::Eval, 0),
            weights: agent.weights,
            default_patch: None,
        };
        let report = evaluate(&inputs, &ec)?;
        report.write(dir)?;
        if !report.failures.is_empty() {
            log::warn!("eval: {} per-question failures recorded in report.json", report.failures.len());
        }
        Ok(())
    }

    fn report(&self, dir: &Path) -> Result<()> {
        let profiles: BTreeMap<String, GeometryProfile> = read_json(&self.dir(Stage::Geometry).join("profiles.json"))?;
        let skill: SkillMatrix = read_json(&self.dir(Stage::Interp).join("skill_matrix.json"))?;
        let gains: Vec<JointGainRow> = read_json(&self.dir(Stage::Compl).join("joint_gain.json"))?;
        let eval: EvalReport = read_json(&self.dir(Stage::Eval).join("report.json"))?;
        let summary = Summary {
            geometry: profiles
                .into_iter()
                .map(|(s, p)| (s, GeometryRow { global_pr: p.global_pr, mle_id: p.mle_id, local_n80_mean: p.local_n80_mean }))
                .collect(),
            best_variable: Source::ALL.into_iter().filter_map(|s| Some((s.name().to_string(), skill.best_variable(s)?))).collect(),
            best_source: Variable::ALL.into_iter().filter_map(|v| Some((v.name().to_string(), skill.best_source(v)?))).collect(),
            positive_joint_gains: gains.iter().filter(|g| g.delta > 0.0).count(),
            joint_gain_pairs: gains.len(),
            hit_rate: eval.hit_rate,
            contrasts: eval
                .contrasts
                .iter()
                .filter(|c| c.category == "all")
                .map(|c| json!({ "judge": c.judge, "contrast": c.contrast, "n": c.n, "mean_delta": c.mean_delta, "cohens_d": c.cohens_d, "p": c.p }))
                .collect(),
            failures: eval.failures.len(),
        };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize, Deserialize)]
pub struct JointGainRow {
    pub a: Source,
    pub b: Source,
    pub variable: Variable,
    pub metric: MetricKind,
    pub r2_a: f64,
    pub r2_b: f64,
    pub r2_joint: f64,
    pub delta: f64,
}

#[derive(Serialize, Deserialize)]
pub struct RoutedQuestion {
    pub question_id: String,
    pub plan: Plan,
}

#[derive(Serialize, Deserialize)]
pub struct RouteDoc {
    pub hit_rate: Option<f64>,
    pub plans: Vec<RoutedQuestion>,
}

#[derive(Serialize, Deserialize)]
struct GeometryRow {
    global_pr: f64,
    mle_id: f64,
    local_n80_mean: f64,
}

#[derive(Serialize, Deserialize)]
struct Summary {
    geometry: BTreeMap<String, GeometryRow>,
    best_variable: BTreeMap<String, Variable>,
    best_source: BTreeMap<String, Source>,
    positive_joint_gains: usize,
    joint_gain_pairs: usize,
    hit_rate: Option<f64>,
    contrasts: Vec<Value>,
    failures: usize,
}

/// Problems found by [`verify`], one per offending stage directory.
#[derive(Debug)]
pub struct VerifyIssue {
    pub stage: Stage,
    pub problem: String,
}

/// Recomputes config hashes, stage keys and output hashes of every stamped
/// stage under `root`. Stages without a directory are reported as absent.
pub fn verify(root: &Path) -> Result<(Vec<Stage>, Vec<VerifyIssue>)> {
    let mut checked = Vec::new();
    let mut issues = Vec::new();
    let mut keys: BTreeMap<Stage, String> = BTreeMap::new();
    for stage in Stage::ALL {
        let dir = root.join(stage.dir());
        if !dir.exists() {
            continue;
        }
        let issue = |problem: String| VerifyIssue { stage, problem };
        let Some(stamp) = read_stamp(&dir)? else {
            issues.push(issue("no stamp.json".into()));
            continue;
        };
        checked.push(stage);
        keys.insert(stage, stamp.stage_key.clone());
        let text = match fs::read_to_string(dir.join(CONFIG_COPY)) {
            Ok(t) => t,
            Err(e) => {
                issues.push(issue(format!("{CONFIG_COPY}: {e}")));
                continue;
            }
        };
        if sha256_hex(text.as_bytes()) != stamp.config_hash {
            issues.push(issue(format!("{CONFIG_COPY} does not match the recorded config hash")));
            continue;
        }
        let cfg: RunConfig = match serde_json::from_str(&text) {
            Ok(c) => c,
            Err(e) => {
                issues.push(issue(format!("{CONFIG_COPY} does not parse: {e}")));
                continue;
            }
        };
        let mut upstream = BTreeMap::new();
        for &up in stage.upstream() {
            match keys.get(&up) {
                Some(k) => {
                    upstream.insert(up.name().to_string(), k.clone());
                }
                None => issues.push(issue(format!("upstream stage `{}` has no stamp", up.name()))),
            }
        }
        if upstream != stamp.upstream {
            issues.push(issue("upstream artifacts changed since this stage ran".into()));
        } else if stage_key(stage, &cfg, &upstream) != stamp.stage_key {
            issues.push(issue("recomputed stage key differs from the stamp".into()));
        }
        if let Err(e) = check_outputs(&dir, &stamp) {
            issues.push(issue(e.to_string()));
        }
    }
    if checked.is_empty() && issues.is_empty() {
        bail!("{} holds no stage artifacts", root.display());
    }
    Ok((checked, issues))
}
