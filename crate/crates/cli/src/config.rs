//! The run configuration: one JSON tree, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sensorfleet::agent::{EndpointConfig, RubricWeights};
use sensorfleet::fleet::Metric;
use sensorfleet::interp::{RegionConfig, RfConfig};
use sensorfleet::jepa::{EncoderConfig, TrainConfig};
use sensorfleet::synthgen::{CorpusConfig, Source, WorldConfig};

/// A configuration problem, tied to the key that caused it.
#[derive(Debug, thiserror::Error)]
#[error("config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub analysis: AnalysisSection,
    pub agent: AgentSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Tiny,
    VitS,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub preset: Preset,
}

/// Training schedule shared by all six encoders. `epochs` and
/// `learning_rate` left null take the preset's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub momentum: f64,
    pub ema_start: f64,
    pub ema_end: f64,
    pub vicreg_gamma: f64,
    pub lambda_var: f64,
    pub lambda_cov: f64,
    pub visible_frac: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::tiny();
        Self {
            epochs: None,
            learning_rate: None,
            batch_size: t.batch_size,
            momentum: t.momentum,
            ema_start: t.ema_start,
            ema_end: t.ema_end,
            vicreg_gamma: t.vicreg_gamma,
            lambda_var: t.lambda_var,
            lambda_cov: t.lambda_cov,
            visible_frac: t.visible_frac,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Neighbourhood size for MLE and local PCA.
    pub k: usize,
    /// Local-PCA probes; shrunk to the number of distinct embeddings.
    pub probes: usize,
    pub folds: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub perm_repeats: usize,
    pub dictionary_top_k: usize,
    pub regions: RegionConfig,
    pub ivf_lists: usize,
    pub metric: Metric,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let rf = RfConfig::default();
        Self {
            k: 20,
            probes: 2000,
            folds: 5,
            block_rows: 4,
            block_cols: 4,
            trees: rf.n_trees,
            max_depth: rf.max_depth,
            min_leaf: rf.min_leaf,
            perm_repeats: 2,
            dictionary_top_k: 5,
            regions: RegionConfig::default(),
            ivf_lists: 16,
            metric: Metric::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    #[default]
    Rules,
    Llm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    #[default]
    Offline,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Heuristic,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    /// Neighbours retrieved per index.
    pub k: usize,
    pub nprobe: usize,
    pub bootstrap: usize,
    pub router: RouterKind,
    pub synthesizer: SynthKind,
    pub judges: Vec<JudgeKind>,
    pub weights: RubricWeights,
    pub endpoint: EndpointConfig,
    /// Question file; null uses the built-in 40 questions.
    pub questions: Option<PathBuf>,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            k: 5,
            nprobe: 4,
            bootstrap: 10_000,
            router: RouterKind::default(),
            synthesizer: SynthKind::default(),
            judges: vec![JudgeKind::Heuristic],
            weights: RubricWeights::default(),
            endpoint: EndpointConfig::default(),
            questions: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value` overrides
    /// and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ConfigError::new("--config", format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError::new("--config", format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { String::new() } else { path };
            let inner = e.into_inner().to_string();
            match unknown_field(&inner) {
                Some(field) if key.is_empty() => ConfigError::new(field, inner),
                _ => ConfigError::new(key, inner),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = &self.analysis;
        let checks = [
            ("analysis.k", a.k >= 2, "must be at least 2"),
            ("analysis.probes", a.probes >= 1, "must be positive"),
            ("analysis.folds", a.folds >= 2, "must be at least 2"),
            ("analysis.block_rows", a.block_rows >= 1, "must be positive"),
            ("analysis.block_cols", a.block_cols >= 1, "must be positive"),
            ("analysis.trees", a.trees >= 1, "must be positive"),
            ("analysis.min_leaf", a.min_leaf >= 1, "must be positive"),
            ("analysis.perm_repeats", a.perm_repeats >= 1, "must be positive"),
            ("analysis.ivf_lists", a.ivf_lists >= 1, "must be positive"),
            ("agent.k", self.agent.k >= 1, "must be positive"),
            ("agent.nprobe", self.agent.nprobe >= 1, "must be positive"),
            ("agent.judges", !self.agent.judges.is_empty(), "needs at least one judge"),
        ];
        if let Some((key, _, msg)) = checks.iter().find(|c| !c.1) {
            return Err(ConfigError::new(*key, *msg));
        }
        for s in Source::ALL {
            self.encoder_for(s).validate().map_err(|e| ConfigError::new("encoder", e.to_string()))?;
        }
        self.train_for(0).validate().map_err(|e| ConfigError::new("train", e.to_string()))?;
        self.agent.weights.validate().map_err(|e| ConfigError::new("agent.weights", e.to_string()))?;
        Ok(())
    }

    pub fn encoder_for(&self, source: Source) -> EncoderConfig {
        match self.encoder.preset {
            Preset::Tiny => EncoderConfig::tiny(source.channels(), self.corpus.patch_px),
            Preset::VitS => EncoderConfig::vit_s(source.channels(), self.corpus.patch_px),
        }
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        let base = match self.encoder.preset {
            Preset::Tiny => TrainConfig::tiny(),
            Preset::VitS => TrainConfig::vit_s(),
        };
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            batch_size: t.batch_size,
            momentum: t.momentum,
            ema_start: t.ema_start,
            ema_end: t.ema_end,
            vicreg_gamma: t.vicreg_gamma,
            lambda_var: t.lambda_var,
            lambda_cov: t.lambda_cov,
            visible_frac: t.visible_frac,
            seed,
        }
    }

    pub fn rf(&self, seed: u64) -> RfConfig {
        let a = &self.analysis;
        RfConfig { n_trees: a.trees, max_depth: a.max_depth, min_leaf: a.min_leaf, seed, ..RfConfig::default() }
    }

    /// Canonical serialisation; this is what gets hashed and copied.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serialises")
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// `a.b.c=value`; the value is read as JSON and falls back to a string.
fn apply_override(tree: &mut Value, arg: &str) -> Result<(), ConfigError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::new(arg, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::new(key, "malformed key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(ConfigError::new(parts[..i].join("."), "is not a table"));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last key part")
}
