//! Checkpoint directory: `config.json`, one tensor file pair per named
//! parameter under `params/<set>/`, and `loss_trace.csv`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, TrainConfig};
use super::model::{encoder_layout, predictor_layout, ParamSet};
use super::train::{Checkpoint, EpochLoss, Normalizer};
use crate::error::{Error, Result};
use crate::ndcore::io::{read_tensor, write_tensor};
use crate::synthgen::Source;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    source: Source,
    encoder: EncoderConfig,
    train: TrainConfig,
    normalizer: Normalizer,
    parameter_sets: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    epoch: usize,
    jepa_loss: f64,
    var_term: f64,
    cov_term: f64,
}

const SETS: [&str; 3] = ["context", "target", "predictor"];

impl Checkpoint {
    fn sets(&self) -> [&ParamSet; 3] {
        [&self.context, &self.target, &self.predictor]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = CheckpointConfig {
            source: self.source,
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            normalizer: self.normalizer.clone(),
            parameter_sets: SETS.iter().map(|s| s.to_string()).collect(),
        };
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_vec_pretty(&cfg)?).map_err(|e| Error::io(&path, e))?;
        for (name, set) in SETS.iter().zip(self.sets()) {
            let sub = dir.join("params").join(name);
            for (pname, t) in set.names.iter().zip(&set.tensors) {
                write_tensor(&sub.join(pname), t)?;
            }
        }
        let path = dir.join("loss_trace.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        for r in &self.loss_trace {
            w.serialize(TraceRow { epoch: r.epoch, jepa_loss: r.jepa, var_term: r.var, cov_term: r.cov })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("config.json");
        let cfg: CheckpointConfig = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        cfg.encoder.validate()?;
        let read_set = |name: &str, layout: Vec<(String, Vec<usize>, super::model::Init)>| -> Result<ParamSet> {
            let sub = dir.join("params").join(name);
            let mut set = ParamSet { names: Vec::new(), tensors: Vec::new() };
            for (pname, shape, _) in layout {
                let t = read_tensor(&sub.join(&pname))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Shape { context: "checkpoint parameter", expected: shape, actual: t.shape().to_vec() });
                }
                set.names.push(pname);
                set.tensors.push(Arc::new(t));
            }
            Ok(set)
        };
        let context = read_set("context", encoder_layout(&cfg.encoder))?;
        let target = read_set("target", encoder_layout(&cfg.encoder))?;
        let predictor = read_set("predictor", predictor_layout(&cfg.encoder))?;
        let path = dir.join("loss_trace.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut loss_trace = Vec::new();
        for row in r.deserialize() {
            let row: TraceRow = row?;
            loss_trace.push(EpochLoss { epoch: row.epoch, jepa: row.jepa_loss, var: row.var_term, cov: row.cov_term });
        }
        Ok(Checkpoint {
            source: cfg.source,
            encoder: cfg.encoder,
            train: cfg.train,
            normalizer: cfg.normalizer,
            context,
            target,
            predictor,
            loss_trace,
        })
    }
}
