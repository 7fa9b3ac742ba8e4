//! Provenance stamps and content hashes of stage directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const STAMP_FILE: &str = "stamp.json";
pub const CONFIG_COPY: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub stage: String,
    /// Hash of the config slice this stage reads plus its upstream keys.
    pub stage_key: String,
    /// Hash of the `run_config.json` copy next to the stamp.
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub upstream: BTreeMap<String, String>,
    /// Relative path to content hash for every other file in the directory.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn versions() -> BTreeMap<String, String> {
    [("sensorfleet", sensorfleet::VERSION), ("sensorfleet-cli", env!("CARGO_PKG_VERSION"))]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Hashes every regular file under `dir` except the stamp itself.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", dir.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays under its root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == STAMP_FILE {
            continue;
        }
        let bytes = fs::read(entry.path()).with_context(|| format!("reading {}", entry.path().display()))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(out)
}

pub fn read_stamp(dir: &Path) -> Result<Option<Stamp>> {
    let path = dir.join(STAMP_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

pub fn write_stamp(dir: &Path, stamp: &Stamp) -> Result<()> {
    let path = dir.join(STAMP_FILE);
    fs::write(&path, serde_json::to_string_pretty(stamp)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Fails unless the directory's files hash to what the stamp records.
pub fn check_outputs(dir: &Path, stamp: &Stamp) -> Result<()> {
    let now = hash_outputs(dir)?;
    for (path, hash) in &stamp.outputs {
        match now.get(path) {
            None => bail!("{path} is missing"),
            Some(h) if h != hash => bail!("{path} does not match its recorded hash"),
            _ => {}
        }
    }
    if let Some(extra) = now.keys().find(|p| !stamp.outputs.contains_key(*p)) {
        bail!("{extra} is not recorded in the stamp");
    }
    Ok(())
}
