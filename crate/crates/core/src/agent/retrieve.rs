use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::ModalityIndex;
use crate::synthgen::{LabelRecord, PatchCorpus, Source};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
    pub labels: LabelRecord,
}

/// Ranked neighbours from one source's index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceGroup {
    pub source: Source,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBundle {
    pub context_patch: usize,
    pub location: (usize, usize),
    pub groups: Vec<ProvenanceGroup>,
}

impl RetrievalBundle {
    pub fn sources(&self) -> Vec<Source> {
        self.groups.iter().map(|g| g.source).collect()
    }
}

/// Context patch for a question: the patch nearest its location, else the
/// configured default.
pub fn context_patch(corpus: &PatchCorpus, location: Option<(usize, usize)>, default: Option<usize>) -> Result<usize> {
    match (location, default) {
        (Some((r, c)), _) => Ok(corpus.nearest_patch(r, c)),
        (None, Some(p)) if p < corpus.len() => Ok(p),
        (None, Some(p)) => Err(Error::invalid(format!("default context patch {p} is outside the corpus"))),
        (None, None) => Err(Error::invalid("question has no location and no default context patch is set")),
    }
}

/// Queries each source's index with that source's embedding of the context
/// patch.
pub fn retrieve(
    sources: &[Source],
    indexes: &BTreeMap<Source, ModalityIndex>,
    corpus: &PatchCorpus,
    context: usize,
    k: usize,
    nprobe: usize,
) -> Result<RetrievalBundle> {
    if sources.is_empty() {
        return Err(Error::invalid("retrieval needs at least one source"));
    }
    if context >= corpus.len() {
        return Err(Error::invalid(format!("context patch {context} is outside the corpus")));
    }
    let mut groups = Vec::with_capacity(sources.len());
    for &s in sources {
        let idx = indexes.get(&s).ok_or_else(|| Error::invalid(format!("no index for {s}")))?;
        if idx.len() != corpus.len() {
            return Err(Error::invalid(format!("{s} index has {} rows, corpus has {}", idx.len(), corpus.len())));
        }
        let hits = idx.knn(idx.vector(context), k, nprobe)?;
        let neighbors = hits
            .into_iter()
            .map(|h| Neighbor { id: h.id, distance: h.distance, labels: corpus.labels[h.id].clone() })
            .collect();
        groups.push(ProvenanceGroup { source: s, neighbors });
    }
    Ok(RetrievalBundle { context_patch: context, location: corpus.patches[context].location, groups })
}
