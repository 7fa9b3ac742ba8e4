use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeans};
use crate::error::{Error, Result};
use crate::ndcore::io::{read_tensor, write_tensor};
use crate::ndcore::tensor::squared_distance;
use crate::ndcore::Tensor;
use crate::synthgen::Source;

const INDEX_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    SquaredEuclidean,
    /// Rows and queries are scaled to unit length, then compared by squared
    /// Euclidean distance (`2 − 2·cos`).
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedLists {
    pub centroids: Tensor,
    pub lists: Vec<Vec<usize>>,
    pub kmeans_trace: Vec<f64>,
}

/// Immutable per-modality vector index. Ids are corpus row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityIndex {
    source: Source,
    metric: Metric,
    vectors: Tensor,
    ivf: Option<InvertedLists>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexManifest {
    format: u32,
    source: Source,
    metric: Metric,
    n: usize,
    dim: usize,
    ivf: Option<ListManifest>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ListManifest {
    lists: Vec<Vec<usize>>,
    kmeans_trace: Vec<f64>,
}

fn prepare(e: &Tensor, metric: Metric) -> Result<Tensor> {
    if !e.is_matrix() || e.rows() == 0 || e.cols() == 0 {
        return Err(Error::invalid("index needs a non-empty n × d matrix"));
    }
    if !e.all_finite() {
        return Err(Error::NonFinite("index vectors"));
    }
    let mut v = e.clone();
    if metric == Metric::Cosine {
        for r in 0..v.rows() {
            normalize(v.row_mut(r), "index vectors")?;
        }
    }
    Ok(v)
}

fn normalize(row: &mut [f64], what: &'static str) -> Result<()> {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVariance(format!("zero-length vector in {what} under the cosine metric")));
    }
    row.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

fn rank(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    hits.truncate(k);
    hits
}

pub fn build_index(source: impl Into<Source>, e: &Tensor, metric: Metric) -> Result<ModalityIndex> {
    Ok(ModalityIndex { source: source.into(), metric, vectors: prepare(e, metric)?, ivf: None })
}

/// Exact vectors plus a `c`-list coarse quantizer from seeded k-means.
pub fn build_ivf(source: impl Into<Source>, e: &Tensor, c: usize, seed: u64, metric: Metric) -> Result<ModalityIndex> {
    let vectors = prepare(e, metric)?;
    let KMeans { centroids, assignment, trace } = kmeans(&vectors, c, seed)?;
    let mut lists = vec![Vec::new(); c];
    for (i, a) in assignment.into_iter().enumerate() {
        lists[a].push(i);
    }
    Ok(ModalityIndex { source: source.into(), metric, vectors, ivf: Some(InvertedLists { centroids, lists, kmeans_trace: trace }) })
}

impl ModalityIndex {
    pub fn source(&self) -> Source {
        self.source
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn inverted_lists(&self) -> Option<&InvertedLists> {
        self.ivf.as_ref()
    }

    /// `k` nearest ids by ascending distance, ties by ascending id. With
    /// inverted lists, only the `nprobe` nearest lists are scanned, widened
    /// when they hold fewer than `k` members in total.
    pub fn knn(&self, q: &[f64], k: usize, nprobe: usize) -> Result<Vec<Hit>> {
        if q.len() != self.dim() {
            return Err(Error::Shape { context: "knn query", expected: vec![self.dim()], actual: vec![q.len()] });
        }
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!("knn needs 1 ≤ k ≤ {}, got {k}", self.len())));
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("knn query"));
        }
        let mut query = q.to_vec();
        if self.metric == Metric::Cosine {
            normalize(&mut query, "knn query")?;
        }
        let hit = |id: usize| Hit { id, distance: squared_distance(&query, self.vectors.row(id)) };
        let hits = match &self.ivf {
            None => (0..self.len()).map(hit).collect(),
            Some(ivf) => {
                let order: Vec<usize> = rank(
                    (0..ivf.lists.len())
                        .map(|c| Hit { id: c, distance: squared_distance(&query, ivf.centroids.row(c)) })
                        .collect(),
                    ivf.lists.len(),
                )
                .into_iter()
                .map(|h| h.id)
                .collect();
                let mut out = Vec::new();
                for (probed, &c) in order.iter().enumerate() {
                    if probed >= nprobe.max(1) && out.len() >= k {
                        break;
                    }
                    out.extend(ivf.lists[c].iter().map(|&id| hit(id)));
                }
                out
            }
        };
        Ok(rank(hits, k))
    }

    /// `manifest.json` plus packed `vectors` (and `centroids` for inverted lists).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = IndexManifest {
            format: INDEX_FORMAT,
            source: self.source,
            metric: self.metric,
            n: self.len(),
            dim: self.dim(),
            ivf: self.ivf.as_ref().map(|l| ListManifest { lists: l.lists.clone(), kmeans_trace: l.kmeans_trace.clone() }),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        write_tensor(&dir.join("vectors"), &self.vectors)?;
        if let Some(ivf) = &self.ivf {
            write_tensor(&dir.join("centroids"), &ivf.centroids)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: IndexManifest = serde_json::from_str(&text)?;
        if m.format != INDEX_FORMAT {
            return Err(Error::Parse { what: "index manifest", detail: format!("unsupported format {}", m.format) });
        }
        let vectors = read_tensor(&dir.join("vectors"))?;
        if vectors.shape() != [m.n, m.dim] {
            return Err(Error::Shape { context: "index vectors", expected: vec![m.n, m.dim], actual: vectors.shape().to_vec() });
        }
        let ivf = match m.ivf {
            None => None,
            Some(l) => {
                let centroids = read_tensor(&dir.join("centroids"))?;
                if centroids.shape() != [l.lists.len(), m.dim] || l.lists.iter().flatten().any(|&id| id >= m.n) {
                    return Err(Error::Parse { what: "index manifest", detail: "inverted lists do not match vectors".into() });
                }
                Some(InvertedLists { centroids, lists: l.lists, kmeans_trace: l.kmeans_trace })
            }
        };
        Ok(Self { source: m.source, metric: m.metric, vectors, ivf })
    }
}
