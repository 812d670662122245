//! Acoustic re-verification: each segment's label is compared with the
//! plurality label of its most similar segments in the same recording.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, SpeakerLabel};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReverifyError {
    #[error("embedding dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot build an index over zero embeddings")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub score: f64,
}

/// Unit vector in double precision.
fn unit_f64(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    v.iter().map(|x| *x as f64 / norm).collect()
}

/// Exact inner-product index over unit-normalized embeddings.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    dim: usize,
    ids: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl SimilarityIndex {
    /// Index over `embeddings`, identified by position.
    pub fn build(embeddings: &[Embedding]) -> Result<Self, ReverifyError> {
        Self::build_with_ids(embeddings.iter().cloned().enumerate())
    }

    pub fn build_with_ids<I>(entries: I) -> Result<Self, ReverifyError>
    where
        I: IntoIterator<Item = (usize, Embedding)>,
    {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        for (id, e) in entries {
            let expected = *dim.get_or_insert(e.dim());
            if e.dim() != expected {
                return Err(ReverifyError::DimensionMismatch {
                    expected,
                    found: e.dim(),
                });
            }
            ids.push(id);
            vectors.push(unit_f64(e.as_slice()));
        }
        let dim = dim.ok_or(ReverifyError::Empty)?;
        Ok(Self { dim, ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.contains(&id)
    }

    fn position(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Top `k` entries by inner product with entry `query`, excluding the
    /// query itself and any id rejected by `allow`. Ties go to the lower id.
    pub fn search(&self, query: usize, k: usize, allow: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        let Some(qpos) = self.position(query) else {
            return Vec::new();
        };
        let q = &self.vectors[qpos];
        let mut scored: Vec<Neighbor> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(&id, _)| id != query && allow(id))
            .map(|(&id, v)| Neighbor {
                id,
                score: q.iter().zip(v).map(|(a, b)| a * b).sum(),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverifyResult {
    pub segment_id: usize,
    pub original: SpeakerLabel,
    pub reverified: SpeakerLabel,
    pub neighbor_labels: Vec<SpeakerLabel>,
    pub low_confidence: bool,
}

/// Plurality label among `neighbors`. Ties keep `original` when it is among
/// the leaders, otherwise go to the highest summed similarity, then the
/// lexicographically smallest label.
pub fn plurality(original: &SpeakerLabel, neighbors: &[(SpeakerLabel, f64)]) -> SpeakerLabel {
    let mut tally: BTreeMap<&SpeakerLabel, (usize, f64)> = BTreeMap::new();
    for (label, score) in neighbors {
        let e = tally.entry(label).or_default();
        e.0 += 1;
        e.1 += *score;
    }
    let Some(top) = tally.values().map(|(c, _)| *c).max() else {
        return original.clone();
    };
    let leaders: Vec<(&SpeakerLabel, f64)> = tally
        .iter()
        .filter(|(_, (c, _))| *c == top)
        .map(|(l, (_, s))| (*l, *s))
        .collect();
    if leaders.iter().any(|(l, _)| *l == original) {
        return original.clone();
    }
    let mut best = leaders[0];
    for cand in &leaders[1..] {
        if cand.1 > best.1 {
            best = *cand;
        }
    }
    best.0.clone()
}

/// Re-verifies one segment. `labels` is indexed by segment id. Segments
/// labeled `Unknown` never vote; an `Unknown` query is always low-confidence.
pub fn reverify_segment(
    index: &SimilarityIndex,
    labels: &[SpeakerLabel],
    query: usize,
    k: usize,
) -> ReverifyResult {
    let original = labels[query].clone();
    let neighbors = index.search(query, k, |id| !labels[id].is_unknown());
    let voted: Vec<(SpeakerLabel, f64)> = neighbors
        .iter()
        .map(|n| (labels[n.id].clone(), n.score))
        .collect();
    let reverified = plurality(&original, &voted);
    let low_confidence = reverified != original || original.is_unknown();
    ReverifyResult {
        segment_id: query,
        original,
        reverified,
        neighbor_labels: voted.into_iter().map(|(l, _)| l).collect(),
        low_confidence,
    }
}

/// Re-verifies every segment. Segments without an embedding (too short for
/// the extractor) keep their label and are only flagged when `Unknown`.
pub fn reverify_all(
    labels: &[SpeakerLabel],
    embeddings: &[Option<Embedding>],
    k: usize,
) -> Result<Vec<ReverifyResult>, ReverifyError> {
    assert_eq!(labels.len(), embeddings.len());
    let entries: Vec<(usize, Embedding)> = embeddings
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.clone().map(|e| (i, e)))
        .collect();
    let index = if entries.is_empty() {
        None
    } else {
        Some(SimilarityIndex::build_with_ids(entries)?)
    };
    Ok((0..labels.len())
        .map(|id| match &index {
            Some(ix) if ix.contains(id) => reverify_segment(ix, labels, id, k),
            _ => ReverifyResult {
                segment_id: id,
                original: labels[id].clone(),
                reverified: labels[id].clone(),
                neighbor_labels: Vec::new(),
                low_confidence: labels[id].is_unknown(),
            },
        })
        .collect())
}
