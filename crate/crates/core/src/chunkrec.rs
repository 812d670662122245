//! Long-recording support: overlapping chunk plans, cross-chunk speaker label
//! unification by clustering per-chunk mean embeddings, and stitching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{cosine, DiarSegment, Embedding, SegmentOrigin, SpeakerLabel, TimeInterval};

pub const DEFAULT_CHUNK_LENGTH: f64 = 250.0;
pub const DEFAULT_OVERLAP: f64 = 5.0;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.65;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChunkError {
    #[error("invalid chunk plan: {0}")]
    InvalidPlan(String),
    #[error("embedding dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunk_length: f64,
    pub overlap: f64,
    pub windows: Vec<TimeInterval>,
}

/// Windows of `chunk_length` at stride `chunk_length - overlap`; the last one
/// is clipped to `duration`.
pub fn plan_chunks(duration: f64, chunk_length: f64, overlap: f64) -> Result<ChunkPlan, ChunkError> {
    if !(chunk_length > 0.0) || !chunk_length.is_finite() {
        return Err(ChunkError::InvalidPlan(format!("chunk length {chunk_length}")));
    }
    if !(overlap >= 0.0) || overlap >= chunk_length {
        return Err(ChunkError::InvalidPlan(format!(
            "overlap {overlap} must be in [0, {chunk_length})"
        )));
    }
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(ChunkError::InvalidPlan(format!("duration {duration}")));
    }
    let stride = chunk_length - overlap;
    let mut windows = Vec::new();
    let mut k = 0u32;
    loop {
        let start = stride * k as f64;
        let end = (start + chunk_length).min(duration);
        windows.push(TimeInterval { start, end });
        if end >= duration {
            break;
        }
        k += 1;
    }
    Ok(ChunkPlan {
        chunk_length,
        overlap,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpeaker {
    pub chunk_index: usize,
    pub local_label: SpeakerLabel,
    pub mean_embedding: Embedding,
    pub total_duration: f64,
}

/// Builds one [`ChunkSpeaker`] per local label from per-segment embeddings
/// (unweighted mean, re-normalized). Segments without an embedding are skipped.
pub fn chunk_speakers(
    chunk_index: usize,
    segments: &[DiarSegment],
    embeddings: &[Option<Embedding>],
) -> Vec<ChunkSpeaker> {
    let mut groups: BTreeMap<&SpeakerLabel, (Vec<Embedding>, f64)> = BTreeMap::new();
    for (s, e) in segments.iter().zip(embeddings) {
        let g = groups.entry(&s.label).or_default();
        g.1 += s.interval.duration();
        if let Some(e) = e {
            g.0.push(e.clone());
        }
    }
    groups
        .into_iter()
        .filter_map(|(label, (embs, dur))| {
            Some(ChunkSpeaker {
                chunk_index,
                local_label: label.clone(),
                mean_embedding: Embedding::mean(&embs).ok()?,
                total_duration: dur,
            })
        })
        .collect()
}

pub type LabelMapping = BTreeMap<(usize, SpeakerLabel), SpeakerLabel>;

/// Average-linkage agglomerative clustering on cosine similarity. Merging
/// stops when the best admissible pair falls below `sim_threshold`; clusters
/// sharing a chunk are never merged. Global labels are `spk0..` in order of
/// first appearance; a single chunk keeps its local labels.
pub fn unify_labels(speakers: &[ChunkSpeaker], sim_threshold: f64) -> Result<LabelMapping, ChunkError> {
    if let Some(first) = speakers.first() {
        let expected = first.mean_embedding.dim();
        if let Some(bad) = speakers.iter().find(|s| s.mean_embedding.dim() != expected) {
            return Err(ChunkError::DimensionMismatch {
                expected,
                found: bad.mean_embedding.dim(),
            });
        }
    }
    let single_chunk = speakers
        .iter()
        .all(|s| s.chunk_index == speakers[0].chunk_index);
    if single_chunk {
        return Ok(speakers
            .iter()
            .map(|s| ((s.chunk_index, s.local_label.clone()), s.local_label.clone()))
            .collect());
    }

    let n = speakers.len();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    cosine(
                        speakers[i].mean_embedding.as_slice(),
                        speakers[j].mean_embedding.as_slice(),
                    ) as f64
                })
                .collect()
        })
        .collect();

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let shares_chunk = clusters[a].iter().any(|&i| {
                    clusters[b]
                        .iter()
                        .any(|&j| speakers[i].chunk_index == speakers[j].chunk_index)
                });
                if shares_chunk {
                    continue;
                }
                let total: f64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| sim[i][j])
                    .sum();
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(_, _, s)| avg > s) {
                    best = Some((a, b, avg));
                }
            }
        }
        match best {
            Some((a, b, s)) if s >= sim_threshold => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }

    clusters.sort_by_key(|c| {
        c.iter()
            .map(|&i| (speakers[i].chunk_index, i))
            .min()
            .expect("non-empty cluster")
    });
    let mut mapping = LabelMapping::new();
    for (g, cluster) in clusters.iter().enumerate() {
        let global = SpeakerLabel::new(format!("spk{g}"));
        for &i in cluster {
            mapping.insert(
                (speakers[i].chunk_index, speakers[i].local_label.clone()),
                global.clone(),
            );
        }
    }
    Ok(mapping)
}

/// Globalizes labels and resolves overlaps by cutting at each overlap
/// midpoint; pieces of one turn split by the cut are re-joined.
/// Local labels absent from `mapping` become `c<chunk>-<label>`.
pub fn stitch(
    per_chunk: &[(usize, Vec<DiarSegment>)],
    mapping: &LabelMapping,
    plan: &ChunkPlan,
) -> Vec<DiarSegment> {
    let w = &plan.windows;
    let mut out: Vec<DiarSegment> = Vec::new();
    for (ci, segs) in per_chunk {
        let ci = *ci;
        let lo = if ci == 0 {
            f64::NEG_INFINITY
        } else {
            0.5 * (w[ci].start + w[ci - 1].end)
        };
        let hi = if ci + 1 >= w.len() {
            f64::INFINITY
        } else {
            0.5 * (w[ci + 1].start + w[ci].end)
        };
        for s in segs {
            let start = s.start().max(lo);
            let end = s.end().min(hi);
            if end <= start {
                continue;
            }
            let label = mapping
                .get(&(ci, s.label.clone()))
                .cloned()
                .unwrap_or_else(|| SpeakerLabel::new(format!("c{ci}-{}", s.label)));
            out.push(DiarSegment {
                interval: TimeInterval { start, end },
                label,
                words: s.words.clone(),
                origin: if w.len() > 1 {
                    SegmentOrigin::Chunked
                } else {
                    s.origin
                },
            });
        }
    }
    out.sort_by(|a, b| {
        a.start()
            .total_cmp(&b.start())
            .then(a.end().total_cmp(&b.end()))
            .then(a.label.cmp(&b.label))
    });

    let cuts: Vec<f64> = w
        .windows(2)
        .map(|p| 0.5 * (p[1].start + p[0].end))
        .collect();
    let mut joined: Vec<DiarSegment> = Vec::with_capacity(out.len());
    for s in out {
        if let Some(prev) = joined
            .iter_mut()
            .rev()
            .find(|p| p.label == s.label && p.end() == s.start() && cuts.contains(&s.start()))
        {
            prev.interval.end = s.end();
            prev.words.extend(s.words);
            continue;
        }
        if joined
            .iter()
            .any(|p| p.label == s.label && p.interval == s.interval)
        {
            continue;
        }
        joined.push(s);
    }
    joined.sort_by(|a, b| a.start().total_cmp(&b.start()));
    joined
}
