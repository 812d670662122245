//! Shared domain types: time intervals, words, segments, labels and identities.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },
    #[error("word text must contain non-whitespace characters")]
    EmptyWord,
    #[error("identity must be non-empty")]
    EmptyIdentity,
    #[error("embedding must have positive dimension and non-zero norm")]
    DegenerateEmbedding,
}

/// A closed time span in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, ModelError> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < start {
            return Err(ModelError::InvalidInterval { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains_point(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn intersects(&self, other: &TimeInterval) -> bool {
        interval_overlap(self, other) > 0.0
    }

    /// Intersection with `other`, or `None` when the two do not share positive length.
    pub fn clip(&self, other: &TimeInterval) -> Option<TimeInterval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (end > start).then_some(TimeInterval { start, end })
    }

    pub fn hull(&self, other: &TimeInterval) -> TimeInterval {
        TimeInterval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

/// Length of the shared part of two intervals (zero when disjoint or touching).
pub fn interval_overlap(a: &TimeInterval, b: &TimeInterval) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WordSource {
    #[default]
    InitialPass,
    RerunPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub interval: TimeInterval,
    #[serde(default)]
    pub source: WordSource,
}

impl Word {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyWord);
        }
        Ok(Self {
            text,
            interval: TimeInterval::new(start, end)?,
            source: WordSource::InitialPass,
        })
    }

    pub fn with_source(mut self, source: WordSource) -> Self {
        self.source = source;
        self
    }

    pub fn start(&self) -> f64 {
        self.interval.start
    }

    pub fn end(&self) -> f64 {
        self.interval.end
    }
}

pub const UNKNOWN: &str = "Unknown";

/// Raw speaker label produced by a diarizer, or the reserved `Unknown`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerLabel(String);

impl SpeakerLabel {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn unknown() -> Self {
        Self(UNKNOWN.to_string())
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == UNKNOWN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SpeakerLabel {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrigin {
    #[default]
    Diarizer,
    OrphanWords,
    Chunked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarSegment {
    pub interval: TimeInterval,
    pub label: SpeakerLabel,
    #[serde(default)]
    pub words: Vec<Word>,
    #[serde(default)]
    pub origin: SegmentOrigin,
}

impl DiarSegment {
    pub fn new(interval: TimeInterval, label: impl Into<SpeakerLabel>) -> Self {
        Self {
            interval,
            label: label.into(),
            words: Vec::new(),
            origin: SegmentOrigin::Diarizer,
        }
    }

    pub fn start(&self) -> f64 {
        self.interval.start
    }

    pub fn end(&self) -> f64 {
        self.interval.end
    }

    /// Words joined by single spaces.
    pub fn text(&self) -> String {
        join_words(&self.words)
    }
}

impl From<String> for SpeakerLabel {
    fn from(s: String) -> Self {
        Self(s)
    }
}

pub fn join_words(words: &[Word]) -> String {
    words
        .iter()
        .map(|w| w.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Closed on both ends: a word starting exactly on a segment boundary belongs to it.
pub fn word_in_segment(w: &Word, s: &DiarSegment) -> bool {
    s.interval.contains_point(w.interval.start)
}

/// A human-meaningful role such as "Patient".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Identity(String);

impl Identity {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(ModelError::EmptyIdentity);
        }
        Ok(Self(value))
    }

    pub fn unknown() -> Self {
        Self(UNKNOWN.to_string())
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == UNKNOWN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Label → identity. Always maps `Unknown` to `Unknown`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityMap {
    entries: BTreeMap<SpeakerLabel, Identity>,
}

impl Default for IdentityMap {
    fn default() -> Self {
        Self::new()
    }
}

impl IdentityMap {
    pub fn new() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(SpeakerLabel::unknown(), Identity::unknown());
        Self { entries }
    }

    /// Inserts a mapping. Attempts to remap `Unknown` are ignored.
    pub fn insert(&mut self, label: SpeakerLabel, identity: Identity) {
        if label.is_unknown() {
            return;
        }
        self.entries.insert(label, identity);
    }

    pub fn get(&self, label: &SpeakerLabel) -> Option<&Identity> {
        self.entries.get(label)
    }

    pub fn contains(&self, label: &SpeakerLabel) -> bool {
        self.entries.contains_key(label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SpeakerLabel, &Identity)> {
        self.entries.iter()
    }

    /// Distinct identities assigned to non-`Unknown` labels.
    pub fn distinct_identities(&self) -> Vec<&Identity> {
        let mut ids: Vec<&Identity> = self
            .entries
            .iter()
            .filter(|(l, _)| !l.is_unknown())
            .map(|(_, i)| i)
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

impl FromIterator<(SpeakerLabel, Identity)> for IdentityMap {
    fn from_iter<T: IntoIterator<Item = (SpeakerLabel, Identity)>>(iter: T) -> Self {
        let mut map = IdentityMap::new();
        for (l, i) in iter {
            map.insert(l, i);
        }
        map
    }
}

/// Speaker embedding vector. Dimension is fixed per backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(vector: Vec<f32>) -> Result<Self, ModelError> {
        let norm = l2_norm(&vector);
        if vector.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(ModelError::DegenerateEmbedding);
        }
        Ok(Self(vector))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn normalized(&self) -> Embedding {
        let n = l2_norm(&self.0);
        Embedding(self.0.iter().map(|x| x / n).collect())
    }

    /// Component-wise mean, re-normalized to unit length.
    pub fn mean(items: &[Embedding]) -> Result<Embedding, ModelError> {
        let first = items.first().ok_or(ModelError::DegenerateEmbedding)?;
        let mut acc = vec![0.0f32; first.dim()];
        for e in items {
            if e.dim() != acc.len() {
                return Err(ModelError::DegenerateEmbedding);
            }
            for (a, x) in acc.iter_mut().zip(e.as_slice()) {
                *a += x;
            }
        }
        let n = items.len() as f32;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(Embedding::new(acc)?.normalized())
    }
}

pub fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, zero when either vector is all zeros.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Lowercased tokens with leading/trailing punctuation stripped; empty tokens dropped.
pub fn normalize_tokens<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Vec<String> {
    tokens
        .into_iter()
        .flat_map(|t| t.split_whitespace())
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}
