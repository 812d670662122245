//! Identity-mapped label fusion, adjacent-segment merging and duplicate cleaning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::{is_confident, LlmLabelResult};
use crate::model::{
    interval_overlap, normalize_tokens, DiarSegment, Identity, IdentityMap, SpeakerLabel,
    TimeInterval, Word,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("label {0} has no identity in the map")]
    MissingIdentity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub segment_id: usize,
    pub original: SpeakerLabel,
    pub reverified: SpeakerLabel,
    pub llm: Option<LlmLabelResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OriginalAgreed,
    LlmAssigned,
    MajorityVote,
    UnknownRetained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSegment {
    pub interval: TimeInterval,
    pub identity: Identity,
    pub words: Vec<Word>,
    pub provenance: Provenance,
    /// Reconciled segment ids this segment was built from.
    pub segment_ids: Vec<usize>,
}

impl FinalSegment {
    pub fn start(&self) -> f64 {
        self.interval.start
    }

    pub fn end(&self) -> f64 {
        self.interval.end
    }
}

fn lookup<'a>(map: &'a IdentityMap, label: &SpeakerLabel) -> Result<&'a Identity, RefineError> {
    map.get(label)
        .ok_or_else(|| RefineError::MissingIdentity(label.as_str().to_string()))
}

/// Two-of-three vote; with three distinct identities the first (original) wins.
pub fn majority_vote(original: &Identity, llm: &Identity, reverified: &Identity) -> Identity {
    if llm == reverified {
        llm.clone()
    } else {
        original.clone()
    }
}

/// Final identity and provenance for one segment.
pub fn decide(
    rec: &AdjudicationRecord,
    map: &IdentityMap,
    threshold: f64,
) -> Result<(Identity, Provenance), RefineError> {
    let confident = rec.llm.as_ref().is_some_and(|r| is_confident(r, threshold));
    let llm_label = rec.llm.as_ref().map(|r| &r.llm_label);

    if rec.original.is_unknown() {
        return match llm_label {
            Some(l) if confident && !l.is_unknown() => {
                Ok((lookup(map, l)?.clone(), Provenance::LlmAssigned))
            }
            _ => Ok((Identity::unknown(), Provenance::UnknownRetained)),
        };
    }
    if rec.original == rec.reverified || !confident {
        return Ok((lookup(map, &rec.original)?.clone(), Provenance::OriginalAgreed));
    }
    let llm_label = llm_label.expect("confident implies an LLM result");
    let identity = majority_vote(
        lookup(map, &rec.original)?,
        lookup(map, llm_label)?,
        lookup(map, &rec.reverified)?,
    );
    Ok((identity, Provenance::MajorityVote))
}

pub fn refine_segment(
    segment: &DiarSegment,
    rec: &AdjudicationRecord,
    map: &IdentityMap,
    threshold: f64,
) -> Result<FinalSegment, RefineError> {
    let (identity, provenance) = decide(rec, map, threshold)?;
    Ok(FinalSegment {
        interval: segment.interval,
        identity,
        words: segment.words.clone(),
        provenance,
        segment_ids: vec![rec.segment_id],
    })
}

/// Concatenates consecutive same-identity segments separated by at most
/// `max_gap` seconds. `Unknown` segments are never merged.
pub fn merge_adjacent(segments: &[FinalSegment], max_gap: f64) -> Vec<FinalSegment> {
    let mut out: Vec<FinalSegment> = Vec::with_capacity(segments.len());
    for s in segments {
        if let Some(cur) = out.last_mut() {
            if cur.identity == s.identity
                && !s.identity.is_unknown()
                && s.start() - cur.end() <= max_gap
            {
                cur.interval = cur.interval.hull(&s.interval);
                cur.words.extend(s.words.iter().cloned());
                cur.words.sort_by(|a, b| a.start().total_cmp(&b.start()));
                cur.segment_ids.extend(&s.segment_ids);
                continue;
            }
        }
        out.push(s.clone());
    }
    out
}

fn normalized(s: &FinalSegment) -> Vec<String> {
    normalize_tokens(s.words.iter().map(|w| w.text.as_str()))
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    needle.is_empty()
        || (needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle))
}

/// Whether `t` makes `s` redundant. Mutual containment (same normalized text)
/// is broken by duration, then by position, so exactly one of the pair survives.
fn dominates(t: (usize, &FinalSegment, &[String]), s: (usize, &FinalSegment, &[String])) -> bool {
    let (ti, ts, tw) = t;
    let (si, ss, sw) = s;
    if ti == si || ts.identity != ss.identity || interval_overlap(&ts.interval, &ss.interval) <= 0.0 {
        return false;
    }
    if !contains_run(tw, sw) {
        return false;
    }
    if !contains_run(sw, tw) {
        return true;
    }
    let (dt, ds) = (ts.interval.duration(), ss.interval.duration());
    dt > ds || (dt == ds && ti < si)
}

/// Removes each segment that overlaps a same-identity segment whose
/// normalized transcript contains its own as a contiguous run.
pub fn clean_duplicates(segments: &[FinalSegment]) -> Vec<FinalSegment> {
    let (kept, _) = clean_duplicates_with_audit(segments);
    kept
}

/// As [`clean_duplicates`], also returning (removed index, witness index) pairs.
pub fn clean_duplicates_with_audit(
    segments: &[FinalSegment],
) -> (Vec<FinalSegment>, Vec<(usize, usize)>) {
    let words: Vec<Vec<String>> = segments.iter().map(normalized).collect();
    let mut kept = Vec::with_capacity(segments.len());
    let mut removed = Vec::new();
    for (si, s) in segments.iter().enumerate() {
        let witness = segments
            .iter()
            .enumerate()
            .find(|(ti, t)| dominates((*ti, t, &words[*ti]), (si, s, &words[si])));
        match witness {
            Some((ti, _)) => removed.push((si, ti)),
            None => kept.push(s.clone()),
        }
    }
    (kept, removed)
}
