//! Alignment of diarization segments with recognized words, mismatch
//! detection and the re-run retention rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{AudioRef, BackendError, Transcriber};
use crate::model::{
    normalize_tokens, word_in_segment, DiarSegment, SegmentOrigin, SpeakerLabel, TimeInterval,
    Word, WordSource,
};

pub const DEFAULT_ORPHAN_GAP: f64 = 1.0;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    /// Words no diarization segment covers, grouped under `Unknown`.
    OrphanWords,
    /// A diarization segment that received no words.
    EmptySegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub kind: MismatchKind,
    /// Position of the segment in [`ReconcileOutput::segments`] at detection time.
    pub index: usize,
    pub segment: DiarSegment,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconcileOutput {
    pub segments: Vec<DiarSegment>,
    pub mismatches: Vec<Mismatch>,
    pub dropped: Vec<DiarSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Keep(DiarSegment),
    Drop,
}

/// Assigns each word to the segment containing its start (the latest-starting
/// one when several do), groups leftovers into `Unknown` segments and flags
/// segments without words.
pub fn align(sd: &[DiarSegment], words: &[Word], orphan_gap: f64) -> ReconcileOutput {
    let mut sd: Vec<DiarSegment> = sd
        .iter()
        .cloned()
        .map(|mut s| {
            s.words.clear();
            s
        })
        .collect();
    sd.sort_by(|a, b| a.start().total_cmp(&b.start()));

    // running max of segment ends lets the backward scan stop early
    let mut max_end = Vec::with_capacity(sd.len());
    let mut running = f64::NEG_INFINITY;
    for s in &sd {
        running = running.max(s.end());
        max_end.push(running);
    }

    let mut orphans = Vec::new();
    for w in words {
        let upper = sd.partition_point(|s| s.start() <= w.start());
        let mut owner = None;
        for i in (0..upper).rev() {
            if max_end[i] < w.start() {
                break;
            }
            if word_in_segment(w, &sd[i]) {
                owner = Some(i);
                break;
            }
        }
        match owner {
            Some(i) => sd[i].words.push(w.clone()),
            None => orphans.push(w.clone()),
        }
    }
    for s in &mut sd {
        s.words.sort_by(|a, b| a.start().total_cmp(&b.start()));
    }

    let mut segments = sd;
    segments.extend(group_orphans(&orphans, orphan_gap));
    segments.sort_by(|a, b| a.start().total_cmp(&b.start()));

    let mismatches = segments
        .iter()
        .enumerate()
        .filter_map(|(index, s)| {
            let kind = if s.origin == SegmentOrigin::OrphanWords {
                MismatchKind::OrphanWords
            } else if s.words.is_empty() {
                MismatchKind::EmptySegment
            } else {
                return None;
            };
            Some(Mismatch {
                kind,
                index,
                segment: s.clone(),
            })
        })
        .collect();

    ReconcileOutput {
        segments,
        mismatches,
        dropped: Vec::new(),
    }
}

/// Splits sorted orphan words into maximal runs whose inter-word gap
/// (next start minus previous end) is at most `gap_threshold`.
pub fn group_orphans(words: &[Word], gap_threshold: f64) -> Vec<DiarSegment> {
    let mut out: Vec<DiarSegment> = Vec::new();
    let mut run: Vec<Word> = Vec::new();
    let flush = |run: &mut Vec<Word>, out: &mut Vec<DiarSegment>| {
        if run.is_empty() {
            return;
        }
        let start = run[0].start();
        let end = run.iter().map(Word::end).fold(start, f64::max);
        out.push(DiarSegment {
            interval: TimeInterval { start, end },
            label: SpeakerLabel::unknown(),
            words: std::mem::take(run),
            origin: SegmentOrigin::OrphanWords,
        });
    };
    for w in words {
        if let Some(last) = run.last() {
            if w.start() - last.end() > gap_threshold {
                flush(&mut run, &mut out);
            }
        }
        run.push(w.clone());
    }
    flush(&mut run, &mut out);
    out
}

/// Lowercased, punctuation-stripped, single-space-joined text.
pub fn normalized_text(words: &[Word]) -> String {
    normalize_tokens(words.iter().map(|w| w.text.as_str())).join(" ")
}

/// Decides whether a mismatched segment survives its re-run.
pub fn rerun_policy(m: &Mismatch, rerun_words: &[Word], similarity_threshold: f64) -> Resolution {
    match m.kind {
        MismatchKind::OrphanWords => {
            let original = normalized_text(&m.segment.words);
            let rerun = normalized_text(rerun_words);
            if levenshtein_similarity(&original, &rerun) >= similarity_threshold {
                Resolution::Keep(m.segment.clone())
            } else {
                Resolution::Drop
            }
        }
        MismatchKind::EmptySegment => {
            if rerun_words.is_empty() {
                Resolution::Drop
            } else {
                let mut seg = m.segment.clone();
                seg.words = rerun_words
                    .iter()
                    .cloned()
                    .map(|w| w.with_source(WordSource::RerunPass))
                    .collect();
                seg.words.sort_by(|a, b| a.start().total_cmp(&b.start()));
                Resolution::Keep(seg)
            }
        }
    }
}

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    if a.is_ascii() && b.is_ascii() {
        return edit_distance_seq(a.as_bytes(), b.as_bytes());
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance_seq(&a, &b)
}

pub(crate) fn edit_distance_seq<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

/// `1 - distance / max(len)`, 1.0 for two empty strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let longest = la.max(lb);
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Applies resolutions (one per mismatch, same order) and moves dropped
/// segments to the audit trail.
pub fn apply_resolutions(mut out: ReconcileOutput, resolutions: Vec<Resolution>) -> ReconcileOutput {
    assert_eq!(out.mismatches.len(), resolutions.len());
    let mut replace: Vec<Option<Resolution>> = vec![None; out.segments.len()];
    for (m, r) in out.mismatches.iter().zip(resolutions) {
        replace[m.index] = Some(r);
    }
    let mut kept = Vec::with_capacity(out.segments.len());
    for (seg, r) in out.segments.into_iter().zip(replace) {
        match r {
            None => kept.push(seg),
            Some(Resolution::Keep(s)) => kept.push(s),
            Some(Resolution::Drop) => out.dropped.push(seg),
        }
    }
    kept.sort_by(|a, b| a.start().total_cmp(&b.start()));
    out.segments = kept;
    out
}

/// Re-runs recognition over every mismatched interval (no padding), at most
/// `parallelism` calls in flight, and applies the retention rules.
pub fn rerun_mismatches(
    out: ReconcileOutput,
    transcriber: &dyn Transcriber,
    audio: &AudioRef,
    similarity_threshold: f64,
    parallelism: usize,
) -> Result<(ReconcileOutput, Vec<Resolution>), BackendError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BackendError::Unavailable(e.to_string()))?;
    let resolutions: Vec<Resolution> = pool.install(|| {
        out.mismatches
            .par_iter()
            .map(|m| {
                let words = transcriber.transcribe(audio, Some(m.segment.interval))?;
                Ok(rerun_policy(m, &words, similarity_threshold))
            })
            .collect::<Result<Vec<_>, BackendError>>()
    })?;
    Ok((apply_resolutions(out, resolutions.clone()), resolutions))
}
