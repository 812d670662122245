//! Diarization error rate with collar and optimal speaker mapping, word
//! error rate, and report formatting.
//!
//! DER is computed exactly on interval endpoints with a sweep over boundary
//! events. Overlapping speech is scored: in every scored stretch with `R`
//! active reference speakers and `H` active hypothesis speakers, of which `C`
//! are mapped onto an active reference speaker,
//!
//! * missed       += max(0, R − H)
//! * false alarm  += max(0, H − R)
//! * confusion    += min(R, H) − C
//!
//! all weighted by the stretch duration and divided by total reference
//! speaker time.

pub mod assignment;
pub mod rttm;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_tokens, TimeInterval};
use crate::reconcile::edit_distance_seq;

pub use rttm::{parse_rttm, write_rttm, RttmError, RttmRecord};

pub const DEFAULT_COLLAR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference has no scored speech")]
    EmptyReference,
    #[error("baseline must be positive")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSegment {
    pub interval: TimeInterval,
    pub label: String,
}

/// Speaker-labeled intervals; overlapping speech allowed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotation {
    pub segments: Vec<AnnotatedSegment>,
}

impl Annotation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, interval: TimeInterval, label: impl Into<String>) {
        self.segments.push(AnnotatedSegment {
            interval,
            label: label.into(),
        });
    }

    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.segments.iter().map(|s| s.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    pub fn relabeled(&self, f: impl Fn(&str) -> String) -> Annotation {
        Annotation {
            segments: self
                .segments
                .iter()
                .map(|s| AnnotatedSegment {
                    interval: s.interval,
                    label: f(&s.label),
                })
                .collect(),
        }
    }
}

impl FromIterator<(TimeInterval, String)> for Annotation {
    fn from_iter<T: IntoIterator<Item = (TimeInterval, String)>>(iter: T) -> Self {
        Annotation {
            segments: iter
                .into_iter()
                .map(|(interval, label)| AnnotatedSegment { interval, label })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerReport {
    pub der: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub missed: f64,
    /// Reference speaker time in the scored region, seconds.
    pub total_reference: f64,
    /// Hypothesis label → reference label.
    pub mapping: BTreeMap<String, String>,
}

/// Excluded time: `[b − collar, b + collar]` around every reference boundary,
/// merged. Empty when `collar` is zero.
pub fn apply_collar(reference: &Annotation, collar: f64) -> Vec<(f64, f64)> {
    if collar <= 0.0 {
        return Vec::new();
    }
    let mut spans: Vec<(f64, f64)> = reference
        .segments
        .iter()
        .flat_map(|s| [s.interval.start, s.interval.end])
        .map(|b| (b - collar, b + collar))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Label order that depends only on each label's segments, not its name.
fn canonical_labels(ann: &Annotation) -> Vec<String> {
    let mut by_label: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &ann.segments {
        by_label
            .entry(&s.label)
            .or_default()
            .push((s.interval.start, s.interval.end));
    }
    let mut keyed: Vec<(Vec<(f64, f64)>, &str)> = by_label
        .into_iter()
        .map(|(l, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            (v, l)
        })
        .collect();
    keyed.sort_by(|a, b| {
        for (x, y) in a.0.iter().zip(&b.0) {
            let o = x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1));
            if o.is_ne() {
                return o;
            }
        }
        a.0.len().cmp(&b.0.len())
    });
    keyed.into_iter().map(|(_, l)| l.to_string()).collect()
}

/// A stretch of scored time with constant speaker activity.
struct Stretch {
    duration: f64,
    reference: Vec<usize>,
    hypothesis: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Track {
    Reference(usize),
    Hypothesis(usize),
    Mask,
}

fn sweep(
    reference: &Annotation,
    ref_labels: &[String],
    hypothesis: &Annotation,
    hyp_labels: &[String],
    mask: &[(f64, f64)],
) -> Vec<Stretch> {
    let index = |labels: &[String], l: &str| labels.iter().position(|x| x == l).expect("known label");
    let mut events: Vec<(f64, i32, Track)> = Vec::new();
    for s in &reference.segments {
        let t = Track::Reference(index(ref_labels, &s.label));
        events.push((s.interval.start, 1, t));
        events.push((s.interval.end, -1, t));
    }
    for s in &hypothesis.segments {
        let t = Track::Hypothesis(index(hyp_labels, &s.label));
        events.push((s.interval.start, 1, t));
        events.push((s.interval.end, -1, t));
    }
    for &(a, b) in mask {
        events.push((a, 1, Track::Mask));
        events.push((b, -1, Track::Mask));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut ref_count = vec![0i32; ref_labels.len()];
    let mut hyp_count = vec![0i32; hyp_labels.len()];
    let mut masked = 0i32;
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            let (_, d, track) = events[i];
            match track {
                Track::Reference(k) => ref_count[k] += d,
                Track::Hypothesis(k) => hyp_count[k] += d,
                Track::Mask => masked += d,
            }
            i += 1;
        }
        let Some(&(next, _, _)) = events.get(i) else {
            break;
        };
        if masked > 0 || next <= t {
            continue;
        }
        let active = |c: &[i32]| -> Vec<usize> {
            c.iter()
                .enumerate()
                .filter(|(_, n)| **n > 0)
                .map(|(k, _)| k)
                .collect()
        };
        let reference = active(&ref_count);
        let hypothesis = active(&hyp_count);
        if reference.is_empty() && hypothesis.is_empty() {
            continue;
        }
        out.push(Stretch {
            duration: next - t,
            reference,
            hypothesis,
        });
    }
    out
}

fn cooccurrence(stretches: &[Stretch], n_hyp: usize, n_ref: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n_ref]; n_hyp];
    for s in stretches {
        for &h in &s.hypothesis {
            for &r in &s.reference {
                m[h][r] += s.duration;
            }
        }
    }
    m
}

fn solve_mapping(co: &[Vec<f64>]) -> Vec<Option<usize>> {
    let mut map = vec![None; co.len()];
    for (h, r) in assignment::max_weight_assignment(co) {
        if co[h][r] > 0.0 {
            map[h] = Some(r);
        }
    }
    map
}

/// One-to-one hypothesis → reference mapping maximizing total co-occurring
/// time over the whole timeline (no collar).
pub fn optimal_mapping(reference: &Annotation, hypothesis: &Annotation) -> BTreeMap<String, String> {
    optimal_mapping_masked(reference, hypothesis, &[])
}

fn optimal_mapping_masked(
    reference: &Annotation,
    hypothesis: &Annotation,
    mask: &[(f64, f64)],
) -> BTreeMap<String, String> {
    let ref_labels = canonical_labels(reference);
    let hyp_labels = canonical_labels(hypothesis);
    let stretches = sweep(reference, &ref_labels, hypothesis, &hyp_labels, mask);
    let co = cooccurrence(&stretches, hyp_labels.len(), ref_labels.len());
    solve_mapping(&co)
        .into_iter()
        .enumerate()
        .filter_map(|(h, r)| Some((hyp_labels[h].clone(), ref_labels[r?].clone())))
        .collect()
}

/// Diarization error rate. The mapping is optimized over the scored
/// (collar-excluded) region.
pub fn der(reference: &Annotation, hypothesis: &Annotation, collar: f64) -> Result<DerReport, MetricsError> {
    let mask = apply_collar(reference, collar);
    let ref_labels = canonical_labels(reference);
    let hyp_labels = canonical_labels(hypothesis);
    let stretches = sweep(reference, &ref_labels, hypothesis, &hyp_labels, &mask);
    let co = cooccurrence(&stretches, hyp_labels.len(), ref_labels.len());
    let map = solve_mapping(&co);

    let (mut total, mut missed, mut fa, mut conf) = (0.0, 0.0, 0.0, 0.0);
    for s in &stretches {
        let nr = s.reference.len();
        let nh = s.hypothesis.len();
        let correct = s
            .hypothesis
            .iter()
            .filter(|&&h| map[h].is_some_and(|r| s.reference.contains(&r)))
            .count();
        total += s.duration * nr as f64;
        missed += s.duration * nr.saturating_sub(nh) as f64;
        fa += s.duration * nh.saturating_sub(nr) as f64;
        conf += s.duration * (nr.min(nh) - correct) as f64;
    }
    if total <= 0.0 {
        return Err(MetricsError::EmptyReference);
    }
    let mapping = map
        .iter()
        .enumerate()
        .filter_map(|(h, r)| Some((hyp_labels[h].clone(), ref_labels[(*r)?].clone())))
        .collect();
    Ok(DerReport {
        der: (missed + fa + conf) / total,
        false_alarm: fa / total,
        confusion: conf / total,
        missed: missed / total,
        total_reference: total,
        mapping,
    })
}

/// Word-level edit distance over normalized tokens divided by reference length.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64, MetricsError> {
    let r = normalize_tokens(reference.iter().map(AsRef::as_ref));
    let h = normalize_tokens(hypothesis.iter().map(AsRef::as_ref));
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance_seq(&r, &h) as f64 / r.len() as f64)
}

pub fn relative_reduction(baseline: f64, improved: f64) -> Result<f64, MetricsError> {
    if !(baseline > 0.0) {
        return Err(MetricsError::DivisionByZero);
    }
    Ok((baseline - improved) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub der: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub missed: f64,
}

/// Micro (reference-time weighted) and macro (per-file mean) averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDer {
    pub files: usize,
    pub total_reference: f64,
    pub micro: ErrorBreakdown,
    pub macro_avg: ErrorBreakdown,
}

pub fn aggregate(reports: &[DerReport]) -> Option<AggregateDer> {
    if reports.is_empty() {
        return None;
    }
    let total: f64 = reports.iter().map(|r| r.total_reference).sum();
    let weighted = |f: fn(&DerReport) -> f64| {
        reports.iter().map(|r| f(r) * r.total_reference).sum::<f64>() / total
    };
    let mean = |f: fn(&DerReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    Some(AggregateDer {
        files: reports.len(),
        total_reference: total,
        micro: ErrorBreakdown {
            der: weighted(|r| r.der),
            false_alarm: weighted(|r| r.false_alarm),
            confusion: weighted(|r| r.confusion),
            missed: weighted(|r| r.missed),
        },
        macro_avg: ErrorBreakdown {
            der: mean(|r| r.der),
            false_alarm: mean(|r| r.false_alarm),
            confusion: mean(|r| r.confusion),
            missed: mean(|r| r.missed),
        },
    })
}

/// Plain-text table in percent: DER, FA, Conf., Miss Det. and optionally WER.
pub fn format_table(rows: &[(String, &DerReport, Option<f64>)]) -> String {
    let with_wer = rows.iter().any(|r| r.2.is_some());
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<name_w$} | {:>7} | {:>7} | {:>7} | {:>9}",
        "System", "DER", "FA", "Conf.", "Miss Det."
    );
    if with_wer {
        let _ = write!(out, " | {:>7}", "WER");
    }
    out.push('\n');
    for (name, r, w) in rows {
        let _ = write!(
            out,
            "{:<name_w$} | {:>7.2} | {:>7.2} | {:>7.2} | {:>9.2}",
            name,
            r.der * 100.0,
            r.false_alarm * 100.0,
            r.confusion * 100.0,
            r.missed * 100.0
        );
        if with_wer {
            match w {
                Some(w) => {
                    let _ = write!(out, " | {:>7.2}", w * 100.0);
                }
                None => {
                    let _ = write!(out, " | {:>7}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
