//! LLM prompts for identity detection and low-confidence segment labeling,
//! response parsing and the confidence gate.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, LanguageModel};
use crate::model::{DiarSegment, Identity, IdentityMap, SpeakerLabel, TimeInterval};

/// Stands in for the speaker label on the line being adjudicated.
pub const TARGET_MARKER: &str = "<TARGET>";

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdjudicatorError {
    #[error("no JSON object found in LLM response: {raw:?}")]
    UnparseableResponse { raw: String },
    #[error("identity map is missing labels: {missing:?}")]
    IncompleteMap { missing: Vec<String> },
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Prompt texts with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub identity: String,
    pub safeguards: String,
    pub label_segment: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            identity: include_str!("../resources/identity_v1.txt").to_string(),
            safeguards: include_str!("../resources/safeguards_v1.txt").to_string(),
            label_segment: include_str!("../resources/label_segment_v1.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by any of `identity.txt`, `safeguards.txt`,
    /// `label_segment.txt` found in `dir`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("identity.txt", &mut t.identity),
            ("safeguards.txt", &mut t.safeguards),
            ("label_segment.txt", &mut t.label_segment),
        ] {
            let p = dir.join(name);
            if p.exists() {
                *slot = fs::read_to_string(p)?;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjudicatorConfig {
    pub context_before: usize,
    pub context_after: usize,
    /// Word cap for the labeling excerpt, target included.
    pub context_word_limit: usize,
    /// Transcripts longer than this keep only the first and last half of it.
    pub identity_word_budget: usize,
    pub safeguards: bool,
}

impl Default for AdjudicatorConfig {
    fn default() -> Self {
        Self {
            context_before: 6,
            context_after: 6,
            context_word_limit: 2000,
            identity_word_budget: 8000,
            safeguards: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDetectionResult {
    pub map: IdentityMap,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmLabelResult {
    pub segment_id: usize,
    pub llm_label: SpeakerLabel,
    pub confidence: f64,
    pub raw_response: String,
}

pub fn is_confident(r: &LlmLabelResult, threshold: f64) -> bool {
    r.confidence >= threshold
}

/// One parsed `[start-end] label: text` line.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptLine {
    pub interval: TimeInterval,
    pub label: String,
    pub text: String,
}

static LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\[(\d+(?:\.\d+)?)-(\d+(?:\.\d+)?)\] ([^:]+): ?(.*)$").expect("valid regex")
});

pub fn format_transcript_line(interval: &TimeInterval, label: &str, text: &str) -> String {
    format!("[{:.2}-{:.2}] {}: {}", interval.start, interval.end, label, text)
}

pub fn parse_transcript_line(line: &str) -> Option<TranscriptLine> {
    let caps = LINE_RE.captures(line.trim_end())?;
    let start: f64 = caps[1].parse().ok()?;
    let end: f64 = caps[2].parse().ok()?;
    Some(TranscriptLine {
        interval: TimeInterval::new(start, end).ok()?,
        label: caps[3].to_string(),
        text: caps[4].to_string(),
    })
}

/// First syntactically valid JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Option<serde_json::Value> {
    for (i, _) in text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(v @ serde_json::Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn known_labels(segments: &[DiarSegment]) -> Vec<SpeakerLabel> {
    segments
        .iter()
        .map(|s| s.label.clone())
        .filter(|l| !l.is_unknown())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn join_labels(labels: &[SpeakerLabel]) -> String {
    labels
        .iter()
        .map(SpeakerLabel::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Transcript lines, keeping only the first and last `budget / 2` words
/// when the transcript exceeds `budget` words.
fn serialize_transcript(segments: &[DiarSegment], budget: usize) -> String {
    let total: usize = segments.iter().map(|s| s.words.len()).sum();
    if total <= budget {
        return segments
            .iter()
            .map(|s| format_transcript_line(&s.interval, s.label.as_str(), &s.text()))
            .collect::<Vec<_>>()
            .join("\n");
    }
    let head = budget / 2;
    let tail_from = total - (budget - head);
    let line = |s: &DiarSegment, words: Vec<&str>| {
        format_transcript_line(&s.interval, s.label.as_str(), &words.join(" "))
    };
    let mut lines = Vec::new();
    let mut seen = 0usize;
    let mut marker_done = false;
    for s in segments {
        let n = s.words.len();
        let (mut head_part, mut tail_part) = (Vec::new(), Vec::new());
        for (i, w) in s.words.iter().enumerate() {
            if seen + i < head {
                head_part.push(w.text.as_str());
            } else if seen + i >= tail_from {
                tail_part.push(w.text.as_str());
            }
        }
        if !head_part.is_empty() {
            lines.push(line(s, head_part));
        }
        if !marker_done && seen + n > head {
            lines.push(format!("... {} words omitted ...", tail_from - head));
            marker_done = true;
        }
        if !tail_part.is_empty() {
            lines.push(line(s, tail_part));
        }
        seen += n;
    }
    lines.join("\n")
}

pub fn build_identity_prompt(
    transcript: &[DiarSegment],
    config: &AdjudicatorConfig,
    templates: &PromptTemplates,
) -> String {
    let safeguards = if config.safeguards {
        templates.safeguards.trim_end()
    } else {
        ""
    };
    templates
        .identity
        .replace("{safeguards}", safeguards)
        .replace("{labels}", &join_labels(&known_labels(transcript)))
        .replace(
            "{transcript}",
            &serialize_transcript(transcript, config.identity_word_budget),
        )
}

const RETRY_UNPARSEABLE: &str =
    "\n\nYour previous answer could not be parsed. Reply with only the JSON object.";

fn parse_identity_map(
    value: &serde_json::Value,
    required: &[SpeakerLabel],
) -> Result<IdentityMap, Vec<String>> {
    let obj = value.as_object().expect("extract_json_object returns objects");
    let mut map = IdentityMap::new();
    let mut missing = Vec::new();
    for label in required {
        match obj
            .get(label.as_str())
            .and_then(|v| v.as_str())
            .and_then(|s| Identity::new(s.trim()).ok())
        {
            Some(id) => map.insert(label.clone(), id),
            None => missing.push(label.as_str().to_string()),
        }
    }
    if missing.is_empty() {
        Ok(map)
    } else {
        Err(missing)
    }
}

/// Asks the LLM for a label → identity dictionary covering every label in
/// `transcript`. Re-prompts once on an unparseable or incomplete answer.
pub fn detect_identities(
    transcript: &[DiarSegment],
    llm: &dyn LanguageModel,
    config: &AdjudicatorConfig,
    templates: &PromptTemplates,
) -> Result<IdentityDetectionResult, AdjudicatorError> {
    if transcript.is_empty() {
        return Err(AdjudicatorError::EmptyTranscript);
    }
    let required = known_labels(transcript);
    let prompt = build_identity_prompt(transcript, config, templates);
    let mut last_err = None;
    let mut current = prompt.clone();
    for _ in 0..2 {
        let resp = llm.complete(&current)?;
        let Some(value) = resp.parsed.clone().or_else(|| extract_json_object(&resp.text)) else {
            last_err = Some(AdjudicatorError::UnparseableResponse { raw: resp.text });
            current = format!("{prompt}{RETRY_UNPARSEABLE}");
            continue;
        };
        match parse_identity_map(&value, &required) {
            Ok(map) => {
                return Ok(IdentityDetectionResult {
                    map,
                    raw_response: resp.text,
                })
            }
            Err(missing) => {
                current = format!(
                    "{prompt}\n\nYour previous answer did not assign an identity to: {}. \
                     Reply with a JSON object covering every speaker label.",
                    missing.join(", ")
                );
                last_err = Some(AdjudicatorError::IncompleteMap { missing });
            }
        }
    }
    Err(last_err.expect("loop ran"))
}

/// Indices of the excerpt around `target`, trimmed from the far ends until
/// the word count fits `config.context_word_limit`.
fn context_window(segments: &[DiarSegment], target: usize, config: &AdjudicatorConfig) -> Vec<usize> {
    let lo = target.saturating_sub(config.context_before);
    let hi = (target + config.context_after).min(segments.len() - 1);
    let mut idx: Vec<usize> = (lo..=hi).collect();
    let words = |ix: &[usize]| ix.iter().map(|&i| segments[i].words.len()).sum::<usize>();
    while words(&idx) > config.context_word_limit && idx.len() > 1 {
        let first = idx[0];
        let last = *idx.last().expect("non-empty");
        if last != target && (first == target || last - target > target - first) {
            idx.pop();
        } else {
            idx.remove(0);
        }
    }
    idx
}

pub fn build_label_prompt(
    segments: &[DiarSegment],
    target: usize,
    config: &AdjudicatorConfig,
    templates: &PromptTemplates,
) -> String {
    let context = context_window(segments, target, config)
        .into_iter()
        .map(|i| {
            let s = &segments[i];
            let label = if i == target {
                TARGET_MARKER
            } else {
                s.label.as_str()
            };
            format_transcript_line(&s.interval, label, &s.text())
        })
        .collect::<Vec<_>>()
        .join("\n");
    templates
        .label_segment
        .replace("{labels}", &join_labels(&known_labels(segments)))
        .replace("{context}", &context)
}

enum LabelParse {
    Ok(SpeakerLabel, f64),
    Invalid,
}

fn parse_label_answer(value: &serde_json::Value, known: &[SpeakerLabel]) -> LabelParse {
    let Some(label) = value.get("label").and_then(|v| v.as_str()) else {
        return LabelParse::Invalid;
    };
    let confidence = match value.get("confidence") {
        Some(serde_json::Value::Number(n)) => n.as_f64(),
        Some(serde_json::Value::String(s)) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    let Some(confidence) = confidence.filter(|c| (0.0..=1.0).contains(c)) else {
        return LabelParse::Invalid;
    };
    let label = SpeakerLabel::new(label.trim());
    if label.is_unknown() || known.contains(&label) {
        LabelParse::Ok(label, confidence)
    } else {
        // outside the recording's label set
        LabelParse::Ok(SpeakerLabel::unknown(), 0.0)
    }
}

/// Asks the LLM who spoke `segments[target]`. Two unparseable answers yield
/// `Unknown` with confidence 0; backend failures propagate.
pub fn label_segment(
    segments: &[DiarSegment],
    target: usize,
    llm: &dyn LanguageModel,
    config: &AdjudicatorConfig,
    templates: &PromptTemplates,
) -> Result<LlmLabelResult, AdjudicatorError> {
    let known = known_labels(segments);
    let prompt = build_label_prompt(segments, target, config, templates);
    let mut current = prompt.clone();
    let mut raw = String::new();
    for _ in 0..2 {
        let resp = llm.complete(&current)?;
        raw = resp.text.clone();
        let parsed = resp.parsed.or_else(|| extract_json_object(&resp.text));
        if let Some(LabelParse::Ok(llm_label, confidence)) =
            parsed.as_ref().map(|v| parse_label_answer(v, &known))
        {
            return Ok(LlmLabelResult {
                segment_id: target,
                llm_label,
                confidence,
                raw_response: raw,
            });
        }
        current = format!("{prompt}{RETRY_UNPARSEABLE}");
    }
    Ok(LlmLabelResult {
        segment_id: target,
        llm_label: SpeakerLabel::unknown(),
        confidence: 0.0,
        raw_response: raw,
    })
}
