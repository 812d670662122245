//! RTTM `SPEAKER` records.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::TimeInterval;

use super::Annotation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RttmError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RttmRecord {
    pub file: String,
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

/// Parses `SPEAKER` lines; blank lines, `#` comments and other record
/// types are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmRecord>, RttmError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| RttmError::Parse { line, message };
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') || fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(err(format!("expected at least 8 fields, got {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64, RttmError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("bad {what} {s:?}")))
        };
        out.push(RttmRecord {
            file: fields[1].to_string(),
            onset: num(fields[3], "onset")?,
            duration: num(fields[4], "duration")?,
            label: fields[7].to_string(),
        });
    }
    Ok(out)
}

pub fn records_to_annotation(records: &[RttmRecord]) -> Annotation {
    records
        .iter()
        .filter_map(|r| {
            TimeInterval::new(r.onset, r.onset + r.duration)
                .ok()
                .map(|iv| (iv, r.label.clone()))
        })
        .collect()
}

/// Whitespace inside labels becomes `_` so each record stays one token wide.
pub fn write_rttm(file: &str, annotation: &Annotation) -> String {
    let mut out = String::new();
    for s in &annotation.segments {
        let label: String = s
            .label
            .chars()
            .map(|c| if c.is_whitespace() { '_' } else { c })
            .collect();
        let _ = writeln!(
            out,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            file,
            s.interval.start,
            s.interval.duration(),
            label
        );
    }
    out
}
