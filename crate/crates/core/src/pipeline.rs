//! End-to-end orchestration of one recording, with per-stage snapshots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::{
    detect_identities, label_segment, AdjudicatorConfig, AdjudicatorError, LlmLabelResult,
    PromptTemplates, DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::backends::{
    AudioRef, BackendConfig, BackendError, Diarizer, LanguageModel, SpeakerEmbedder, Transcriber,
};
use crate::chunkrec::{
    chunk_speakers, plan_chunks, stitch, unify_labels, ChunkError, ChunkPlan,
    DEFAULT_CHUNK_LENGTH, DEFAULT_CLUSTER_THRESHOLD, DEFAULT_OVERLAP,
};
use crate::metrics::{self, Annotation, DerReport, MetricsError};
use crate::model::{DiarSegment, Embedding, IdentityMap, Word};
use crate::reconcile::{
    align, rerun_mismatches, ReconcileOutput, Resolution, DEFAULT_ORPHAN_GAP,
    DEFAULT_SIMILARITY_THRESHOLD,
};
use crate::refine::{
    clean_duplicates_with_audit, decide, merge_adjacent, AdjudicationRecord, FinalSegment,
    Provenance, RefineError,
};
use crate::reverify::{reverify_all, ReverifyError, ReverifyResult, DEFAULT_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub chunk_length: f64,
    pub overlap: f64,
    pub knn_k: usize,
    pub llm_confidence_threshold: f64,
    pub levenshtein_threshold: f64,
    pub collar: f64,
    pub orphan_gap: f64,
    pub cluster_threshold: f64,
    /// Largest gap bridged when merging same-identity neighbors.
    pub merge_gap: f64,
    /// Concurrent re-run and embedding calls.
    pub parallelism: usize,
    pub safeguards: bool,
    pub context_before: usize,
    pub context_after: usize,
    pub context_word_limit: usize,
    pub identity_word_budget: usize,
    /// Directory with prompt overrides.
    pub prompt_dir: Option<PathBuf>,
    pub llm: Option<BackendConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let adj = AdjudicatorConfig::default();
        Self {
            chunk_length: DEFAULT_CHUNK_LENGTH,
            overlap: DEFAULT_OVERLAP,
            knn_k: DEFAULT_K,
            llm_confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            levenshtein_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            collar: metrics::DEFAULT_COLLAR,
            orphan_gap: DEFAULT_ORPHAN_GAP,
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            merge_gap: 0.0,
            parallelism: 4,
            safeguards: false,
            context_before: adj.context_before,
            context_after: adj.context_after,
            context_word_limit: adj.context_word_limit,
            identity_word_budget: adj.identity_word_budget,
            prompt_dir: None,
            llm: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = [
            ("llm_confidence_threshold", self.llm_confidence_threshold),
            ("levenshtein_threshold", self.levenshtein_threshold),
            ("cluster_threshold", self.cluster_threshold),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("chunk_length", self.chunk_length), ("orphan_gap", self.orphan_gap)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("overlap", self.overlap),
            ("collar", self.collar),
            ("merge_gap", self.merge_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.overlap >= self.chunk_length {
            return Err(format!(
                "overlap {} must be shorter than chunk_length {}",
                self.overlap, self.chunk_length
            ));
        }
        if self.knn_k == 0 {
            return Err("knn_k must be at least 1".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if let Some(llm) = &self.llm {
            llm.validate().map_err(|e| format!("llm: {e}"))?;
        }
        Ok(())
    }

    pub fn adjudicator(&self) -> AdjudicatorConfig {
        AdjudicatorConfig {
            context_before: self.context_before,
            context_after: self.context_after,
            context_word_limit: self.context_word_limit,
            identity_word_budget: self.identity_word_budget,
            safeguards: self.safeguards,
        }
    }

    pub fn templates(&self) -> std::io::Result<PromptTemplates> {
        match &self.prompt_dir {
            Some(dir) => PromptTemplates::from_dir(dir),
            None => Ok(PromptTemplates::default()),
        }
    }
}

pub struct Backends<'a> {
    pub diarizer: &'a dyn Diarizer,
    pub transcriber: &'a dyn Transcriber,
    pub embedder: &'a dyn SpeakerEmbedder,
    pub llm: &'a dyn LanguageModel,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Adjudicator(#[from] AdjudicatorError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Reverify(#[from] ReverifyError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    pub source: StageError,
    /// Snapshots of every stage that completed.
    pub trace: Box<PipelineTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub stage: String,
    pub data: serde_json::Value,
}

/// Stage snapshots in execution order. Segment ids are positions in the
/// `rerun` snapshot's segment list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub stages: Vec<StageSnapshot>,
}

impl PipelineTrace {
    pub fn get(&self, stage: &str) -> Option<&serde_json::Value> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| &s.data)
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.stage.as_str()).collect()
    }
}

pub const STAGES: [&str; 10] = [
    "diarize",
    "transcribe",
    "align",
    "rerun",
    "reverify",
    "detect_identities",
    "label_segments",
    "refine",
    "merge",
    "dedup",
];

struct Tracer<'a> {
    trace: PipelineTrace,
    dir: Option<&'a Path>,
}

impl Tracer<'_> {
    fn fail(&self, stage: &str, source: impl Into<StageError>) -> PipelineError {
        PipelineError {
            stage: stage.to_string(),
            source: source.into(),
            trace: Box::new(self.trace.clone()),
        }
    }

    fn record<T: Serialize>(&mut self, stage: &str, value: &T) -> Result<(), PipelineError> {
        let data = serde_json::to_value(value).expect("snapshot serializes");
        if let Some(dir) = self.dir {
            let n = self.trace.stages.len() + 1;
            let path = dir.join(format!("{n:02}-{stage}.json"));
            let text = serde_json::to_string_pretty(&data).expect("value serializes");
            fs::create_dir_all(dir)
                .and_then(|_| fs::write(&path, text))
                .map_err(|source| self.fail(stage, StageError::Io { path, source }))?;
        }
        self.trace.stages.push(StageSnapshot {
            stage: stage.to_string(),
            data,
        });
        Ok(())
    }
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, BackendError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BackendError::Unavailable(e.to_string()))
}

/// One embedding per segment; `None` for windows below the extractor minimum.
pub fn embed_segments(
    embedder: &dyn SpeakerEmbedder,
    audio: &AudioRef,
    segments: &[DiarSegment],
    parallelism: usize,
) -> Result<Vec<Option<Embedding>>, BackendError> {
    let min = embedder.min_window();
    pool(parallelism)?.install(|| {
        segments
            .par_iter()
            .map(|s| {
                if s.interval.duration() < min {
                    return Ok(None);
                }
                match embedder.embed(audio, s.interval) {
                    Ok(e) => Ok(Some(e)),
                    Err(BackendError::WindowTooShort { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkedDiarization {
    pub plan: ChunkPlan,
    /// `(chunk, local label, global label)` triples.
    pub mapping: Vec<(usize, String, String)>,
    pub segments: Vec<DiarSegment>,
}

#[derive(Debug, Error)]
pub enum ChunkedError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

impl From<ChunkedError> for StageError {
    fn from(e: ChunkedError) -> Self {
        match e {
            ChunkedError::Backend(b) => StageError::Backend(b),
            ChunkedError::Chunk(c) => StageError::Chunk(c),
        }
    }
}

/// Diarizes window by window and unifies chunk-local labels by clustering
/// per-chunk speaker embeddings. A recording that fits one window is
/// diarized in a single call with labels untouched.
pub fn chunked_diarization(
    audio: &AudioRef,
    diarizer: &dyn Diarizer,
    embedder: &dyn SpeakerEmbedder,
    config: &PipelineConfig,
) -> Result<ChunkedDiarization, ChunkedError> {
    audio.validate()?;
    let plan = plan_chunks(audio.duration, config.chunk_length, config.overlap)?;
    if plan.windows.len() == 1 {
        let segments = diarizer.diarize(audio, None)?;
        return Ok(ChunkedDiarization {
            plan,
            mapping: Vec::new(),
            segments,
        });
    }
    let mut per_chunk = Vec::with_capacity(plan.windows.len());
    let mut speakers = Vec::new();
    for (ci, w) in plan.windows.iter().enumerate() {
        let segs = diarizer.diarize(audio, Some(*w))?;
        let embs = embed_segments(embedder, audio, &segs, config.parallelism)?;
        speakers.extend(chunk_speakers(ci, &segs, &embs));
        per_chunk.push((ci, segs));
    }
    let mapping = unify_labels(&speakers, config.cluster_threshold)?;
    let segments = stitch(&per_chunk, &mapping, &plan);
    Ok(ChunkedDiarization {
        plan,
        mapping: mapping
            .iter()
            .map(|((c, l), g)| (*c, l.as_str().to_string(), g.as_str().to_string()))
            .collect(),
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RerunSnapshot {
    resolutions: Vec<RerunEntry>,
    segments: Vec<DiarSegment>,
    dropped: Vec<DiarSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RerunEntry {
    /// Position in the `align` snapshot.
    align_index: usize,
    kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub segment_id: usize,
    pub record: AdjudicationRecord,
    pub identity: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DedupSnapshot {
    /// `(removed, witness)` positions in the `merge` snapshot.
    removed: Vec<(usize, usize)>,
    kept_segment_ids: Vec<Vec<usize>>,
}

/// Diarization, recognition, alignment and re-run recognition; the
/// reconciled segments with their raw diarizer labels.
fn reconcile_stages(
    audio: &AudioRef,
    backends: &Backends<'_>,
    config: &PipelineConfig,
    tracer: &mut Tracer<'_>,
) -> Result<ReconcileOutput, PipelineError> {
    let sd = chunked_diarization(audio, backends.diarizer, backends.embedder, config)
        .map_err(|e| tracer.fail("diarize", e))?;
    tracer.record("diarize", &sd)?;

    let words: Vec<Word> = backends
        .transcriber
        .transcribe(audio, None)
        .map_err(|e| tracer.fail("transcribe", e))?;
    tracer.record("transcribe", &words)?;

    let aligned = align(&sd.segments, &words, config.orphan_gap);
    tracer.record("align", &aligned)?;

    let indices: Vec<usize> = aligned.mismatches.iter().map(|m| m.index).collect();
    let (out, resolutions) = rerun_mismatches(
        aligned,
        backends.transcriber,
        audio,
        config.levenshtein_threshold,
        config.parallelism,
    )
    .map_err(|e| tracer.fail("rerun", e))?;
    tracer.record(
        "rerun",
        &RerunSnapshot {
            resolutions: indices
                .into_iter()
                .zip(&resolutions)
                .map(|(align_index, r)| RerunEntry {
                    align_index,
                    kept: matches!(r, Resolution::Keep(_)),
                })
                .collect(),
            segments: out.segments.clone(),
            dropped: out.dropped.clone(),
        },
    )?;
    Ok(out)
}

/// The SD+ASR baseline: reconciled segments labeled by the diarizer.
pub fn run_baseline(
    audio: &AudioRef,
    backends: &Backends<'_>,
    config: &PipelineConfig,
) -> Result<Vec<DiarSegment>, PipelineError> {
    let mut tracer = Tracer {
        trace: PipelineTrace::default(),
        dir: None,
    };
    if let Err(e) = config.validate() {
        return Err(tracer.fail("config", StageError::Config(e)));
    }
    Ok(reconcile_stages(audio, backends, config, &mut tracer)?.segments)
}

/// Runs every stage on one recording. With `trace_dir`, each snapshot is
/// written there as soon as its stage completes.
pub fn run_pipeline(
    audio: &AudioRef,
    backends: &Backends<'_>,
    config: &PipelineConfig,
    trace_dir: Option<&Path>,
) -> Result<(Vec<FinalSegment>, IdentityMap, PipelineTrace), PipelineError> {
    let mut tracer = Tracer {
        trace: PipelineTrace::default(),
        dir: trace_dir,
    };
    if let Err(e) = config.validate() {
        return Err(tracer.fail("config", StageError::Config(e)));
    }
    let templates = config.templates().map_err(|source| {
        tracer.fail(
            "config",
            StageError::Io {
                path: config.prompt_dir.clone().unwrap_or_default(),
                source,
            },
        )
    })?;
    let adj = config.adjudicator();

    let segments = reconcile_stages(audio, backends, config, &mut tracer)?.segments;

    let labels: Vec<_> = segments.iter().map(|s| s.label.clone()).collect();
    let reverified: Vec<ReverifyResult> = embed_segments(
        backends.embedder,
        audio,
        &segments,
        config.parallelism,
    )
    .map_err(StageError::from)
    .and_then(|embs| reverify_all(&labels, &embs, config.knn_k).map_err(StageError::from))
    .map_err(|e| tracer.fail("reverify", e))?;
    tracer.record("reverify", &reverified)?;

    let identities = detect_identities(&segments, backends.llm, &adj, &templates)
        .map_err(|e| tracer.fail("detect_identities", e))?;
    tracer.record("detect_identities", &identities)?;
    let map = identities.map;

    let mut llm_results: BTreeMap<usize, LlmLabelResult> = BTreeMap::new();
    for r in reverified.iter().filter(|r| r.low_confidence) {
        let res = label_segment(&segments, r.segment_id, backends.llm, &adj, &templates)
            .map_err(|e| tracer.fail("label_segments", e))?;
        llm_results.insert(r.segment_id, res);
    }
    tracer.record("label_segments", &llm_results.values().collect::<Vec<_>>())?;

    let mut refined = Vec::with_capacity(segments.len());
    let mut decisions = Vec::with_capacity(segments.len());
    for (seg, rv) in segments.iter().zip(&reverified) {
        let record = AdjudicationRecord {
            segment_id: rv.segment_id,
            original: rv.original.clone(),
            reverified: rv.reverified.clone(),
            llm: llm_results.get(&rv.segment_id).cloned(),
        };
        let (identity, provenance) = decide(&record, &map, config.llm_confidence_threshold)
            .map_err(|e| tracer.fail("refine", e))?;
        decisions.push(Decision {
            segment_id: rv.segment_id,
            record: record.clone(),
            identity: identity.as_str().to_string(),
            provenance,
        });
        refined.push(FinalSegment {
            interval: seg.interval,
            identity,
            words: seg.words.clone(),
            provenance,
            segment_ids: vec![rv.segment_id],
        });
    }
    tracer.record("refine", &decisions)?;

    let merged = merge_adjacent(&refined, config.merge_gap);
    tracer.record("merge", &merged)?;

    let (kept, removed) = clean_duplicates_with_audit(&merged);
    tracer.record(
        "dedup",
        &DedupSnapshot {
            removed,
            kept_segment_ids: kept.iter().map(|s| s.segment_ids.clone()).collect(),
        },
    )?;
    Ok((kept, map, tracer.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputWord {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSegment {
    pub start: f64,
    pub end: f64,
    pub identity: String,
    pub provenance: Provenance,
    pub words: Vec<OutputWord>,
}

/// Final per-recording document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub recording: String,
    pub segments: Vec<OutputSegment>,
    pub identity_map: BTreeMap<String, String>,
    pub config_echo: PipelineConfig,
}

impl PipelineOutput {
    pub fn new(
        recording: impl Into<String>,
        segments: &[FinalSegment],
        map: &IdentityMap,
        config: &PipelineConfig,
    ) -> Self {
        Self {
            recording: recording.into(),
            segments: segments
                .iter()
                .map(|s| OutputSegment {
                    start: s.start(),
                    end: s.end(),
                    identity: s.identity.as_str().to_string(),
                    provenance: s.provenance,
                    words: s
                        .words
                        .iter()
                        .map(|w| OutputWord {
                            text: w.text.clone(),
                            start: w.start(),
                            end: w.end(),
                        })
                        .collect(),
                })
                .collect(),
            identity_map: map
                .iter()
                .map(|(l, i)| (l.as_str().to_string(), i.as_str().to_string()))
                .collect(),
            config_echo: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("output serializes");
        s.push('\n');
        s
    }

    pub fn annotation(&self) -> Annotation {
        self.segments
            .iter()
            .filter_map(|s| {
                crate::model::TimeInterval::new(s.start, s.end)
                    .ok()
                    .map(|iv| (iv, s.identity.clone()))
            })
            .collect()
    }

    pub fn to_rttm(&self) -> String {
        metrics::write_rttm(&self.recording, &self.annotation())
    }
}

pub fn final_annotation(segments: &[FinalSegment]) -> Annotation {
    segments
        .iter()
        .map(|s| (s.interval, s.identity.as_str().to_string()))
        .collect()
}

pub fn label_annotation(segments: &[DiarSegment]) -> Annotation {
    segments
        .iter()
        .map(|s| (s.interval, s.label.as_str().to_string()))
        .collect()
}

pub struct SweepItem<'a> {
    pub audio: AudioRef,
    pub reference: Annotation,
    pub diarizer: &'a dyn Diarizer,
    pub embedder: &'a dyn SpeakerEmbedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chunk_length: f64,
    /// Reference-time weighted over the set.
    pub der: f64,
    pub reports: Vec<DerReport>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("at least one chunk length is required")]
    NoLengths,
    #[error("chunk length {length}: {source}")]
    Diarization { length: f64, source: ChunkedError },
    #[error("chunk length {length}: {source}")]
    Scoring { length: f64, source: MetricsError },
}

/// Chunked diarization and scoring per chunk length, rows in input order.
pub fn sweep_chunks(
    items: &[SweepItem<'_>],
    lengths: &[f64],
    config: &PipelineConfig,
) -> Result<Vec<SweepRow>, SweepError> {
    if lengths.is_empty() {
        return Err(SweepError::NoLengths);
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::with_capacity(lengths.len());
    for &length in lengths {
        let cfg = PipelineConfig {
            chunk_length: length,
            ..config.clone()
        };
        let mut reports = Vec::with_capacity(items.len());
        for item in items {
            let sd = chunked_diarization(&item.audio, item.diarizer, item.embedder, &cfg)
                .map_err(|source| SweepError::Diarization { length, source })?;
            let hyp = label_annotation(&sd.segments);
            let rep = metrics::der(&item.reference, &hyp, cfg.collar)
                .map_err(|source| SweepError::Scoring { length, source })?;
            reports.push(rep);
        }
        let agg = metrics::aggregate(&reports).expect("non-empty set");
        rows.push(SweepRow {
            chunk_length: length,
            der: agg.micro.der,
            reports,
        });
    }
    Ok(rows)
}
