//! Post-processing for speaker diarization: reconciles diarizer segments
//! with ASR word timings, re-verifies labels against speaker embeddings,
//! lets a language model name speakers and settle doubtful segments, and
//! scores the result.

pub mod adjudicator;
pub mod backends;
pub mod chunkrec;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reconcile;
pub mod refine;
pub mod reverify;

pub use model::{
    DiarSegment, Embedding, Identity, IdentityMap, SegmentOrigin, SpeakerLabel, TimeInterval, Word,
    WordSource,
};
