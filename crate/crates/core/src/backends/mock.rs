//! Deterministic backends driven by a JSON turn script.
//!
//! One script drives every role: the diarizer echoes the diarized turns,
//! the recognizer echoes the spoken words, the embedder returns a per-speaker
//! prototype plus seeded Gaussian noise, and [`OracleLlm`] answers prompts by
//! looking up the scripted identity at the timestamps quoted in the prompt.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    AudioRef, BackendError, Diarizer, LanguageModel, LlmResponse, SpeakerEmbedder, Transcriber,
    DEFAULT_MIN_EMBED_WINDOW,
};
use crate::adjudicator::{parse_transcript_line, TARGET_MARKER};
use crate::model::{
    interval_overlap, DiarSegment, Embedding, SpeakerLabel, TimeInterval, Word, UNKNOWN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingParams {
    pub dim: usize,
    /// Standard deviation of per-component Gaussian noise.
    pub noise: f64,
    /// Magnitude of the linear prototype drift reached at the end of the recording.
    pub drift: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            dim: 192,
            noise: 0.05,
            drift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptWord {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    /// Label the diarizer emits for this turn.
    pub speaker: String,
    /// Ground-truth identity.
    pub identity: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub words: Vec<ScriptWord>,
    /// `false` makes the diarizer miss the turn (its words become orphans).
    #[serde(default = "yes")]
    pub diarized: bool,
    /// `false` marks a diarizer false alarm: not reference speech, no words.
    #[serde(default = "yes")]
    pub spoken: bool,
}

impl ScriptTurn {
    pub fn interval(&self) -> TimeInterval {
        TimeInterval {
            start: self.start,
            end: self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_recording")]
    pub recording: String,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub embedding: EmbeddingParams,
    /// Rename diarizer labels per window in order of first appearance,
    /// imitating chunk-local label spaces.
    #[serde(default)]
    pub relabel_windows: bool,
    pub turns: Vec<ScriptTurn>,
}

fn default_recording() -> String {
    "mock".into()
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let script: MockScript = serde_json::from_str(text)
            .map_err(|e| BackendError::Unavailable(format!("bad mock script: {e}")))?;
        script.check()?;
        Ok(script)
    }

    fn check(&self) -> Result<(), BackendError> {
        for t in &self.turns {
            if TimeInterval::new(t.start, t.end).is_err() {
                return Err(BackendError::Unavailable(format!(
                    "bad turn interval [{}, {}]",
                    t.start, t.end
                )));
            }
            for w in &t.words {
                Word::new(w.text.clone(), w.start, w.end)
                    .map_err(|e| BackendError::Unavailable(format!("bad word: {e}")))?;
            }
        }
        if self.embedding.dim == 0 {
            return Err(BackendError::Unavailable("embedding dim must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or_else(|| {
            self.turns
                .iter()
                .map(|t| t.end)
                .fold(0.0, f64::max)
        })
    }

    pub fn audio(&self) -> AudioRef {
        AudioRef::mono(self.recording.clone(), 16_000, self.duration())
    }

    /// Ground-truth speech as (interval, identity) pairs.
    pub fn reference_turns(&self) -> Vec<(TimeInterval, String)> {
        self.turns
            .iter()
            .filter(|t| t.spoken)
            .map(|t| (t.interval(), t.identity.clone()))
            .collect()
    }

    pub fn reference_words(&self) -> Vec<Word> {
        let mut words: Vec<Word> = self
            .turns
            .iter()
            .filter(|t| t.spoken)
            .flat_map(|t| t.words.iter())
            .map(|w| Word::new(w.text.clone(), w.start, w.end).expect("checked on load"))
            .collect();
        words.sort_by(|a, b| a.start().total_cmp(&b.start()));
        words
    }

    pub fn identities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .turns
            .iter()
            .filter(|t| t.spoken)
            .map(|t| t.identity.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Scripted identity with the largest overlap with `span`, if any.
    pub fn identity_at(&self, span: &TimeInterval) -> Option<&str> {
        let mut best: Option<(&ScriptTurn, f64)> = None;
        for t in self.turns.iter().filter(|t| t.spoken) {
            let o = interval_overlap(&t.interval(), span);
            let point_hit = span.duration() == 0.0 && t.interval().contains_point(span.start);
            let score = if point_hit { f64::MIN_POSITIVE } else { o };
            if score > 0.0 && best.is_none_or(|(_, b)| score > b) {
                best = Some((t, score));
            }
        }
        best.map(|(t, _)| t.identity.as_str())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z: u64 = 0x9e37_79b9_7f4a_7c15;
    for p in parts {
        z = z.wrapping_add(*p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn random_unit(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Scripted diarizer, recognizer and embedder.
#[derive(Debug, Clone)]
pub struct MockBackends {
    script: MockScript,
    min_window: f64,
    prototypes: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl MockBackends {
    pub fn new(script: MockScript) -> Self {
        let dim = script.embedding.dim;
        let mut prototypes = HashMap::new();
        for t in &script.turns {
            prototypes.entry(t.speaker.clone()).or_insert_with(|| {
                let key = fnv1a(t.speaker.as_bytes());
                (
                    random_unit(mix(&[script.seed, key, 0]), dim),
                    random_unit(mix(&[script.seed, key, 1]), dim),
                )
            });
        }
        Self {
            script,
            min_window: DEFAULT_MIN_EMBED_WINDOW,
            prototypes,
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn prototype_at(&self, speaker: &str, t: f64) -> Vec<f64> {
        let dim = self.script.embedding.dim;
        let Some((base, dir)) = self.prototypes.get(speaker) else {
            return random_unit(mix(&[self.script.seed, fnv1a(b"<silence>")]), dim);
        };
        let duration = self.script.duration().max(f64::MIN_POSITIVE);
        let shift = self.script.embedding.drift * (t / duration).clamp(0.0, 1.0);
        base.iter().zip(dir).map(|(b, d)| b + shift * d).collect()
    }
}

impl Diarizer for MockBackends {
    fn diarize(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<DiarSegment>, BackendError> {
        audio.validate()?;
        let mut out: Vec<DiarSegment> = self
            .script
            .turns
            .iter()
            .filter(|t| t.diarized)
            .filter_map(|t| {
                let iv = t.interval();
                let iv = match window {
                    Some(w) => iv.clip(&w)?,
                    None => iv,
                };
                Some(DiarSegment::new(iv, t.speaker.as_str()))
            })
            .collect();
        out.sort_by(|a, b| a.start().total_cmp(&b.start()));
        if window.is_some() && self.script.relabel_windows {
            let mut renames: BTreeMap<SpeakerLabel, SpeakerLabel> = BTreeMap::new();
            for s in &mut out {
                let next = SpeakerLabel::new(format!("spk{}", renames.len()));
                s.label = renames.entry(s.label.clone()).or_insert(next).clone();
            }
        }
        Ok(out)
    }
}

impl Transcriber for MockBackends {
    fn transcribe(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<Word>, BackendError> {
        audio.validate()?;
        Ok(self
            .script
            .reference_words()
            .into_iter()
            .filter(|w| window.is_none_or(|iv| iv.contains_point(w.start())))
            .collect())
    }
}

impl SpeakerEmbedder for MockBackends {
    fn embed(&self, audio: &AudioRef, window: TimeInterval) -> Result<Embedding, BackendError> {
        audio.validate()?;
        if window.duration() < self.min_window || window.duration() <= 0.0 {
            return Err(BackendError::WindowTooShort {
                duration: window.duration(),
                minimum: self.min_window,
            });
        }
        let speaker = self
            .script
            .turns
            .iter()
            .map(|t| (t, interval_overlap(&t.interval(), &window)))
            .filter(|(_, o)| *o > 0.0)
            .fold(None::<(&ScriptTurn, f64)>, |best, (t, o)| match best {
                Some((_, b)) if b >= o => best,
                _ => Some((t, o)),
            })
            .map(|(t, _)| t.speaker.as_str())
            .unwrap_or("<silence>");
        let mid = 0.5 * (window.start + window.end);
        let proto = self.prototype_at(speaker, mid);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
            self.script.seed,
            window.start.to_bits(),
            window.end.to_bits(),
            fnv1a(speaker.as_bytes()),
        ]));
        let sigma = self.script.embedding.noise;
        let v: Vec<f32> = if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("valid sigma");
            proto
                .iter()
                .map(|p| (p + noise.sample(&mut rng)) as f32)
                .collect()
        } else {
            proto.iter().map(|p| *p as f32).collect()
        };
        Embedding::new(v)
            .map(|e| e.normalized())
            .map_err(|e| BackendError::Unavailable(e.to_string()))
    }

    fn min_window(&self) -> f64 {
        self.min_window
    }
}

/// Returns queued responses in order; fails once the queue is exhausted.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    queue: Mutex<Vec<Result<String, BackendError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedLlm {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results<I>(results: I) -> Self
    where
        I: IntoIterator<Item = Result<String, BackendError>>,
    {
        let mut queue: Vec<_> = results.into_iter().collect();
        queue.reverse();
        Self {
            queue: Mutex::new(queue),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("lock").clone()
    }
}

impl LanguageModel for ScriptedLlm {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, BackendError> {
        self.prompts.lock().expect("lock").push(prompt.to_string());
        match self.queue.lock().expect("lock").pop() {
            Some(Ok(text)) => Ok(LlmResponse::from_text(text)),
            Some(Err(e)) => Err(e),
            None => Err(BackendError::Unavailable("scripted responses exhausted".into())),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UnreachableLlm;

impl LanguageModel for UnreachableLlm {
    fn complete(&self, _prompt: &str) -> Result<LlmResponse, BackendError> {
        Err(BackendError::Unavailable("connection refused".into()))
    }
}

/// Answers both prompt kinds from script ground truth, using the
/// timestamps printed on each transcript line.
#[derive(Debug, Clone)]
pub struct OracleLlm {
    script: MockScript,
    confidence: f64,
}

impl OracleLlm {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            confidence: 0.95,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    fn identities(&self, prompt: &str) -> String {
        let mut tally: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for line in prompt.lines().filter_map(parse_transcript_line) {
            if line.label == UNKNOWN || line.label == TARGET_MARKER {
                continue;
            }
            let entry = tally.entry(line.label.clone()).or_default();
            if let Some(id) = self.script.identity_at(&line.interval) {
                *entry.entry(id.to_string()).or_default() += line.interval.duration().max(1e-3);
            }
        }
        let map: BTreeMap<String, String> = tally
            .into_iter()
            .map(|(label, ids)| {
                let best = argmax(&ids).unwrap_or_else(|| UNKNOWN.to_string());
                (label, best)
            })
            .collect();
        serde_json::to_string(&map).expect("map serializes")
    }

    fn label(&self, prompt: &str) -> String {
        let lines: Vec<_> = prompt.lines().filter_map(parse_transcript_line).collect();
        let target = lines.iter().find(|l| l.label == TARGET_MARKER);
        let wanted = target.and_then(|t| self.script.identity_at(&t.interval));
        let mut votes: BTreeMap<String, f64> = BTreeMap::new();
        if let Some(wanted) = wanted {
            for l in lines
                .iter()
                .filter(|l| l.label != TARGET_MARKER && l.label != UNKNOWN)
            {
                if self.script.identity_at(&l.interval) == Some(wanted) {
                    *votes.entry(l.label.clone()).or_default() += 1.0;
                }
            }
        }
        let label = argmax(&votes).unwrap_or_else(|| UNKNOWN.to_string());
        serde_json::json!({"label": label, "confidence": self.confidence}).to_string()
    }
}

fn argmax(scores: &BTreeMap<String, f64>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (k, v) in scores {
        if best.is_none_or(|(_, b)| *v > b) {
            best = Some((k, *v));
        }
    }
    best.map(|(k, _)| k.clone())
}

impl LanguageModel for OracleLlm {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, BackendError> {
        let text = if prompt.lines().any(|l| {
            parse_transcript_line(l).is_some_and(|p| p.label == TARGET_MARKER)
        }) {
            self.label(prompt)
        } else {
            self.identities(prompt)
        };
        Ok(LlmResponse::from_text(text))
    }
}

pub mod fixtures {
    //! Generators for the scripted scenarios used by tests and `mock-gen`.

    use super::*;

    const VOCAB: &[&str] = &[
        "okay", "so", "how", "is", "the", "pain", "today", "better", "yes", "knee", "walk",
        "stairs", "morning", "exercise", "again", "right", "little", "more", "bend", "slowly",
        "good", "that", "feels", "fine", "tell", "me", "when", "it", "hurts", "thanks",
    ];

    pub struct Voice<'a> {
        pub speaker: &'a str,
        pub identity: &'a str,
        pub weight: f64,
    }

    /// Appends one turn with `n_words` evenly spaced words starting at `start`.
    /// Returns the turn end.
    fn push_turn(
        turns: &mut Vec<ScriptTurn>,
        rng: &mut ChaCha8Rng,
        voice: &Voice<'_>,
        start: f64,
        n_words: usize,
    ) -> f64 {
        let words: Vec<ScriptWord> = (0..n_words)
            .map(|i| {
                let ws = round3(start + 0.05 + 0.4 * i as f64);
                ScriptWord {
                    text: VOCAB[rng.random_range(0..VOCAB.len())].to_string(),
                    start: ws,
                    end: round3(ws + 0.3),
                }
            })
            .collect();
        let end = round3(words.last().map_or(start + 0.5, |w| w.end + 0.05));
        turns.push(ScriptTurn {
            speaker: voice.speaker.into(),
            identity: voice.identity.into(),
            start: round3(start),
            end,
            words,
            diarized: true,
            spoken: true,
        });
        end
    }

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    fn pick<'a>(rng: &mut ChaCha8Rng, voices: &'a [Voice<'a>], prev: Option<usize>) -> usize {
        loop {
            let total: f64 = voices.iter().map(|v| v.weight).sum();
            let mut x = rng.random_range(0.0..total);
            let mut idx = voices.len() - 1;
            for (i, v) in voices.iter().enumerate() {
                if x < v.weight {
                    idx = i;
                    break;
                }
                x -= v.weight;
            }
            if Some(idx) != prev || voices.len() == 1 {
                return idx;
            }
        }
    }

    /// Alternating conversation until `duration`, turns of 4–20 words with 0.5–1.5 s pauses.
    pub fn conversation(seed: u64, voices: &[Voice<'_>], duration: f64) -> Vec<ScriptTurn> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut turns = Vec::new();
        let mut t = 0.5;
        let mut prev = None;
        loop {
            let n = rng.random_range(4..=20);
            if t + 0.4 * n as f64 + 0.2 > duration {
                break;
            }
            let idx = pick(&mut rng, voices, prev);
            let end = push_turn(&mut turns, &mut rng, &voices[idx], t, n);
            prev = Some(idx);
            t = end + rng.random_range(0.5..1.5);
        }
        turns
    }

    /// Three clearly separated speakers, perfect diarization and recognition.
    pub fn clean_three_speakers(seed: u64) -> MockScript {
        let voices = [
            Voice { speaker: "spk0", identity: "Physical Therapist", weight: 1.0 },
            Voice { speaker: "spk1", identity: "Patient", weight: 1.0 },
            Voice { speaker: "spk2", identity: "Son", weight: 0.4 },
        ];
        MockScript {
            recording: "clean".into(),
            duration: None,
            seed,
            embedding: EmbeddingParams::default(),
            relabel_windows: false,
            turns: conversation(seed, &voices, 180.0),
        }
    }

    /// The patient's voice changes acoustically halfway through, so the
    /// diarizer gives it a second label. Also contains one turn the diarizer
    /// misses and one diarizer false alarm.
    pub fn split_speaker(seed: u64) -> MockScript {
        let voices = [
            Voice { speaker: "spk0", identity: "Physical Therapist", weight: 1.0 },
            Voice { speaker: "spk1", identity: "Patient", weight: 1.0 },
            Voice { speaker: "spk2", identity: "Son", weight: 0.4 },
        ];
        let duration = 240.0;
        let mut turns = conversation(seed, &voices, duration);
        for t in turns.iter_mut() {
            if t.speaker == "spk1" && t.start > duration / 2.0 {
                t.speaker = "spk3".into();
            }
        }
        // one patient turn the diarizer misses entirely
        if let Some(t) = turns
            .iter_mut()
            .skip(5)
            .find(|t| t.identity == "Patient" && t.words.len() >= 4)
        {
            t.diarized = false;
        }
        // a false alarm inside the first long pause
        let gap = turns
            .windows(2)
            .find(|w| w[1].start - w[0].end >= 1.0)
            .map(|w| (w[0].end, w[1].start));
        if let Some((a, b)) = gap {
            turns.push(ScriptTurn {
                speaker: "spk0".into(),
                identity: "Physical Therapist".into(),
                start: round3(a + 0.2),
                end: round3(b - 0.2),
                words: Vec::new(),
                diarized: true,
                spoken: false,
            });
            turns.sort_by(|x, y| x.start.total_cmp(&y.start));
        }
        MockScript {
            recording: "split".into(),
            duration: Some(duration),
            seed,
            embedding: EmbeddingParams::default(),
            relabel_windows: false,
            turns,
        }
    }

    /// A long recording with gradual acoustic drift and chunk-local diarizer labels.
    pub fn long_drift(seed: u64) -> MockScript {
        let voices = [
            Voice { speaker: "spk0", identity: "Physical Therapist", weight: 1.0 },
            Voice { speaker: "spk1", identity: "Patient", weight: 0.8 },
            Voice { speaker: "spk2", identity: "Son", weight: 0.25 },
        ];
        let duration = 1000.0;
        MockScript {
            recording: "drift".into(),
            duration: Some(duration),
            seed,
            embedding: EmbeddingParams {
                dim: 192,
                noise: 0.12,
                drift: 0.8,
            },
            relabel_windows: true,
            turns: conversation(seed, &voices, duration),
        }
    }
}
