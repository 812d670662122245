mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use diarlm_core::backends::mock::{fixtures, MockBackends, MockScript, OracleLlm};
use diarlm_core::backends::{ChatClient, LanguageModel};
use diarlm_core::metrics::{self, rttm::records_to_annotation, Annotation, DerReport};
use diarlm_core::pipeline::{
    run_pipeline, sweep_chunks, Backends, PipelineConfig, PipelineOutput, SweepItem,
};

use config::{Overrides, TOKEN_ENV};

#[derive(Parser)]
#[command(name = "diarlm", version, about = "Speaker diarization post-processing and scoring")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmKind {
    /// Answers from the mock script's ground truth
    Mock,
    /// OpenAI-style chat-completion endpoint from the `[llm]` config table
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Clean,
    Split,
    Drift,
}

#[derive(Subcommand)]
enum Command {
    /// Process recordings described by mock scripts
    Run {
        /// Mock script JSON files, one per recording
        #[arg(required = true)]
        scripts: Vec<PathBuf>,
        /// Where `<recording>.json` and `<recording>.rttm` are written
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        llm: LlmKind,
    },
    /// Score a hypothesis against a reference
    Score {
        /// Hypothesis RTTM, or a `run` output JSON
        #[arg(long)]
        hyp: PathBuf,
        /// Reference RTTM
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Reference word-timestamp JSON; adds a WER column
        #[arg(long)]
        ref_words: Option<PathBuf>,
        /// Hypothesis word-timestamp JSON, when the hypothesis is RTTM
        #[arg(long)]
        hyp_words: Option<PathBuf>,
        /// Write the report as JSON here
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Chunked diarization DER for several chunk lengths
    SweepChunks {
        /// Mock script JSON files
        scripts: Vec<PathBuf>,
        /// Chunk lengths in seconds
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a generated mock script
    MockGen {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the reference turns as RTTM
        #[arg(long)]
        ref_rttm: Option<PathBuf>,
        /// Also write the reference words as JSON
        #[arg(long)]
        ref_words: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scripts,
            out_dir,
            llm,
        } => run(&cli.overrides, &scripts, &out_dir, llm),
        Command::Score {
            hyp,
            reference,
            ref_words,
            hyp_words,
            json,
        } => score(
            &cli.overrides,
            &hyp,
            &reference,
            ref_words.as_deref(),
            hyp_words.as_deref(),
            json.as_deref(),
        ),
        Command::SweepChunks {
            scripts,
            lengths,
            json,
        } => sweep(&cli.overrides, &scripts, &lengths, json.as_deref()),
        Command::MockGen {
            scenario,
            seed,
            out,
            ref_rttm,
            ref_words,
        } => {
            let script = match scenario {
                Scenario::Clean => fixtures::clean_three_speakers(seed),
                Scenario::Split => fixtures::split_speaker(seed),
                Scenario::Drift => fixtures::long_drift(seed),
            };
            write(&out, &script.to_json())?;
            if let Some(path) = ref_rttm {
                let ann: Annotation = script.reference_turns().into_iter().collect();
                write(&path, &metrics::write_rttm(&script.recording, &ann))?;
            }
            if let Some(path) = ref_words {
                write(&path, &(serde_json::to_string_pretty(&script.reference_words())? + "\n"))?;
            }
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_script(path: &Path) -> Result<MockScript> {
    MockScript::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run_one(
    path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    trace_root: Option<&Path>,
    llm_kind: LlmKind,
) -> Result<String> {
    let script = load_script(path)?;
    let mock = MockBackends::new(script.clone());
    let llm: Box<dyn LanguageModel> = match llm_kind {
        LlmKind::Mock => Box::new(OracleLlm::new(script.clone())),
        LlmKind::Http => {
            let Some(cfg) = config.llm.clone() else {
                bail!("--llm http needs an [llm] table in the config file");
            };
            if cfg.auth_token.is_none() {
                log::warn!("{TOKEN_ENV} is not set; sending requests without a bearer token");
            }
            Box::new(ChatClient::new(cfg))
        }
    };
    let backends = Backends {
        diarizer: &mock,
        transcriber: &mock,
        embedder: &mock,
        llm: llm.as_ref(),
    };
    let name = script.recording.clone();
    let trace_dir = trace_root.map(|t| t.join(&name));
    let (segs, map, _) = run_pipeline(&script.audio(), &backends, config, trace_dir.as_deref())
        .map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
    let out = PipelineOutput::new(name.clone(), &segs, &map, config);
    write(&out_dir.join(format!("{name}.json")), &out.to_json())?;
    write(&out_dir.join(format!("{name}.rttm")), &out.to_rttm())?;
    Ok(name)
}

fn run(overrides: &Overrides, scripts: &[PathBuf], out_dir: &Path, llm: LlmKind) -> Result<()> {
    let config = overrides.resolve()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<String>)>> = Mutex::new(Vec::new());
    let workers = overrides.jobs().min(scripts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = scripts.get(i) else { break };
                let r = run_one(path, &config, out_dir, overrides.trace_dir.as_deref(), llm);
                results.lock().expect("lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("lock");
    results.sort_by_key(|(i, _)| *i);
    let mut failures = 0;
    for (i, r) in results {
        match r {
            Ok(name) => println!("{name}: wrote {}", out_dir.join(format!("{name}.json")).display()),
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", scripts[i].display());
            }
        }
    }
    if failures > 0 {
        bail!("{failures} of {} recordings failed", scripts.len());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct WordEntry {
    text: String,
}

fn load_words(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let words: Vec<WordEntry> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected a list of words", path.display()))?;
    Ok(words.into_iter().map(|w| w.text).collect())
}

fn load_rttm(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = metrics::parse_rttm(&text).with_context(|| path.display().to_string())?;
    Ok(records_to_annotation(&records))
}

/// Hypothesis annotation plus its words when the file is a `run` output.
fn load_hypothesis(path: &Path) -> Result<(Annotation, Option<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let out: PipelineOutput =
            serde_json::from_str(&text).with_context(|| format!("{}: not a run output", path.display()))?;
        let words = out
            .segments
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.text.clone()))
            .collect();
        return Ok((out.annotation(), Some(words)));
    }
    Ok((load_rttm(path)?, None))
}

#[derive(Serialize)]
struct ScoreReport<'a> {
    der: &'a DerReport,
    wer: Option<f64>,
    collar: f64,
}

fn score(
    overrides: &Overrides,
    hyp: &Path,
    reference: &Path,
    ref_words: Option<&Path>,
    hyp_words: Option<&Path>,
    json: Option<&Path>,
) -> Result<()> {
    let config = overrides.resolve()?;
    let ref_ann = load_rttm(reference)?;
    let (hyp_ann, embedded_words) = load_hypothesis(hyp)?;
    let report = metrics::der(&ref_ann, &hyp_ann, config.collar)?;
    let wer = match ref_words {
        Some(rw) => {
            let hw = match (hyp_words, embedded_words) {
                (Some(p), _) => load_words(p)?,
                (None, Some(w)) => w,
                (None, None) => bail!("--ref-words needs --hyp-words or a run output hypothesis"),
            };
            Some(metrics::wer(&load_words(rw)?, &hw)?)
        }
        None => None,
    };
    let name = hyp
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "hypothesis".into());
    print!("{}", metrics::format_table(&[(name, &report, wer)]));
    if let Some(path) = json {
        let doc = ScoreReport {
            der: &report,
            wer,
            collar: config.collar,
        };
        write(path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    Ok(())
}

fn sweep(overrides: &Overrides, scripts: &[PathBuf], lengths: &[f64], json: Option<&Path>) -> Result<()> {
    let config = overrides.resolve()?;
    let loaded: Vec<MockScript> = scripts.iter().map(|p| load_script(p)).collect::<Result<_>>()?;
    let mocks: Vec<MockBackends> = loaded.iter().cloned().map(MockBackends::new).collect();
    let items: Vec<SweepItem<'_>> = loaded
        .iter()
        .zip(&mocks)
        .map(|(s, m)| SweepItem {
            audio: s.audio(),
            reference: s.reference_turns().into_iter().collect(),
            diarizer: m,
            embedder: m,
        })
        .collect();
    let rows = sweep_chunks(&items, lengths, &config)?;
    println!("{:>12} | {:>7}", "chunk (s)", "DER");
    for r in &rows {
        println!("{:>12.1} | {:>7.2}", r.chunk_length, r.der * 100.0);
    }
    if let Some(path) = json {
        write(path, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    }
    Ok(())
}
