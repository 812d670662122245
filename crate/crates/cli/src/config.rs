//! Layered configuration: defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use diarlm_core::pipeline::PipelineConfig;

pub const TOKEN_ENV: &str = "LLM_AUTH_TOKEN";

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with pipeline settings
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Chunk length in seconds
    #[arg(long, global = true)]
    pub chunk_length: Option<f64>,
    /// Overlap between consecutive chunks in seconds
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
    /// Neighbors retrieved during re-verification
    #[arg(long, global = true)]
    pub knn_k: Option<usize>,
    /// Minimum LLM confidence for a label to count
    #[arg(long, global = true)]
    pub llm_threshold: Option<f64>,
    /// Scoring collar in seconds
    #[arg(long, global = true)]
    pub collar: Option<f64>,
    /// Recordings processed concurrently; also bounds concurrent backend calls
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory for per-stage snapshots
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,
}

/// Parses a config document. Secrets are refused outright so they cannot
/// end up in version-controlled files.
pub fn parse_config(text: &str, origin: &Path) -> Result<PipelineConfig> {
    let value: toml::Table = text
        .parse()
        .with_context(|| format!("{}: not valid TOML", origin.display()))?;
    if let Some(llm) = value.get("llm").and_then(|v| v.as_table()) {
        if llm.contains_key("auth_token") {
            bail!(
                "{}: auth_token is not accepted in config files; set {TOKEN_ENV}",
                origin.display()
            );
        }
    }
    let cfg: PipelineConfig = value
        .try_into()
        .with_context(|| format!("{}: invalid settings", origin.display()))?;
    Ok(cfg)
}

impl Overrides {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text, path)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.chunk_length {
            cfg.chunk_length = v;
        }
        if let Some(v) = self.overlap {
            cfg.overlap = v;
        }
        if let Some(v) = self.knn_k {
            cfg.knn_k = v;
        }
        if let Some(v) = self.llm_threshold {
            cfg.llm_confidence_threshold = v;
        }
        if let Some(v) = self.collar {
            cfg.collar = v;
        }
        if let Some(v) = self.jobs {
            cfg.parallelism = v;
        }
        if let Some(llm) = cfg.llm.as_mut() {
            llm.auth_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        cfg.validate().map_err(anyhow::Error::msg)?;
        Ok(cfg)
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }
}
