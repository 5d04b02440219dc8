//! Pipeline configuration: a JSON file (from `--config` or `VOCABSLICE_CONFIG`)
//! overlaid by command-line flags. Relative paths in the file resolve against
//! the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vocabslice::offload::HardwareModel;
use vocabslice::{Error, Result, Tokenizer};

use crate::cli::{Format, GlobalArgs};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub hidden_size: Option<u64>,
    pub dtype_bytes: Option<u64>,
    pub prompt_len: Option<u64>,
    pub flops_per_token: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub tokenizer_path: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub vocab_size: Option<usize>,
    pub tau: Option<OneOrMany>,
    pub allowed_blocks: Option<Vec<String>>,
    /// Tokens in tokenizer spelling.
    pub always_keep: Option<Vec<String>>,
    pub always_keep_ids: Option<Vec<u32>>,
    pub keep_byte_fragments: Option<bool>,
    pub compat_per_example_ia: Option<bool>,
    pub output_dir: Option<PathBuf>,
    pub report_format: Option<Format>,
    pub hardware: Option<HardwareModel>,
    pub workload: Option<WorkloadConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = vocabslice::artifact::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.tokenizer_path,
            &mut cfg.corpus_path,
            &mut cfg.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn taus(&self) -> Vec<f64> {
        match &self.tau {
            None => Vec::new(),
            Some(OneOrMany::One(t)) => vec![*t],
            Some(OneOrMany::Many(ts)) => ts.clone(),
        }
    }
}

/// Settings shared by every command.
pub struct Context {
    pub config: PipelineConfig,
    pub output_dir: PathBuf,
    pub format: Format,
    pub tokenizer: Option<Tokenizer>,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let config = match &global.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let output_dir = global
            .output_dir
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        let format = global.format.or(config.report_format).unwrap_or_default();
        let tokenizer = match global.tokenizer.as_ref().or(config.tokenizer_path.as_ref()) {
            Some(path) => Some(Tokenizer::load(path)?),
            None => None,
        };
        Ok(Self {
            config,
            output_dir,
            format,
            tokenizer,
        })
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    /// Creates the output directory and returns the path for `name` in it.
    pub fn output(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|source| Error::Io {
            path: self.output_dir.clone(),
            source,
        })?;
        Ok(self.artifact(name))
    }

    /// Checks that an artifact built for `size` tokens matches the tokenizer.
    pub fn check_vocab(&self, size: usize) -> Result<()> {
        match &self.tokenizer {
            Some(t) if t.size() != size => Err(Error::VocabMismatch {
                left: size,
                right: t.size(),
            }),
            _ => Ok(()),
        }
    }
}
