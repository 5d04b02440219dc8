use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(
    name = "vocabslice",
    version,
    about = "Task-specific vocabulary selection for reduced LM heads"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Pipeline config JSON; flags override its values.
    #[arg(long, global = true, env = "VOCABSLICE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Directory for artifact files [default: .]
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Report format printed to stdout [default: text]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Tokenizer JSON (vocab, merges, byte_level, special_tokens).
    #[arg(long, global = true)]
    pub tokenizer: Option<PathBuf>,
}

#[derive(ValueEnum, Deserialize, Debug, Clone, Copy, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Profile a corpus: document frequencies, unions and lexical overlap.
    Profile(ProfileArgs),
    /// Build the static task vocabulary from a profile.
    BuildStatic(BuildStaticArgs),
    /// Compute active sets for inputs.
    Select(SelectArgs),
    /// Check output coverage of a corpus under a static vocabulary.
    Evaluate(EvaluateArgs),
    /// Model the head-row transfer against prefill.
    Simulate(SimulateArgs),
    /// Summarize the artifacts in the output directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// JSONL corpus, text or pre-tokenized.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// Vocabulary size for pre-tokenized corpora without a tokenizer.
    #[arg(long)]
    pub vocab_size: Option<usize>,

    /// Profile in this many parallel shards (loads the corpus into memory).
    #[arg(long, default_value_t = 1)]
    pub shards: usize,

    /// Also print one row per document.
    #[arg(long)]
    pub per_doc: bool,
}

#[derive(Args, Debug)]
pub struct BuildStaticArgs {
    /// Profile file [default: <output-dir>/profile.json]
    #[arg(long)]
    pub profile: Option<PathBuf>,

    /// Tolerance; a comma-separated list builds one file per value.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,

    /// Allowed Unicode blocks, comma-separated, or "all".
    #[arg(long, value_delimiter = ',')]
    pub blocks: Vec<String>,

    /// Tokens (tokenizer spelling) that are never filtered.
    #[arg(long, value_delimiter = ',')]
    pub keep: Vec<String>,

    /// Token ids that are never filtered.
    #[arg(long, value_delimiter = ',')]
    pub keep_ids: Vec<u32>,

    /// Drop tokens that are not valid UTF-8 on their own.
    #[arg(long)]
    pub no_byte_fragments: bool,

    /// Remove a token only if every document that emits it has it in its own input.
    #[arg(long)]
    pub compat_per_example_ia: bool,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Static vocabulary [default: <output-dir>/static_vocab.json]
    #[arg(long = "static")]
    pub static_vocab: Option<PathBuf>,

    /// Input text; repeat for a batch.
    #[arg(long)]
    pub text: Vec<String>,

    /// Comma-separated input token ids; repeat for a batch.
    #[arg(long)]
    pub ids: Vec<String>,

    /// JSONL file of inputs (outputs are ignored).
    #[arg(long)]
    pub inputs: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Static vocabulary [default: <output-dir>/static_vocab.json]
    #[arg(long = "static")]
    pub static_vocab: Option<PathBuf>,

    /// Evaluation corpus [default: the config's corpus_path]
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// The corpus was not used for profiling: report without asserting the tolerance.
    #[arg(long)]
    pub held_out: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Plan file [default: <output-dir>/plan.json]
    #[arg(long, conflicts_with = "rows")]
    pub plan: Option<PathBuf>,

    /// Row count to simulate instead of a plan.
    #[arg(long)]
    pub rows: Option<u64>,

    /// Hardware model JSON.
    #[arg(long)]
    pub hardware: Option<PathBuf>,

    /// Host-to-device bytes per second.
    #[arg(long)]
    pub bandwidth: Option<f64>,

    /// Device FLOP/s.
    #[arg(long)]
    pub device_flops: Option<f64>,

    /// Seconds per host embedding lookup.
    #[arg(long)]
    pub lookup_latency: Option<f64>,

    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Args, Debug, Default)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub hidden_size: Option<u64>,

    /// Bytes per weight (2 for f16, 4 for f32).
    #[arg(long)]
    pub dtype_bytes: Option<u64>,

    /// Prompt length in tokens.
    #[arg(long)]
    pub prompt_len: Option<u64>,

    /// Forward-pass FLOPs per prompt token.
    #[arg(long)]
    pub flops_per_token: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Hidden size for the memory summary.
    #[arg(long)]
    pub hidden_size: Option<u64>,

    /// Bytes per weight for the memory summary.
    #[arg(long)]
    pub dtype_bytes: Option<u64>,
}
