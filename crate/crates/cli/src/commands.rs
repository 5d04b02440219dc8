use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vocabslice::artifact::{read_json, write_json};
use vocabslice::corpus::CorpusReader;
use vocabslice::head::{memory_report, plan_memory_report, MemoryReport};
use vocabslice::offload::{breakeven_rows, simulate, HardwareModel, OverlapTimeline, Workload};
use vocabslice::profile::{
    locality_report, profile, profile_sharded, OverlapStats, ProfiledCorpus,
};
use vocabslice::script::AllowedBlocks;
use vocabslice::select::{
    batch_stats, evaluate_coverage, select, BatchStats, CoverageReport, SelectionPlan,
};
use vocabslice::static_vocab::{
    build_static, tolerance_budget, FilterConfig, InputFilter, StaticTaskVocab,
};
use vocabslice::{Document, Error, Result, TokenId};

use crate::cli::{
    BuildStaticArgs, EvaluateArgs, ProfileArgs, ReportArgs, SelectArgs, SimulateArgs,
};
use crate::config::Context;
use crate::output::{Report, Table};

/// Failure of a command: a library error, or a coverage check that ran but failed.
#[derive(Debug)]
pub enum Failure {
    Error(Error),
    /// The report is still printed before exiting.
    ToleranceExceeded(Box<Report>, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_else(|| "-".into())
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing {what}")))
}

fn read_corpus<'t>(
    ctx: &'t Context,
    path: &Path,
) -> Result<CorpusReader<'t, std::io::BufReader<fs::File>>> {
    CorpusReader::open(path, ctx.tokenizer.as_ref())
}

pub fn profile_cmd(ctx: &Context, args: &ProfileArgs) -> Result<Report> {
    let corpus = require(
        args.corpus.as_ref().or(ctx.config.corpus_path.as_ref()),
        "corpus (--corpus or corpus_path)",
    )?;
    let vocab_size = match (&ctx.tokenizer, args.vocab_size.or(ctx.config.vocab_size)) {
        (Some(t), Some(v)) if v != t.size() => {
            return Err(Error::Config(format!(
                "vocab size {v} disagrees with the tokenizer's {}",
                t.size()
            )))
        }
        (Some(t), _) => t.size(),
        (None, Some(v)) => v,
        (None, None) => {
            return Err(Error::Config(
                "need a tokenizer or --vocab-size to size the vocabulary".into(),
            ))
        }
    };
    if args.shards == 0 {
        return Err(Error::Config("--shards must be at least 1".into()));
    }
    let reader = read_corpus(ctx, corpus)?;
    let p = if args.shards == 1 {
        profile(reader, vocab_size)?
    } else {
        let docs: Vec<Document> = reader.collect::<Result<_>>()?;
        profile_sharded(&docs, vocab_size, args.shards)?
    };
    if p.num_docs() == 0 {
        return Err(Error::Empty("empty corpus"));
    }
    let stats = locality_report(&p)?;
    let path = ctx.output("profile.json")?;
    p.save(&path)?;

    let mut report = Report::new(
        format!("profiled {} documents -> {}", p.num_docs(), path.display()),
        json!({ "profile": path, "stats": stats, "docs": p.docs() }),
    );
    report.tables.push(overlap_table(&stats));
    if args.per_doc {
        let mut t = Table::new([
            "doc",
            "input_size",
            "output_len",
            "copied",
            "overlap",
            "type_overlap",
        ]);
        for d in p.docs() {
            t.row([
                d.doc_index.to_string(),
                d.input_size.to_string(),
                d.output_len.to_string(),
                d.copied.to_string(),
                fmt_opt(d.overlap()),
                fmt_opt(d.type_overlap()),
            ]);
        }
        report.tables.push(t);
    }
    Ok(report)
}

fn overlap_table(s: &OverlapStats) -> Table {
    Table::metrics([
        ("num_docs", s.num_docs.to_string()),
        ("docs_with_output", s.docs_with_output.to_string()),
        ("mean_overlap", fmt_f(s.mean_overlap)),
        ("mean_type_overlap", fmt_f(s.mean_type_overlap)),
        ("mean_input_size", fmt_f(s.mean_input_size)),
        ("union_input_size", s.union_input_size.to_string()),
        ("union_output_size", s.union_output_size.to_string()),
        ("locality_ratio", fmt_f(s.locality_ratio)),
    ])
}

fn filter_config(ctx: &Context, args: &BuildStaticArgs, tau: f64) -> Result<FilterConfig> {
    let cfg = &ctx.config;
    let mut fc = FilterConfig::with_tau(tau)?;
    let blocks = if args.blocks.is_empty() {
        cfg.allowed_blocks.clone().unwrap_or_default()
    } else {
        args.blocks.clone()
    };
    if !blocks.is_empty() {
        fc.allowed_blocks = AllowedBlocks::parse(&blocks)?;
    }
    fc.keep_byte_fragments = !args.no_byte_fragments && cfg.keep_byte_fragments.unwrap_or(true);
    if args.compat_per_example_ia || cfg.compat_per_example_ia.unwrap_or(false) {
        fc.input_filter = InputFilter::PerExample;
    }

    let mut keep: Vec<TokenId> = Vec::new();
    if let Some(t) = &ctx.tokenizer {
        keep.extend_from_slice(t.special_tokens());
    }
    let words = if args.keep.is_empty() {
        cfg.always_keep.clone().unwrap_or_default()
    } else {
        args.keep.clone()
    };
    for word in &words {
        let t = ctx.tokenizer.as_ref().ok_or_else(|| {
            Error::Config(
                "--keep names tokens by spelling and needs a tokenizer; use --keep-ids".into(),
            )
        })?;
        keep.push(
            t.token_id(word)
                .ok_or_else(|| Error::Config(format!("--keep: no token spelled {word:?}")))?,
        );
    }
    let ids = if args.keep_ids.is_empty() {
        cfg.always_keep_ids.clone().unwrap_or_default()
    } else {
        args.keep_ids.clone()
    };
    keep.extend(ids.into_iter().map(TokenId));
    keep.sort_unstable();
    keep.dedup();
    fc.always_keep = keep;
    Ok(fc)
}

/// Name of the static vocabulary file for one value of a sweep.
pub fn static_file_name(tau: f64, sweep: bool) -> String {
    if sweep {
        format!("static_vocab_tau_{tau}.json")
    } else {
        "static_vocab.json".into()
    }
}

fn ladder_table(rows: &[(PathBuf, StaticTaskVocab)]) -> Table {
    let mut t = Table::new([
        "tau",
        "unfiltered",
        "input_aware",
        "language",
        "tolerance",
        "pruned_df_sum",
        "file",
    ]);
    for (path, v) in rows {
        let [a, b, c, d] = v.stage_sizes;
        t.row([
            v.tau.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
            d.to_string(),
            v.pruned_df_sum.to_string(),
            path.display().to_string(),
        ]);
    }
    t
}

fn ladder_json(rows: &[(PathBuf, StaticTaskVocab)]) -> Value {
    rows.iter()
        .map(|(path, v)| {
            json!({
                "file": path,
                "tau": v.tau,
                "stage_sizes": v.stage_sizes,
                "pruned_df_sum": v.pruned_df_sum,
                "size": v.len(),
            })
        })
        .collect()
}

pub fn build_static_cmd(ctx: &Context, args: &BuildStaticArgs) -> Result<Report> {
    let profile_path = args
        .profile
        .clone()
        .unwrap_or_else(|| ctx.artifact("profile.json"));
    let p = ProfiledCorpus::load(&profile_path)?;
    ctx.check_vocab(p.vocab_size())?;
    let mut taus = if args.tau.is_empty() {
        ctx.config.taus()
    } else {
        args.tau.clone()
    };
    if taus.is_empty() {
        taus.push(FilterConfig::default().tau);
    }
    let sweep = taus.len() > 1;
    let mut built = Vec::new();
    for &tau in &taus {
        let fc = filter_config(ctx, args, tau)?;
        let v = build_static(&p, &fc, ctx.tokenizer.as_ref())?;
        let path = ctx.output(&static_file_name(tau, sweep))?;
        v.save(&path)?;
        built.push((path, v));
    }
    let mut report = Report::new(
        format!("static task vocabulary from {} documents", p.num_docs()),
        json!({ "vocabularies": ladder_json(&built) }),
    );
    report.tables.push(ladder_table(&built));
    Ok(report)
}

fn parse_ids(text: &str) -> Result<Vec<TokenId>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map(TokenId)
                .map_err(|_| Error::Config(format!("--ids: {s:?} is not a token id")))
        })
        .collect()
}

fn stats_table(s: &BatchStats) -> Table {
    Table::metrics([
        ("plans", s.num_plans.to_string()),
        ("static", s.n_static.to_string()),
        ("mean_dynamic", fmt_f(s.mean_dynamic)),
        ("mean_active", fmt_f(s.mean_active)),
        ("full_vocab_size", s.full_vocab_size.to_string()),
        ("percent_of_full", format!("{:.2}", s.percent_of_full)),
        ("min_active", s.min_active.to_string()),
        ("p50_active", s.p50_active.to_string()),
        ("p90_active", s.p90_active.to_string()),
        ("p99_active", s.p99_active.to_string()),
        ("max_active", s.max_active.to_string()),
        ("line", s.table_line()),
    ])
}

pub fn select_cmd(ctx: &Context, args: &SelectArgs) -> Result<Report> {
    let static_path = args
        .static_vocab
        .clone()
        .unwrap_or_else(|| ctx.artifact("static_vocab.json"));
    let v = StaticTaskVocab::load(&static_path)?;
    ctx.check_vocab(v.vocab_size)?;

    let mut inputs: Vec<Vec<TokenId>> = Vec::new();
    for text in &args.text {
        let t = ctx
            .tokenizer
            .as_ref()
            .ok_or_else(|| Error::Config("--text needs a tokenizer".into()))?;
        let index = inputs.len();
        inputs.push(t.encode(text).map_err(|e| e.in_document(index))?);
    }
    for ids in &args.ids {
        inputs.push(parse_ids(ids)?);
    }
    if let Some(path) = &args.inputs {
        for doc in read_corpus(ctx, path)?.inputs_only() {
            inputs.push(doc?.input_ids);
        }
    }
    if inputs.is_empty() {
        return Err(Error::Config(
            "no inputs: pass --text, --ids or --inputs".into(),
        ));
    }

    let plans = inputs
        .iter()
        .enumerate()
        .map(|(i, ids)| select(ids, &v, v.vocab_size).map_err(|e| e.in_document(i)))
        .collect::<Result<Vec<_>>>()?;
    let path = if plans.len() == 1 {
        let path = ctx.output("plan.json")?;
        plans[0].save(&path)?;
        path
    } else {
        let path = ctx.output("plans.jsonl")?;
        let mut text = String::new();
        for p in &plans {
            text.push_str(&serde_json::to_string(p).expect("plans serialize"));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        path
    };
    let stats = batch_stats(&plans)?;
    let mut report = Report::new(
        format!("{} plan(s) -> {}", plans.len(), path.display()),
        json!({ "plans": path, "stats": stats, "line": stats.table_line() }),
    );
    report.tables.push(stats_table(&stats));
    report.lines.push(stats.table_line());
    Ok(report)
}

fn coverage_table(c: &CoverageReport, budget: u64) -> Table {
    Table::metrics([
        ("documents", c.num_docs.to_string()),
        ("tau", c.tau.to_string()),
        ("impacted", format!("{}/{}", c.impacted, c.num_docs)),
        ("impacted_fraction", fmt_f(c.impacted_fraction)),
        ("tolerance_budget", budget.to_string()),
        ("uncovered", format!("{}/{}", c.uncovered, c.num_docs)),
        ("uncovered_fraction", fmt_f(c.uncovered_fraction)),
        ("within_tolerance", c.within_tolerance.to_string()),
    ])
}

pub fn evaluate_cmd(ctx: &Context, args: &EvaluateArgs) -> std::result::Result<Report, Failure> {
    let static_path = args
        .static_vocab
        .clone()
        .unwrap_or_else(|| ctx.artifact("static_vocab.json"));
    let v = StaticTaskVocab::load(&static_path)?;
    ctx.check_vocab(v.vocab_size)?;
    let corpus = require(
        args.corpus.as_ref().or(ctx.config.corpus_path.as_ref()),
        "corpus (--corpus or corpus_path)",
    )?;
    let coverage = evaluate_coverage(&v, read_corpus(ctx, corpus)?)?;
    if !args.held_out && coverage.num_docs != v.num_docs {
        return Err(Error::Config(format!(
            "corpus has {} documents but the vocabulary was profiled on {}; pass --held-out \
             to evaluate a different corpus",
            coverage.num_docs, v.num_docs
        ))
        .into());
    }
    let path = ctx.output("coverage.json")?;
    write_json(&path, &coverage)?;

    let budget = tolerance_budget(v.tau, coverage.num_docs);
    let mut report = Report::new(
        format!("coverage of {} -> {}", corpus.display(), path.display()),
        json!({ "coverage": coverage, "held_out": args.held_out, "tolerance_budget": budget }),
    );
    report.tables.push(coverage_table(&coverage, budget));
    if !coverage.uncovered_docs.is_empty() {
        let shown: Vec<String> = coverage
            .uncovered_docs
            .iter()
            .take(20)
            .map(|d| d.to_string())
            .collect();
        let more = if coverage.uncovered > 20 { ", ..." } else { "" };
        report
            .lines
            .push(format!("uncovered documents: {}{more}", shown.join(", ")));
    }
    if !args.held_out && !coverage.within_tolerance {
        let why = format!(
            "{} of {} profiling documents impacted, budget {budget}",
            coverage.impacted, coverage.num_docs
        );
        return Err(Failure::ToleranceExceeded(Box::new(report), why));
    }
    Ok(report)
}

/// Contents of `timeline.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineArtifact {
    pub hardware: HardwareModel,
    pub workload: Workload,
    pub timeline: OverlapTimeline,
    pub breakeven_rows: u64,
    pub memory: Option<MemoryReport>,
}

fn workload(ctx: &Context, args: &SimulateArgs) -> Result<Workload> {
    let cfg = ctx.config.workload.clone().unwrap_or_default();
    let w = &args.workload;
    Ok(Workload {
        hidden_size: require(w.hidden_size.or(cfg.hidden_size), "--hidden-size")?,
        dtype_bytes: w.dtype_bytes.or(cfg.dtype_bytes).unwrap_or(2),
        prompt_len: require(w.prompt_len.or(cfg.prompt_len), "--prompt-len")?,
        flops_per_token: require(
            w.flops_per_token.or(cfg.flops_per_token),
            "--flops-per-token",
        )?,
    })
}

fn memory_table(m: &MemoryReport) -> Table {
    Table::metrics([
        ("full_head_bytes", m.full_head_bytes.to_string()),
        ("sub_head_bytes", m.sub_head_bytes.to_string()),
        ("embedding_bytes_host", m.embedding_bytes_host.to_string()),
        ("embedding_bytes_gpu", m.embedding_bytes_gpu.to_string()),
        ("baseline_device_bytes", m.baseline_device_bytes.to_string()),
        ("device_bytes", m.device_bytes.to_string()),
        ("saved_fraction", format!("{:.6}", m.saved_fraction)),
        (
            "head_saved_fraction",
            format!("{:.6}", m.head_saved_fraction),
        ),
    ])
}

pub fn simulate_cmd(ctx: &Context, args: &SimulateArgs) -> Result<Report> {
    let mut hw = match &args.hardware {
        Some(path) => read_json::<HardwareModel>(path)?,
        None => ctx.config.hardware.unwrap_or_default(),
    };
    if let Some(v) = args.bandwidth {
        hw.link_bandwidth = v;
    }
    if let Some(v) = args.device_flops {
        hw.device_flops = v;
    }
    if let Some(v) = args.lookup_latency {
        hw.host_lookup_latency = v;
    }
    let w = workload(ctx, args)?;
    let (rows, memory) = match args.rows {
        Some(rows) => (rows, None),
        None => {
            let path = args
                .plan
                .clone()
                .unwrap_or_else(|| ctx.artifact("plan.json"));
            let plan = SelectionPlan::load(&path)?;
            plan.check_invariants()?;
            let m = plan_memory_report(&plan, w.hidden_size, w.dtype_bytes);
            (plan.len() as u64, Some(m))
        }
    };
    let timeline = simulate(&hw, rows, &w)?;
    let breakeven = breakeven_rows(&hw, &w)?;
    let artifact = TimelineArtifact {
        hardware: hw,
        workload: w,
        timeline,
        breakeven_rows: breakeven,
        memory,
    };
    let path = ctx.output("timeline.json")?;
    write_json(&path, &artifact)?;

    let mut report = Report::new(
        format!("transfer of {rows} rows vs prefill -> {}", path.display()),
        serde_json::to_value(&artifact).expect("timeline serializes"),
    );
    report.tables.push(timeline_table(&artifact));
    if let Some(m) = &artifact.memory {
        report.tables.push(memory_table(m));
    }
    Ok(report)
}

fn timeline_table(a: &TimelineArtifact) -> Table {
    let t = &a.timeline;
    Table::metrics([
        ("plan_rows", t.plan_rows.to_string()),
        ("transfer_bytes", t.transfer_bytes.to_string()),
        ("transfer_time_s", format!("{:.6e}", t.transfer_time)),
        ("prefill_time_s", format!("{:.6e}", t.prefill_time)),
        ("embedding_time_s", format!("{:.6e}", t.embedding_time)),
        ("exposed_latency_s", format!("{:.6e}", t.exposed_latency)),
        ("hidden", t.hidden.to_string()),
        (
            "embedding_device_bytes",
            t.embedding_device_bytes.to_string(),
        ),
        ("breakeven_rows", a.breakeven_rows.to_string()),
    ])
}

fn read_plans(path: &Path) -> Result<Vec<SelectionPlan>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Static vocabulary files in `dir`, in name order.
fn static_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(source) => {
            return Err(Error::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("static_vocab") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn report_cmd(ctx: &Context, args: &ReportArgs) -> Result<Report> {
    let dir = &ctx.output_dir;
    let mut json = serde_json::Map::new();
    let mut tables = Vec::new();
    let mut lines = Vec::new();

    let profile_path = ctx.artifact("profile.json");
    if profile_path.exists() {
        let p = ProfiledCorpus::load(&profile_path)?;
        let stats = locality_report(&p)?;
        tables.push(overlap_table(&stats));
        json.insert("profile".into(), json!(stats));
    }

    let mut built = Vec::new();
    for path in static_files(dir)? {
        let v = StaticTaskVocab::load(&path)?;
        built.push((path, v));
    }
    built.sort_by(|a, b| a.1.tau.total_cmp(&b.1.tau).then_with(|| a.0.cmp(&b.0)));
    if !built.is_empty() {
        tables.push(ladder_table(&built));
        json.insert("vocabularies".into(), ladder_json(&built));
    }

    let plans = if ctx.artifact("plans.jsonl").exists() {
        read_plans(&ctx.artifact("plans.jsonl"))?
    } else if ctx.artifact("plan.json").exists() {
        vec![SelectionPlan::load(ctx.artifact("plan.json"))?]
    } else {
        Vec::new()
    };
    if !plans.is_empty() {
        let stats = batch_stats(&plans)?;
        tables.push(stats_table(&stats));
        lines.push(stats.table_line());
        json.insert("selection".into(), json!(stats));
        if let Some(d) = args.hidden_size {
            let b = args.dtype_bytes.unwrap_or(2);
            let rows = stats.max_active as u64;
            let m = memory_report(stats.full_vocab_size as u64, d, b, rows);
            tables.push(memory_table(&m));
            json.insert("memory".into(), json!(m));
        }
    }

    if ctx.artifact("coverage.json").exists() {
        let c: CoverageReport = read_json(ctx.artifact("coverage.json"))?;
        tables.push(coverage_table(&c, tolerance_budget(c.tau, c.num_docs)));
        json.insert("coverage".into(), json!(c));
    }

    if ctx.artifact("timeline.json").exists() {
        let t: TimelineArtifact = read_json(ctx.artifact("timeline.json"))?;
        tables.push(timeline_table(&t));
        json.insert("timeline".into(), json!(t));
    }

    if json.is_empty() {
        return Err(Error::Empty("no artifacts found in the output directory"));
    }
    let mut report = Report::new(
        format!("artifacts in {}", dir.display()),
        Value::Object(json),
    );
    report.tables = tables;
    report.lines = lines;
    Ok(report)
}

pub fn emit(report: &Report, format: crate::cli::Format) {
    let mut out = std::io::stdout().lock();
    // a closed pipe is not an error worth reporting
    let _ = out.write_all(report.render(format).as_bytes());
}
