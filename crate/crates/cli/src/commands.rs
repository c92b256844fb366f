//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arrowrl_core::classify::{
    audit_agreement, CachedClassifier, CategorizationResult, ClassificationCache, Classifier, EndpointConfig, Lexicon,
    LlmClassifier, RuleBasedClassifier,
};
use arrowrl_core::curriculum::{filter_epoch, CurriculumState};
use arrowrl_core::io::{
    generate_synthetic, jsonl_lines, load_samples, write_jsonl, CategoryResolver, LoadOptions, SampleRecord,
};
use arrowrl_core::metrics::{EvalRecord, MetricReport};
use arrowrl_core::policysim::train;
use arrowrl_core::reward::parse_response;
use arrowrl_core::{EventCategory, EventSample, Prediction};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::scoring::{render, ScoreError, Scorer};
use crate::Failure;

/// `-` or no path means standard input.
fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>, Failure> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = File::open(p).map_err(|e| Failure::input(format!("cannot open {}: {e}", p.display())))?;
            Ok(Box::new(BufReader::new(f)))
        }
        _ => Ok(Box::new(BufReader::new(io::stdin()))),
    }
}

/// `-` or no path means standard output.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) if p != Path::new("-") => {
            let f = File::create(p).map_err(|e| Failure::internal(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn write_err(e: io::Error) -> Failure {
    Failure::internal(format!("write failed: {e}"))
}

fn rule_based(config: &AppConfig) -> Result<RuleBasedClassifier, Failure> {
    let lexicon = match &config.classify.lexicon {
        Some(p) => Lexicon::load(p).map_err(Failure::from)?,
        None => Lexicon::default(),
    };
    Ok(RuleBasedClassifier { lexicon })
}

fn resolver<'a>(
    config: &AppConfig,
    rule_based: &'a dyn Classifier,
    llm: Option<&'a dyn Classifier>,
) -> CategoryResolver<'a> {
    CategoryResolver {
        precedence: config.classify.precedence.clone(),
        llm,
        rule_based: Some(rule_based),
    }
}

fn load_dataset(config: &AppConfig, path: &Path, strict: bool) -> Result<Vec<EventSample>, Failure> {
    let rb = rule_based(config)?;
    let options = LoadOptions {
        strict,
        resolver: resolver(config, &rb, None),
    };
    let report = load_samples(path, &options).map_err(Failure::from)?;
    for d in &report.diagnostics {
        tracing::warn!(line = d.line, "{}", d.message);
    }
    Ok(report.samples)
}

// ---------------------------------------------------------------- score

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// ScoreRequest JSONL; `-` for stdin.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// RewardBreakdown JSONL; stdout by default.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Default temporal reward weight for requests without their own.
    #[arg(long, env = "ARROWRL_LAMBDA")]
    pub lambda: Option<f64>,
    /// Abort on the first invalid line instead of emitting an error object.
    #[arg(long, env = "ARROWRL_STRICT")]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreSummary {
    pub lines: usize,
    pub failed: usize,
}

#[derive(Serialize)]
struct LineError<'a> {
    line: usize,
    #[serde(flatten)]
    error: &'a ScoreError,
}

/// Scores every non-empty line, writing one output line per input line.
pub fn score_stream<R: BufRead, W: Write>(
    input: R,
    mut out: W,
    scorer: &Scorer,
    strict: bool,
) -> Result<ScoreSummary, Failure> {
    let mut summary = ScoreSummary { lines: 0, failed: 0 };
    for item in jsonl_lines(input) {
        let (line, text) = item.map_err(|e| Failure::input(e.to_string()))?;
        summary.lines += 1;
        match scorer.score_text(&text) {
            Ok(b) => writeln!(out, "{}", render(&b)).map_err(write_err)?,
            Err(error) => {
                if strict {
                    return Err(Failure::input(format!("line {line}: {error}")));
                }
                summary.failed += 1;
                let obj = LineError { line, error: &error };
                writeln!(out, "{}", serde_json::to_string(&obj).expect("error serializes")).map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)?;
    Ok(summary)
}

pub fn scorer_for(config: &AppConfig, lambda: Option<f64>) -> Result<Scorer, Failure> {
    let lambda = lambda.unwrap_or(config.score.lambda);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Failure::input(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(Scorer::new(lambda, rule_based(config)?))
}

pub fn score(config: &AppConfig, args: &ScoreArgs) -> Result<(), Failure> {
    let scorer = scorer_for(config, args.lambda)?;
    let input = open_input(args.input.as_deref())?;
    let output = open_output(args.output.as_deref())?;
    let summary = score_stream(input, output, &scorer, args.strict)?;
    if summary.failed > 0 {
        return Err(Failure::input(format!(
            "{} of {} lines failed",
            summary.failed, summary.lines
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction JSONL: `sample_id` plus `fwd_pred`/`rev_pred` objects or raw `fwd_text`/`rev_text`.
    #[arg(long, short)]
    pub predictions: PathBuf,
    /// Dataset JSONL supplying ground truth and categories.
    #[arg(long, short)]
    pub dataset: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        env = "ARROWRL_THRESHOLDS",
        default_value = "0.3,0.5,0.7"
    )]
    pub thresholds: Vec<f64>,
    /// Omit the per-category breakdown.
    #[arg(long)]
    pub no_subsets: bool,
    /// Also print a plain-text table.
    #[arg(long)]
    pub table: bool,
    /// Fail on unresolved ids or rejected lines.
    #[arg(long, env = "ARROWRL_STRICT")]
    pub strict: bool,
    /// MetricReport JSON; stdout by default.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// One line of a prediction file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictionLine {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwd_pred: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev_pred: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwd_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev_text: Option<String>,
}

fn pick(pred: &Option<Prediction>, text: &Option<String>, duration: f64) -> Option<Prediction> {
    pred.or_else(|| text.as_deref().map(|t| parse_response(t, duration).prediction))
}

#[derive(Debug)]
pub struct Joined {
    pub records: Vec<EvalRecord>,
    pub unresolved: Vec<String>,
}

/// Joins predictions with their dataset samples.
pub fn join_predictions(lines: &[(usize, PredictionLine)], dataset: &[EventSample]) -> Result<Joined, Failure> {
    let index: HashMap<&str, &EventSample> = dataset.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut records = Vec::with_capacity(lines.len());
    let mut unresolved = Vec::new();
    for (line, p) in lines {
        let Some(sample) = index.get(p.sample_id.as_str()) else {
            unresolved.push(p.sample_id.clone());
            continue;
        };
        let d = sample.duration();
        let fwd = pick(&p.fwd_pred, &p.fwd_text, d)
            .ok_or_else(|| Failure::input(format!("line {line}: needs fwd_pred or fwd_text")))?;
        records.push(EvalRecord {
            sample_id: sample.sample_id.clone(),
            category: sample.category,
            fwd_pred: fwd,
            rev_pred: pick(&p.rev_pred, &p.rev_text, d),
            gt_span: sample.gt_span,
            duration: d,
        });
    }
    Ok(Joined { records, unresolved })
}

pub fn evaluate(config: &AppConfig, args: &EvaluateArgs) -> Result<(), Failure> {
    let dataset = load_dataset(config, &args.dataset, args.strict)?;
    let mut lines = Vec::new();
    for item in jsonl_lines(open_input(Some(&args.predictions))?) {
        let (line, text) = item.map_err(Failure::from)?;
        let p: PredictionLine =
            serde_json::from_str(&text).map_err(|e| Failure::input(format!("predictions line {line}: {e}")))?;
        lines.push((line, p));
    }
    let joined = join_predictions(&lines, &dataset)?;
    if !joined.unresolved.is_empty() {
        let msg = format!("unresolved sample ids: {}", joined.unresolved.join(", "));
        if args.strict {
            return Err(Failure::input(msg));
        }
        tracing::warn!("{msg}");
    }
    let mut report = MetricReport::compute(&joined.records, &args.thresholds).map_err(Failure::from)?;
    if args.no_subsets {
        report.subsets.clear();
    }
    let mut out = open_output(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure::internal(e.to_string()))?;
    writeln!(out).map_err(write_err)?;
    out.flush().map_err(write_err)?;
    if args.table {
        print!("{}", report.to_table());
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Training seed.
    #[arg(long, env = "ARROWRL_SEED")]
    pub seed: Option<u64>,
    /// Temporal reward weight used during training.
    #[arg(long, env = "ARROWRL_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, env = "ARROWRL_EPOCHS")]
    pub epochs: Option<usize>,
    /// Train on this dataset instead of generating synthetic samples.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// TrainingReport JSON; stdout by default.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch metric curves.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn simulate(config: &AppConfig, args: &SimulateArgs) -> Result<(), Failure> {
    let mut sim = config.simulation.clone();
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    if let Some(l) = args.lambda {
        sim.train.grpo.lambda = l;
    }
    if let Some(e) = args.epochs {
        sim.train.epochs = e;
    }
    let dataset = match &args.dataset {
        Some(p) => load_dataset(config, p, false)?,
        None => generate_synthetic(&sim.synth).map_err(Failure::from)?,
    };
    let report = train(&dataset, &sim.train, sim.synth.observation_noise, sim.seed).map_err(Failure::from)?;
    let last = report.last();
    tracing::info!(
        status = ?report.status,
        epochs = report.epochs.len() - 1,
        removed = report.removed.len(),
        r1_fwd = ?last.eval.forward.r1_at(0.5),
        "simulation finished"
    );
    let mut out = open_output(args.report.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure::internal(e.to_string()))?;
    writeln!(out).map_err(write_err)?;
    out.flush().map_err(write_err)?;
    if let Some(path) = &args.csv {
        let f = File::create(path).map_err(|e| Failure::internal(format!("cannot create {}: {e}", path.display())))?;
        report.write_csv(BufWriter::new(f)).map_err(Failure::from)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- filter

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// JSONL lines of `{"sample_id": ..., "ious": [...]}`, one per active sample.
    #[arg(long, short)]
    pub rollouts: PathBuf,
    /// Curriculum state to advance; a fresh state over the rollout ids otherwise.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Mastery threshold.
    #[arg(long, env = "ARROWRL_ETA")]
    pub eta: Option<f64>,
    /// New state JSON; stdout by default.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutOverlaps {
    pub sample_id: String,
    pub ious: Vec<f64>,
}

pub fn filter(config: &AppConfig, args: &FilterArgs) -> Result<(), Failure> {
    let mut overlaps = std::collections::BTreeMap::new();
    for item in jsonl_lines(open_input(Some(&args.rollouts))?) {
        let (line, text) = item.map_err(Failure::from)?;
        let r: RolloutOverlaps =
            serde_json::from_str(&text).map_err(|e| Failure::input(format!("rollouts line {line}: {e}")))?;
        overlaps.insert(r.sample_id, r.ious);
    }
    let state = match &args.state {
        Some(p) => CurriculumState::load(p).map_err(Failure::from)?,
        None => CurriculumState::new(overlaps.keys().cloned()),
    };
    let eta = args.eta.unwrap_or(config.simulation.train.eta);
    let next = filter_epoch(&state, &overlaps, eta).map_err(Failure::from)?;
    tracing::info!(
        removed = state.active_ids.len() - next.active_ids.len(),
        active = next.active_ids.len(),
        "filter applied"
    );
    let mut out = open_output(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &next).map_err(|e| Failure::internal(e.to_string()))?;
    writeln!(out).map_err(write_err)?;
    out.flush().map_err(write_err)
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// LLM when an endpoint is configured, rule-based otherwise.
    Auto,
    Rule,
    Llm,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    #[arg(long, env = "ARROWRL_CLASSIFIER", value_enum, default_value = "auto")]
    pub backend: Backend,
    #[arg(long, env = "ARROWRL_LLM_URL")]
    pub llm_url: Option<String>,
    #[arg(long, env = "ARROWRL_LLM_MODEL")]
    pub llm_model: Option<String>,
    #[arg(long, env = "ARROWRL_LLM_API_KEY", hide_env_values = true)]
    pub llm_api_key: Option<String>,
    /// JSONL cache of LLM answers.
    #[arg(long, env = "ARROWRL_CLASSIFY_CACHE")]
    pub cache: Option<PathBuf>,
}

fn endpoint(config: &AppConfig, args: &LlmArgs) -> Option<EndpointConfig> {
    let mut ep = config.classify.llm.clone();
    if ep.is_none() && args.llm_url.is_some() {
        ep = Some(EndpointConfig::default());
    }
    let mut ep = ep?;
    if let Some(u) = &args.llm_url {
        ep.url = u.clone();
    }
    if let Some(m) = &args.llm_model {
        ep.model = m.clone();
    }
    if let Some(k) = &args.llm_api_key {
        ep.api_key = Some(k.clone());
    }
    Some(ep)
}

pub fn build_classifier(config: &AppConfig, args: &LlmArgs) -> Result<Arc<dyn Classifier>, Failure> {
    let ep = endpoint(config, args);
    let use_llm = match args.backend {
        Backend::Rule => false,
        Backend::Auto => ep.is_some(),
        Backend::Llm => {
            if ep.is_none() {
                return Err(Failure::input("llm backend requested but no endpoint configured"));
            }
            true
        }
    };
    if !use_llm {
        return Ok(Arc::new(rule_based(config)?));
    }
    let llm = LlmClassifier::http(ep.expect("checked above"));
    let cache_path = args.cache.clone().or_else(|| config.classify.cache.clone());
    Ok(match cache_path {
        Some(p) => Arc::new(CachedClassifier {
            inner: llm,
            cache: ClassificationCache::open(&p).map_err(Failure::from)?,
        }),
        None => Arc::new(llm),
    })
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Query to classify; repeatable.
    #[arg(long, short)]
    pub query: Vec<String>,
    /// One query per line, or JSONL objects with a `query` field.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Compare against the `category` field of JSONL input and report agreement.
    #[arg(long)]
    pub audit: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct QueryLine {
    query: String,
    #[serde(default)]
    category: Option<EventCategory>,
}

#[derive(Serialize)]
struct Classified<'a> {
    query: &'a str,
    #[serde(flatten)]
    result: &'a CategorizationResult,
}

pub fn classify(config: &AppConfig, args: &ClassifyArgs) -> Result<(), Failure> {
    let mut items: Vec<QueryLine> = args
        .query
        .iter()
        .map(|q| QueryLine {
            query: q.clone(),
            category: None,
        })
        .collect();
    if let Some(p) = &args.input {
        for line in open_input(Some(p))?.lines() {
            let line = line.map_err(|e| Failure::input(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if t.starts_with('{') {
                items.push(serde_json::from_str(t).map_err(|e| Failure::input(format!("bad query line: {e}")))?);
            } else {
                items.push(QueryLine {
                    query: t.to_string(),
                    category: None,
                });
            }
        }
    }
    if items.is_empty() {
        return Err(Failure::input("no queries given; use --query or --input"));
    }
    let classifier = build_classifier(config, &args.llm)?;
    let mut results = Vec::with_capacity(items.len());
    for it in &items {
        results.push(classifier.classify(&it.query).map_err(Failure::from)?);
    }
    let mut out = open_output(args.output.as_deref())?;
    for (it, r) in items.iter().zip(&results) {
        let line = Classified {
            query: &it.query,
            result: r,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializes")).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    if args.audit {
        let gold: Option<Vec<EventCategory>> = items.iter().map(|i| i.category).collect();
        let gold = gold.ok_or_else(|| Failure::input("--audit needs a category on every input line"))?;
        let agreement = audit_agreement(&results, &gold).map_err(Failure::from)?;
        eprintln!("agreement: {:.1}% ({} queries)", agreement * 100.0, gold.len());
    }
    Ok(())
}

// ---------------------------------------------------------------- gen-synth

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub sensitive_fraction: Option<f64>,
    /// Generator seed.
    #[arg(long, env = "ARROWRL_SYNTH_SEED")]
    pub seed: Option<u64>,
    /// Dataset JSONL; stdout by default.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn gen_synth(config: &AppConfig, args: &GenSynthArgs) -> Result<(), Failure> {
    let mut synth = config.simulation.synth.clone();
    if let Some(n) = args.num_samples {
        synth.num_samples = n;
    }
    if let Some(f) = args.sensitive_fraction {
        synth.sensitive_fraction = f;
    }
    if let Some(s) = args.seed {
        synth.rng_seed = s;
    }
    let samples = generate_synthetic(&synth).map_err(Failure::from)?;
    let out = open_output(args.output.as_deref())?;
    write_jsonl(out, samples.iter().map(SampleRecord::from)).map_err(Failure::from)
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ARROWRL_BIND")]
    pub bind: Option<String>,
    /// Largest accepted `/v1/score_batch` request.
    #[arg(long, env = "ARROWRL_MAX_BATCH")]
    pub max_batch: Option<usize>,
    #[arg(long, env = "ARROWRL_LAMBDA")]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

pub fn serve(config: &AppConfig, args: &ServeArgs) -> Result<(), Failure> {
    let state = crate::service::AppState {
        scorer: scorer_for(config, args.lambda)?,
        classifier: build_classifier(config, &args.llm)?,
        max_batch: args.max_batch.unwrap_or(config.server.max_batch),
    };
    let bind = args.bind.clone().unwrap_or_else(|| config.server.bind.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::internal(e.to_string()))?;
    rt.block_on(crate::service::serve(&bind, state))
        .map_err(|e| Failure::internal(e.to_string()))
}
