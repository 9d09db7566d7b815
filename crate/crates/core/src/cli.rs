//! Command-line front end. Every stage reads and writes files so each step
//! can be re-run on its own.
//!
//! Settings come from an optional `key = value` config file (`--config`)
//! and are overridden by flags. JSON outputs carry a `provenance` object
//! (toolkit version, settings hash, seed); every output also gets a
//! `<file>.meta.json` sidecar with the same provenance plus input digests
//! and a timestamp, so the outputs themselves stay byte-stable.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::contamination_eval::{
    contamination_table, partition_topics, BootstrapOptions, EvalError, ResampleSource,
    TableOptions, TopicPartition,
};
use crate::dcq::{self, ContaminationReport, DcqError, QuizAnswer, QuizItem};
use crate::llm_client::{ClientConfig, LlmClient, LlmError};
use crate::metrics::{self, evaluate, Metric, MetricError};
use crate::rerank::{self, RerankConfig, RerankError};
use crate::trec_io::{self, TrecError};
use crate::trends::{self, Dataset, ReferenceLine, TrendsError};
use crate::TOOLKIT_VERSION;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: line {line}: {msg}", path.display())]
    ConfigSyntax {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: TrecError },
    #[error(transparent)]
    Trec(#[from] TrecError),
    #[error(transparent)]
    Dcq(#[from] DcqError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Trends(#[from] TrendsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "ircontam",
    version,
    about = "Contamination-aware evaluation of IR benchmarks"
)]
pub struct Cli {
    /// Key-value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for sampling and bootstrap stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on concurrent model calls and worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, paraphrase, run and score a contamination quiz.
    #[command(subcommand)]
    Quiz(QuizCommand),
    /// Split topics into the full set and the uncontaminated subset.
    Partition(PartitionArgs),
    /// Score a run against qrels.
    Eval(EvalArgs),
    /// Rerank a run with a listwise model.
    Rerank(RerankArgs),
    /// Full-set vs filtered-set comparison table with bootstrap intervals.
    Table(TableArgs),
    /// Trend lines, deltas and metric census from a literature extraction.
    Trends(TrendsArgs),
}

#[derive(Debug, Subcommand)]
pub enum QuizCommand {
    /// Sample relevant passages into draft quiz items.
    Build(BuildArgs),
    /// Generate the paraphrased distractors for each draft.
    Paraphrase(ParaphraseArgs),
    /// Ask the model every rotation of every item.
    Run(RunArgs),
    /// Fold answers into chance-corrected contamination estimates.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub topics: PathBuf,
    /// Relevant passages sampled per topic [config: per_topic, default 5].
    #[arg(long)]
    pub per_topic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParaphraseArgs {
    #[arg(long)]
    pub drafts: PathBuf,
    /// Paraphrases requested per call [config: paraphrase_k, default 4].
    #[arg(long)]
    pub k: Option<usize>,
    /// Calls per item before it is excluded [config: paraphrase_attempts, default 3].
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub items: PathBuf,
    /// Quiz prompt template with {topic} and {option_a}..{option_d}.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub answers: PathBuf,
    /// Quiz items; without them the item set is taken from the answers.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Model label for the report [config: model].
    #[arg(long)]
    pub model_id: Option<String>,
    /// Dataset label for the report [config: dataset].
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Contamination report from `quiz score`.
    #[arg(long)]
    pub report: PathBuf,
    /// Evaluated topic set: every topic judged in these qrels.
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Pc,
    Nc,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated, e.g. `ndcg@10,map` [config: metrics].
    #[arg(long)]
    pub metrics: Option<String>,
    /// Restrict to one side of a partition.
    #[arg(long, requires = "subset")]
    pub partition: Option<PathBuf>,
    #[arg(long, value_enum, requires = "partition")]
    pub subset: Option<Subset>,
    /// Per-topic CSV; a summary is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Same report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub topics: PathBuf,
    /// [config: depth, default 100]
    #[arg(long)]
    pub depth: Option<usize>,
    /// [config: window_size, default 20]
    #[arg(long)]
    pub window: Option<usize>,
    /// [config: stride, default 10]
    #[arg(long)]
    pub stride: Option<usize>,
    /// [config: max_words, default 300]
    #[arg(long)]
    pub max_words: Option<usize>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Pc,
    PcMinusNc,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Dataset label for the table header.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub qrels: PathBuf,
    /// `NAME:RUN:PARTITION[:REPORT]`, repeatable.
    #[arg(long = "system", required = true)]
    pub systems: Vec<String>,
    /// [config: metrics, default ndcg@10,map]
    #[arg(long)]
    pub metrics: Option<String>,
    /// [config: n_resamples, default 10000]
    #[arg(long)]
    pub resamples: Option<usize>,
    /// [config: level, default 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// [config: resample_source, default pc]
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    /// Text table.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrendsArgs {
    /// Literature extraction CSV.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub metric: String,
    /// Reference line `LABEL=VALUE`, repeatable; replaces the built-in ones
    /// [config: references, `;`-separated].
    #[arg(long = "reference")]
    pub references: Vec<String>,
    /// Print the improvement of CANDIDATE over REFERENCE, e.g. `0.734,0.536`.
    #[arg(long)]
    pub compare: Option<String>,
    /// Directory for series.json, series.csv, figure.svg and census.json.
    #[arg(long, default_value = "trends_out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    artifact: String,
    command: &'a str,
    provenance: &'a Provenance,
    settings: &'a BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    created_unix: u64,
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::ConfigSyntax {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resolved settings for one command plus the bookkeeping needed to stamp
/// its outputs.
struct Ctx {
    command: &'static str,
    kv: BTreeMap<String, String>,
    config_dir: PathBuf,
    seed: Option<u64>,
    jobs: usize,
    settings: BTreeMap<String, String>,
    inputs: BTreeMap<String, PathBuf>,
}

impl Ctx {
    fn new(cli: &Cli, command: &'static str) -> Result<Self> {
        let (kv, config_dir) = match &cli.config {
            Some(path) => {
                require(path)?;
                let text = read_text(path)?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse_config(&text, path)?, dir)
            }
            None => (BTreeMap::new(), PathBuf::new()),
        };
        let seed = match cli.seed {
            Some(s) => Some(s),
            None => kv
                .get("seed")
                .map(|s| {
                    s.parse().map_err(|_| {
                        CliError::Usage(format!("config `seed` is not an integer: `{s}`"))
                    })
                })
                .transpose()?,
        };
        let jobs = match cli.jobs {
            Some(j) => j,
            None => match kv.get("jobs") {
                Some(j) => j.parse().map_err(|_| {
                    CliError::Usage(format!("config `jobs` is not an integer: `{j}`"))
                })?,
                None => std::thread::available_parallelism().map_or(1, usize::from),
            },
        }
        .max(1);
        let mut settings = BTreeMap::new();
        settings.insert("command".to_string(), command.to_string());
        Ok(Self {
            command,
            kv,
            config_dir,
            seed,
            jobs,
            settings,
            inputs: BTreeMap::new(),
        })
    }

    fn require_seed(&mut self) -> Result<u64> {
        let seed = self.seed.ok_or_else(|| {
            CliError::Usage(format!(
                "`{}` needs a seed: pass --seed or set `seed` in --config",
                self.command
            ))
        })?;
        self.settings.insert("seed".into(), seed.to_string());
        Ok(seed)
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        require(path)?;
        self.inputs.insert(name.to_string(), path.to_path_buf());
        Ok(())
    }

    /// Flag value, else config value, else default; recorded in the settings.
    fn setting<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: std::str::FromStr + ToString,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.kv.get(key) {
                Some(raw) => raw.parse().map_err(|_| {
                    CliError::Usage(format!("config `{key}` has invalid value `{raw}`"))
                })?,
                None => default,
            },
        };
        self.settings.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn llm_client(&mut self) -> Result<LlmClient> {
        let mut kv = self.kv.clone();
        kv.insert("jobs".into(), self.jobs.to_string());
        if let Some(dir) = kv.get_mut("cache_dir") {
            let p = Path::new(dir.as_str());
            if p.is_relative() && !self.config_dir.as_os_str().is_empty() {
                *dir = self.config_dir.join(p).to_string_lossy().into_owned();
            }
        }
        let config = ClientConfig::from_kv(&kv)?;
        let e = &config.endpoint;
        for (k, v) in [
            ("model", e.model_name.clone()),
            ("base_url", e.base_url.clone()),
            ("temperature", e.temperature.to_string()),
            ("max_tokens", e.max_tokens.to_string()),
        ] {
            self.settings.insert(k.to_string(), v);
        }
        Ok(LlmClient::new(config))
    }

    fn provenance(&self) -> Provenance {
        let canonical = serde_json::to_vec(&self.settings).expect("settings serialize");
        Provenance {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: sha256_hex(&canonical),
            seed: self.seed,
        }
    }

    fn write_sidecar(&self, out: &Path) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for (name, path) in &self.inputs {
            let bytes = std::fs::read(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            inputs.insert(name.clone(), format!("sha256:{}", sha256_hex(&bytes)));
        }
        let provenance = self.provenance();
        let sidecar = Sidecar {
            artifact: out
                .file_name()
                .map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            command: self.command,
            provenance: &provenance,
            settings: &self.settings,
            inputs,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let mut name = out.as_os_str().to_os_string();
        name.push(".meta.json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
        write_file(Path::new(&name), &text)
    }

    /// Plain output plus its sidecar.
    fn emit(&self, out: &Path, text: &str) -> Result<()> {
        write_file(out, text)?;
        self.write_sidecar(out)
    }

    /// JSON output with embedded provenance and optional extra fields.
    fn emit_json<T: Serialize>(&self, out: &Path, body: &T, extra: &[(&str, Value)]) -> Result<()> {
        let mut value = serde_json::to_value(body).expect("artifact serializes");
        match &mut value {
            Value::Object(map) => {
                map.insert(
                    "provenance".into(),
                    serde_json::to_value(self.provenance()).expect("provenance serializes"),
                );
                for (k, v) in extra {
                    map.insert((*k).to_string(), v.clone());
                }
            }
            _ => unreachable!("artifacts are JSON objects"),
        }
        let text = serde_json::to_string_pretty(&value).expect("value serializes") + "\n";
        self.emit(out, &text)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn read_text(path: &Path) -> Result<String> {
    trec_io::read_lossy(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn with_path<T>(path: &Path, r: std::result::Result<T, TrecError>) -> Result<T> {
    r.map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run_from_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Quiz(QuizCommand::Build(a)) => quiz_build(cli, a),
        Command::Quiz(QuizCommand::Paraphrase(a)) => quiz_paraphrase(cli, a),
        Command::Quiz(QuizCommand::Run(a)) => quiz_run(cli, a),
        Command::Quiz(QuizCommand::Score(a)) => quiz_score(cli, a),
        Command::Partition(a) => partition(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Rerank(a) => rerank_cmd(cli, a),
        Command::Table(a) => table(cli, a),
        Command::Trends(a) => trends_cmd(cli, a),
    }
}

fn quiz_build(cli: &Cli, a: &BuildArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "quiz build")?;
    ctx.input("qrels", &a.qrels)?;
    ctx.input("corpus", &a.corpus)?;
    ctx.input("topics", &a.topics)?;
    let seed = ctx.require_seed()?;
    let per_topic = ctx.setting("per_topic", a.per_topic, 5)?;
    let qrels = with_path(&a.qrels, trec_io::parse_qrels(&read_text(&a.qrels)?))?;
    let corpus = with_path(&a.corpus, trec_io::parse_corpus(&read_text(&a.corpus)?))?;
    let topics = with_path(&a.topics, trec_io::parse_topics(&read_text(&a.topics)?))?;
    let outcome = dcq::build_quiz_items(&qrels, &corpus, &topics, per_topic, seed)?;
    ctx.emit(&a.out, &dcq::write_jsonl(&outcome.drafts))?;
    let quizzed: BTreeSet<&str> = outcome.drafts.iter().map(|d| d.topic_id.as_str()).collect();
    println!(
        "{} items over {} topics; {} topics without usable passages",
        outcome.drafts.len(),
        quizzed.len(),
        outcome.skipped_topics.len()
    );
    Ok(())
}

fn quiz_paraphrase(cli: &Cli, a: &ParaphraseArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "quiz paraphrase")?;
    ctx.input("drafts", &a.drafts)?;
    let k = ctx.setting("paraphrase_k", a.k, 4)?;
    let attempts = ctx.setting("paraphrase_attempts", a.max_attempts, 3)?;
    let client = ctx.llm_client()?;
    let drafts: Vec<QuizItem> = dcq::read_jsonl(&read_text(&a.drafts)?)?;
    let outcome = dcq::fill_all(&drafts, &client, k, attempts, ctx.jobs)?;
    ctx.emit(&a.out, &dcq::write_jsonl(&outcome.items))?;
    println!(
        "{} items complete, {} excluded",
        outcome.items.len(),
        outcome.excluded.len()
    );
    for id in &outcome.excluded {
        println!("excluded {id}");
    }
    Ok(())
}

fn quiz_run(cli: &Cli, a: &RunArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "quiz run")?;
    ctx.input("items", &a.items)?;
    let template = match &a.template {
        Some(p) => {
            ctx.input("template", p)?;
            read_text(p)?
        }
        None => dcq::DEFAULT_QUIZ_TEMPLATE.to_string(),
    };
    ctx.settings
        .insert("template_sha256".into(), sha256_hex(template.as_bytes()));
    let client = ctx.llm_client()?;
    let items: Vec<QuizItem> = dcq::read_jsonl(&read_text(&a.items)?)?;
    let mut trials = Vec::with_capacity(items.len() * dcq::NUM_OPTIONS);
    for item in &items {
        trials.extend(dcq::assemble_trials(item)?);
    }
    let answers = dcq::run_quiz(&trials, &client, &template, ctx.jobs)?;
    ctx.emit(&a.out, &dcq::write_jsonl(&answers))?;
    let invalid = answers
        .iter()
        .filter(|x| x.chosen_position.is_none())
        .count();
    println!(
        "{} trials answered, {invalid} without a readable choice",
        answers.len()
    );
    Ok(())
}

fn items_from_answers(answers: &[QuizAnswer]) -> Vec<QuizItem> {
    let mut seen = BTreeMap::new();
    for a in answers {
        seen.entry(a.item_id.clone()).or_insert_with(|| QuizItem {
            item_id: a.item_id.clone(),
            topic_id: a.topic_id.clone(),
            doc_id: a.doc_id.clone(),
            topic_text: String::new(),
            original: String::new(),
            paraphrases: Vec::new(),
        });
    }
    seen.into_values().collect()
}

fn quiz_score(cli: &Cli, a: &ScoreArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "quiz score")?;
    ctx.input("answers", &a.answers)?;
    let answers: Vec<QuizAnswer> = dcq::read_jsonl(&read_text(&a.answers)?)?;
    let items = match &a.items {
        Some(p) => {
            ctx.input("items", p)?;
            dcq::read_jsonl(&read_text(p)?)?
        }
        None => items_from_answers(&answers),
    };
    let model_id = a
        .model_id
        .clone()
        .or_else(|| ctx.kv.get("model").cloned())
        .unwrap_or_else(|| "unknown".into());
    let dataset = a
        .dataset
        .clone()
        .or_else(|| ctx.kv.get("dataset").cloned())
        .unwrap_or_else(|| "unknown".into());
    ctx.settings.insert("model_id".into(), model_id.clone());
    ctx.settings.insert("dataset".into(), dataset.clone());
    let report = dcq::score_contamination(&answers, &items, &model_id, &dataset);
    let display = report.interval_display();
    ctx.emit_json(
        &a.out,
        &report,
        &[("interval", Value::String(display.clone()))],
    )?;
    let flagged = report.contaminated_topics().len();
    println!(
        "{model_id} on {dataset}: {} items, contamination {display}, {flagged}/{} topics flagged",
        report.items_total,
        report.per_topic_flags.len()
    );
    Ok(())
}

fn partition(cli: &Cli, a: &PartitionArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "partition")?;
    ctx.input("report", &a.report)?;
    ctx.input("qrels", &a.qrels)?;
    let report: ContaminationReport = read_json(&a.report)?;
    let qrels = with_path(&a.qrels, trec_io::parse_qrels(&read_text(&a.qrels)?))?;
    let p = partition_topics(&report, qrels.topic_ids());
    ctx.emit_json(&a.out, &p, &[])?;
    println!(
        "NC keeps {}/{} topics ({:.1}%), {} never quizzed",
        p.nc_topics.len(),
        p.pc_topics.len(),
        p.retention() * 100.0,
        p.never_quizzed.len()
    );
    Ok(())
}

fn metric_setting(ctx: &mut Ctx, flag: &Option<String>) -> Result<Vec<Metric>> {
    let raw = ctx.setting("metrics", flag.clone(), "ndcg@10,map".to_string())?;
    Ok(metrics::parse_metric_list(&raw)?)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "eval")?;
    ctx.input("run", &a.run)?;
    ctx.input("qrels", &a.qrels)?;
    let metric_list = metric_setting(&mut ctx, &a.metrics)?;
    let run = with_path(&a.run, trec_io::parse_run(&read_text(&a.run)?))?;
    let qrels = with_path(&a.qrels, trec_io::parse_qrels(&read_text(&a.qrels)?))?;
    let filter = match (&a.partition, a.subset) {
        (Some(p), Some(subset)) => {
            ctx.input("partition", p)?;
            let part: TopicPartition = read_json(p)?;
            let side = match subset {
                Subset::Pc => "pc",
                Subset::Nc => "nc",
            };
            ctx.settings.insert("subset".into(), side.into());
            Some(match subset {
                Subset::Pc => part.pc_topics,
                Subset::Nc => part.nc_topics,
            })
        }
        _ => None,
    };
    let report = evaluate(&run, &qrels, &metric_list, filter.as_ref());
    if let Some(out) = &a.out {
        ctx.emit(out, &report.to_csv())?;
    }
    if let Some(out) = &a.json {
        ctx.emit_json(out, &report, &[])?;
    }
    print!("{}", report.summary());
    Ok(())
}

fn rerank_cmd(cli: &Cli, a: &RerankArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "rerank")?;
    ctx.input("run", &a.run)?;
    ctx.input("corpus", &a.corpus)?;
    ctx.input("topics", &a.topics)?;
    let defaults = RerankConfig::default();
    let prompt_template = match &a.template {
        Some(p) => {
            ctx.input("template", p)?;
            read_text(p)?
        }
        None => defaults.prompt_template.clone(),
    };
    ctx.settings.insert(
        "template_sha256".into(),
        sha256_hex(prompt_template.as_bytes()),
    );
    let config = RerankConfig {
        depth: ctx.setting("depth", a.depth, defaults.depth)?,
        window_size: ctx.setting("window_size", a.window, defaults.window_size)?,
        stride: ctx.setting("stride", a.stride, defaults.stride)?,
        max_words: ctx.setting("max_words", a.max_words, defaults.max_words)?,
        prompt_template,
    };
    config.validate()?;
    let client = ctx.llm_client()?;
    let run = with_path(&a.run, trec_io::parse_run(&read_text(&a.run)?))?;
    let corpus = with_path(&a.corpus, trec_io::parse_corpus(&read_text(&a.corpus)?))?;
    let topics = with_path(&a.topics, trec_io::parse_topics(&read_text(&a.topics)?))?;
    let reranked = rerank::rerank_run(&run, &corpus, &topics, &config, &client, ctx.jobs)?;
    ctx.emit(&a.out, &trec_io::write_run(&reranked))?;
    println!("reranked {} topics", reranked.num_topics());
    Ok(())
}

struct SystemSpec {
    name: String,
    run: PathBuf,
    partition: PathBuf,
    report: Option<PathBuf>,
}

fn parse_system(spec: &str) -> Result<SystemSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [name, run, part] | [name, run, part, ""] => Ok(SystemSpec {
            name: name.to_string(),
            run: run.into(),
            partition: part.into(),
            report: None,
        }),
        [name, run, part, report] => Ok(SystemSpec {
            name: name.to_string(),
            run: run.into(),
            partition: part.into(),
            report: Some(report.into()),
        }),
        _ => Err(CliError::Usage(format!(
            "--system expects NAME:RUN:PARTITION[:REPORT], got `{spec}`"
        ))),
    }
}

fn table(cli: &Cli, a: &TableArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "table")?;
    ctx.input("qrels", &a.qrels)?;
    let specs = a
        .systems
        .iter()
        .map(|s| parse_system(s))
        .collect::<Result<Vec<_>>>()?;
    for s in &specs {
        if s.name.is_empty() {
            return Err(CliError::Usage("--system needs a non-empty name".into()));
        }
        ctx.input(&format!("{}.run", s.name), &s.run)?;
        ctx.input(&format!("{}.partition", s.name), &s.partition)?;
        if let Some(r) = &s.report {
            ctx.input(&format!("{}.report", s.name), r)?;
        }
    }
    let seed = ctx.require_seed()?;
    let metric_list = metric_setting(&mut ctx, &a.metrics)?;
    let n_resamples = ctx.setting("n_resamples", a.resamples, 10_000)?;
    let level = ctx.setting("level", a.level, 0.95)?;
    let source = match a.source {
        Some(SourceArg::Pc) => ResampleSource::Pc,
        Some(SourceArg::PcMinusNc) => ResampleSource::PcMinusNc,
        None => match ctx.kv.get("resample_source").map(String::as_str) {
            None | Some("pc") => ResampleSource::Pc,
            Some("pc-minus-nc" | "pc_minus_nc") => ResampleSource::PcMinusNc,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config `resample_source` must be pc or pc-minus-nc, got `{other}`"
                )))
            }
        },
    };
    ctx.settings.insert(
        "resample_source".into(),
        match source {
            ResampleSource::Pc => "pc",
            ResampleSource::PcMinusNc => "pc-minus-nc",
        }
        .into(),
    );
    ctx.settings.insert("dataset".into(), a.dataset.clone());

    let qrels = with_path(&a.qrels, trec_io::parse_qrels(&read_text(&a.qrels)?))?;
    let mut runs = BTreeMap::new();
    let mut partitions = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for s in &specs {
        runs.insert(
            s.name.clone(),
            with_path(&s.run, trec_io::parse_run(&read_text(&s.run)?))?,
        );
        partitions.insert(s.name.clone(), read_json::<TopicPartition>(&s.partition)?);
        if let Some(r) = &s.report {
            reports.insert(s.name.clone(), read_json::<ContaminationReport>(r)?);
        }
    }
    let opts = TableOptions {
        bootstrap: BootstrapOptions {
            n_resamples,
            level,
            seed,
            parallel: true,
        },
        source,
    };
    let t = contamination_table(
        &a.dataset,
        &runs,
        &qrels,
        &partitions,
        &reports,
        &metric_list,
        &opts,
    )?;
    let text = t.render_text();
    ctx.emit(&a.out, &text)?;
    if let Some(p) = &a.csv {
        ctx.emit(p, &t.to_csv())?;
    }
    if let Some(p) = &a.json {
        ctx.emit_json(p, &t, &[])?;
    }
    print!("{text}");
    Ok(())
}

fn parse_reference(spec: &str) -> Result<ReferenceLine> {
    let (label, value) = spec
        .rsplit_once('=')
        .ok_or_else(|| CliError::Usage(format!("--reference expects LABEL=VALUE, got `{spec}`")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("--reference value is not a number: `{spec}`")))?;
    Ok(ReferenceLine {
        label: label.trim().to_string(),
        value,
        dashed: false,
    })
}

fn trends_cmd(cli: &Cli, a: &TrendsArgs) -> Result<()> {
    let mut ctx = Ctx::new(cli, "trends")?;
    ctx.input("csv", &a.csv)?;
    let dataset: Dataset = a.dataset.parse().map_err(CliError::Usage)?;
    let metric = trends::canonical_metric(&a.metric);
    let compare = a
        .compare
        .as_deref()
        .map(|c| {
            let parsed = c.split_once(',').and_then(|(x, y)| {
                Some((x.trim().parse::<f64>().ok()?, y.trim().parse::<f64>().ok()?))
            });
            parsed.ok_or_else(|| {
                CliError::Usage(format!("--compare expects CANDIDATE,REFERENCE, got `{c}`"))
            })
        })
        .transpose()?;
    let configured: Vec<String> = match (a.references.is_empty(), ctx.kv.get("references")) {
        (false, _) => a.references.clone(),
        (true, Some(list)) => list
            .split(';')
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .map(String::from)
            .collect(),
        (true, None) => Vec::new(),
    };
    let references = if configured.is_empty() {
        trends::default_reference_lines(dataset, &metric)
    } else {
        configured
            .iter()
            .map(|r| parse_reference(r))
            .collect::<Result<Vec<_>>>()?
    };
    ctx.settings.insert("dataset".into(), dataset.to_string());
    ctx.settings.insert("metric".into(), metric.clone());
    ctx.settings.insert(
        "references".into(),
        serde_json::to_string(&references).expect("references serialize"),
    );
    let records = trends::load_meta_csv(&read_text(&a.csv)?)?;
    let bundle = trends::emit_plot_series(&records, dataset, &metric, &references);
    let census = trends::metric_census(&records);
    ctx.emit_json(&a.out_dir.join("series.json"), &bundle, &[])?;
    ctx.emit(&a.out_dir.join("series.csv"), &bundle.to_csv())?;
    ctx.emit(&a.out_dir.join("figure.svg"), &bundle.to_svg())?;
    let census_body: BTreeMap<String, &trends::DatasetCensus> =
        census.iter().map(|(d, c)| (d.to_string(), c)).collect();
    ctx.emit_json(
        &a.out_dir.join("census.json"),
        &serde_json::json!({ "datasets": census_body }),
        &[],
    )?;

    for t in &bundle.trend_lines {
        println!(
            "{} trend: {:+.4} per year over {} years",
            t.category, t.slope, t.points_used
        );
    }
    if let Some(c) = census.get(&dataset) {
        println!(
            "{dataset}: {} publications, {} distinct metrics, {} report {metric}",
            c.publications,
            c.distinct_metrics(),
            c.metrics.get(&metric).copied().unwrap_or(0)
        );
    }
    if let Some((cand, reference)) = compare {
        let d = trends::improvement_delta(cand, reference)?;
        println!("{cand} vs {reference}: {d}");
        println!("note: {}", trends::DELTA_FOOTNOTE);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let kv = parse_config(
            "# comment\nmodel = m1\n\nseed=7 # trailing\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(kv["model"], "m1");
        assert_eq!(kv["seed"], "7");
        assert!(matches!(
            parse_config("oops\n", Path::new("c")),
            Err(CliError::ConfigSyntax { line: 1, .. })
        ));
    }

    #[test]
    fn system_specs() {
        let s = parse_system("bm25:r.txt:p.json").unwrap();
        assert_eq!((s.name.as_str(), s.report), ("bm25", None));
        let s = parse_system("x:r:p:rep.json").unwrap();
        assert_eq!(s.report, Some(PathBuf::from("rep.json")));
        assert!(parse_system("x:r").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_from_args(["ircontam", "frobnicate"]), 2);
        assert_eq!(run_from_args(["ircontam", "eval", "--bogus"]), 2);
        assert_eq!(run_from_args(["ircontam", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_1() {
        let code = run_from_args([
            "ircontam",
            "eval",
            "--run",
            "/nonexistent/run",
            "--qrels",
            "/nonexistent/qrels",
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn seed_is_required_for_sampling() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["q", "c", "t"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
        let code = run_from_args([
            "ircontam".to_string(),
            "quiz".into(),
            "build".into(),
            "--qrels".into(),
            p("q"),
            "--corpus".into(),
            p("c"),
            "--topics".into(),
            p("t"),
            "--out".into(),
            p("o"),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn reference_specs() {
        let r = parse_reference("TREC 2020 best=0.8031").unwrap();
        assert_eq!((r.label.as_str(), r.value), ("TREC 2020 best", 0.8031));
        assert!(parse_reference("nope").is_err());
    }
}
