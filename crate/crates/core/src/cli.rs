//! Command-line front end: `ingest`, `vocab`, `gen`, `train`, `eval`,
//! `analyze`.
//!
//! Exit status is 0 on success, 1 for data and runtime errors and 2 for
//! usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    corpus_stats, load_dialogues_jsonl, load_pairs_tsv, pair_stats, Corpus, Dialogue, LabeledPair,
};
use crate::error::{Error, Result};
use crate::eval::{
    breakdown_csv, group_pairs, length_breakdown, rank_groups, LengthMode, MetricReport, RankingResult,
};
use crate::manifest::RunManifest;
use crate::model::{EncoderConfig, MatcherModel};
use crate::taskgen::{gen_cd, gen_id, gen_nsp, gen_ur, InstanceRecord, PackConfig, Task, TaskRngs, TaskSet};
use crate::tokenizer::{build_vocab, Vocab, DEFAULT_MAX_CTX, DEFAULT_MAX_RESP, MAX_SEQUENCE_LEN};
use crate::trainer::{train_with, LogEvent, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "dialog-match", version, about = "Multi-task response selection for multi-turn dialogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and write its statistics.
    Ingest(IngestArgs),
    /// Build a vocabulary file.
    Vocab(VocabArgs),
    /// Dump auxiliary-task instances as JSONL.
    Gen(GenArgs),
    /// Train a matching model.
    Train(TrainArgs),
    /// Rank candidate groups with a trained model.
    Eval(EvalArgs),
    /// Break ranking results down by context length.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).multiple(true).args(["pairs", "dialogues"])))]
pub struct IngestArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).multiple(true).args(["pairs", "dialogues"])))]
pub struct VocabArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, default_value_t = 30_000)]
    pub max_size: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["pairs", "dialogues"])))]
pub struct GenArgs {
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// Use the distinct contexts of a pair file as dialogues.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Built from the input when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "nsp,ur,id,cd")]
    pub tasks: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_CTX)]
    pub max_ctx: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_RESP)]
    pub max_resp: usize,
    /// Output JSONL file; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Validation pairs, grouped by context.
    #[arg(long)]
    pub valid: PathBuf,
    /// Donor dialogues for auxiliary tasks; defaults to the training contexts.
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// Built from the training data when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// JSON file with `encoder` and `train` sections overriding defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub tasks: Option<String>,
    /// Context budget, default 448.
    #[arg(long)]
    pub max_ctx: Option<usize>,
    /// Response budget, default 64.
    #[arg(long)]
    pub max_resp: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pair file; consecutive lines with the same context form a group.
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `config.json` next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub max_ctx: Option<usize>,
    #[arg(long)]
    pub max_resp: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// `rankings.jsonl` written by `eval`.
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long, default_value = "turns")]
    pub mode: LengthMode,
    /// Comma-separated, strictly increasing bucket edges.
    #[arg(long, value_delimiter = ',', required = true)]
    pub edges: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Everything `train` needs to rebuild its model, as saved in `config.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &recorded) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = Cli::command().error(ErrorKind::InvalidValue, msg).print();
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> ! {
    std::process::exit(run(std::env::args_os()))
}

fn dispatch(command: Command, args: &[String]) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a, args),
        Command::Vocab(a) => vocab(a, args),
        Command::Gen(a) => gen(a, args),
        Command::Train(a) => train(a, args),
        Command::Eval(a) => eval(a, args),
        Command::Analyze(a) => analyze(a, args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_tasks(s: &str) -> Result<TaskSet, Failure> {
    TaskSet::parse(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_inputs(pairs: Option<&Path>, dialogues: Option<&Path>) -> Result<(Vec<LabeledPair>, Vec<Dialogue>)> {
    let pairs = pairs.map(load_pairs_tsv).transpose()?.unwrap_or_default();
    let dialogues = dialogues.map(load_dialogues_jsonl).transpose()?.unwrap_or_default();
    Ok((pairs, dialogues))
}

fn all_utterances<'a>(
    pairs: &'a [LabeledPair],
    dialogues: &'a [Dialogue],
) -> impl Iterator<Item = &'a crate::corpus::Utterance> {
    pairs
        .iter()
        .flat_map(|p| p.context.utterances.iter().chain(std::iter::once(&p.response)))
        .chain(dialogues.iter().flat_map(|d| &d.utterances))
}

fn inputs<'a>(paths: &[Option<&'a PathBuf>]) -> Vec<&'a Path> {
    paths.iter().flatten().map(|p| p.as_path()).collect()
}

fn ingest(a: IngestArgs, args: &[String]) -> Result<(), Failure> {
    let (pairs, dialogues) = load_inputs(a.pairs.as_deref(), a.dialogues.as_deref())?;
    let mut stats = serde_json::Map::new();
    if a.pairs.is_some() {
        stats.insert("pairs".into(), serde_json::to_value(pair_stats(&pairs)?).map_err(Error::from)?);
    }
    if a.dialogues.is_some() {
        Corpus::new(dialogues.clone())?;
        stats.insert("dialogues".into(), serde_json::to_value(corpus_stats(&dialogues)?).map_err(Error::from)?);
    }
    create_dir(&a.out)?;
    let stats_path = a.out.join("stats.json");
    RunManifest::new(
        "ingest",
        args,
        json!({}),
        a.seed,
        &inputs(&[a.pairs.as_ref(), a.dialogues.as_ref()]),
        std::slice::from_ref(&stats_path),
    )?
    .save(a.out.join("manifest.json"))?;
    write_json(&stats_path, &stats)?;
    println!("{} pairs, {} dialogues ok", pairs.len(), dialogues.len());
    Ok(())
}

fn vocab(a: VocabArgs, args: &[String]) -> Result<(), Failure> {
    let (pairs, dialogues) = load_inputs(a.pairs.as_deref(), a.dialogues.as_deref())?;
    let vocab = build_vocab(all_utterances(&pairs, &dialogues), a.min_freq, a.max_size)?;
    create_dir(&a.out)?;
    let path = a.out.join("vocab.txt");
    RunManifest::new(
        "vocab",
        args,
        json!({ "min_freq": a.min_freq, "max_size": a.max_size }),
        a.seed,
        &inputs(&[a.pairs.as_ref(), a.dialogues.as_ref()]),
        std::slice::from_ref(&path),
    )?
    .save(a.out.join("manifest.json"))?;
    vocab.save(&path)?;
    println!("{} tokens", vocab.len());
    Ok(())
}

fn pack_config(max_ctx: usize, max_resp: usize) -> Result<PackConfig, Failure> {
    if max_ctx < 2 || max_resp < 1 {
        return Err(Failure::Usage("--max-ctx must be >= 2 and --max-resp >= 1".into()));
    }
    Ok(PackConfig {
        max_ctx,
        max_resp,
        max_len: (max_ctx + max_resp).min(MAX_SEQUENCE_LEN),
    })
}

fn gen(a: GenArgs, args: &[String]) -> Result<(), Failure> {
    let tasks = parse_tasks(&a.tasks)?;
    if tasks.is_empty() {
        return Err(Failure::Usage("no tasks enabled".into()));
    }
    let pack = pack_config(a.max_ctx, a.max_resp)?;
    let (pairs, mut dialogues) = load_inputs(a.pairs.as_deref(), a.dialogues.as_deref())?;
    if a.pairs.is_some() {
        dialogues = Corpus::from_pair_contexts(&pairs)?.dialogues().to_vec();
    }
    let corpus = Corpus::new(dialogues)?;
    let vocab = match &a.vocab {
        Some(p) => Vocab::load(p)?,
        None => build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, usize::MAX)?,
    };

    let manifest_path = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    RunManifest::new(
        "gen",
        args,
        json!({ "tasks": tasks, "pack": pack }),
        a.seed,
        &inputs(&[a.pairs.as_ref(), a.dialogues.as_ref(), a.vocab.as_ref()]),
        std::slice::from_ref(&a.out),
    )?
    .save(&manifest_path)?;

    let file = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut out = BufWriter::new(file);
    let mut rngs = TaskRngs::new(a.seed, 0);
    let (mut written, mut skipped) = (0usize, 0usize);
    for d in corpus.dialogues() {
        for task in tasks.enabled() {
            if d.len() < task.min_turns() {
                skipped += 1;
                continue;
            }
            let record: InstanceRecord = match task {
                Task::Nsp => (&gen_nsp(d, &corpus, &mut rngs.nsp, &vocab, pack.max_len)?).into(),
                Task::Ur => (&gen_ur(d, &mut rngs.ur, &vocab, pack.max_len)?).into(),
                Task::Id => (&gen_id(d, &corpus, &mut rngs.id, &vocab, pack.max_len)?).into(),
                Task::Cd => (&gen_cd(d, &corpus, &mut rngs.cd, &vocab, pack.max_len)?).into(),
                Task::Crm => unreachable!("not auxiliary"),
            };
            serde_json::to_writer(&mut out, &record).map_err(Error::from)?;
            out.write_all(b"\n").map_err(|e| Error::io(&a.out, e))?;
            written += 1;
        }
    }
    out.flush().map_err(|e| Error::io(&a.out, e))?;
    println!("{written} instances, {skipped} skipped");
    Ok(())
}

fn train(a: TrainArgs, args: &[String]) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.delta {
        t.delta = v;
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if a.max_steps.is_some() {
        t.max_steps = a.max_steps;
    }
    if let Some(v) = a.max_epochs {
        t.max_epochs = v;
    }
    if let Some(s) = &a.tasks {
        t.tasks = parse_tasks(s)?;
    }
    t.pack = pack_config(a.max_ctx.unwrap_or(t.pack.max_ctx), a.max_resp.unwrap_or(t.pack.max_resp))?;
    t.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let train_pairs = load_pairs_tsv(&a.pairs)?;
    let valid = group_pairs(&load_pairs_tsv(&a.valid)?)?;
    let corpus = match &a.dialogues {
        Some(p) => Corpus::new(load_dialogues_jsonl(p)?)?,
        None => Corpus::from_pair_contexts(&train_pairs)?,
    };
    let vocab = match &a.vocab {
        Some(p) => Vocab::load(p)?,
        None => build_vocab(all_utterances(&train_pairs, corpus.dialogues()), 1, usize::MAX)?,
    };
    cfg.encoder.vocab_size = vocab.len();
    cfg.encoder.max_len = cfg.encoder.max_len.max(cfg.train.pack.max_len);

    create_dir(&a.out)?;
    let paths = ["config.json", "vocab.txt", "model.bin", "train_log.jsonl"].map(|f| a.out.join(f));
    RunManifest::new(
        "train",
        args,
        serde_json::to_value(&cfg).map_err(Error::from)?,
        cfg.train.seed,
        &inputs(&[Some(&a.pairs), Some(&a.valid), a.dialogues.as_ref(), a.vocab.as_ref(), a.config.as_ref()]),
        &paths,
    )?
    .save(a.out.join("manifest.json"))?;
    write_json(&paths[0], &cfg)?;
    vocab.save(&paths[1])?;

    let model = MatcherModel::new(cfg.encoder.clone(), cfg.train.seed)?;
    let trained = train_with(model, &vocab, &train_pairs, &corpus, &valid, &cfg.train, |e| {
        if let LogEvent::Validation(v) = e {
            eprintln!("step {:>6}  {} {:.4}", v.step, v.metric, v.value);
        }
    })?;
    trained.model.save(&paths[2])?;
    trained.log.save(&paths[3])?;
    if let Some(best) = trained.log.best_validation() {
        println!("best {} {:.4} at step {}", best.metric, best.value, best.step);
    }
    Ok(())
}

fn beside(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn eval(a: EvalArgs, args: &[String]) -> Result<(), Failure> {
    let config_path = a.config.clone().unwrap_or_else(|| beside(&a.checkpoint, "config.json"));
    let vocab_path = a.vocab.clone().unwrap_or_else(|| beside(&a.checkpoint, "vocab.txt"));
    let cfg = RunConfig::load(&config_path)?;
    let pack = pack_config(
        a.max_ctx.unwrap_or(cfg.train.pack.max_ctx),
        a.max_resp.unwrap_or(cfg.train.pack.max_resp),
    )?;
    let vocab = Vocab::load(&vocab_path)?;
    let groups = group_pairs(&load_pairs_tsv(&a.groups)?)?;
    let model = MatcherModel::load(cfg.encoder.clone(), &a.checkpoint)?;

    create_dir(&a.out)?;
    let paths = ["report.json", "report.txt", "rankings.jsonl"].map(|f| a.out.join(f));
    RunManifest::new(
        "eval",
        args,
        json!({ "encoder": cfg.encoder, "pack": pack }),
        a.seed,
        &[a.groups.as_path(), a.checkpoint.as_path(), config_path.as_path(), vocab_path.as_path()],
        &paths,
    )?
    .save(a.out.join("manifest.json"))?;

    let results = rank_groups(&model, &vocab, &pack, &groups)?;
    let report = MetricReport::from_results(&results)?;
    write_json(&paths[0], &report)?;
    let table = report.to_table();
    write_text(&paths[1], &table)?;
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).map_err(Error::from)?);
        lines.push('\n');
    }
    write_text(&paths[2], &lines)?;
    print!("{table}");
    Ok(())
}

fn load_rankings(path: &Path) -> Result<Vec<RankingResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Load {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("invalid ranking record: {e}"),
            })
        })
        .collect()
}

fn analyze(a: AnalyzeArgs, args: &[String]) -> Result<(), Failure> {
    let results = load_rankings(&a.rankings)?;
    let buckets = length_breakdown(&results, a.mode, &a.edges)?;
    create_dir(&a.out)?;
    let paths = ["breakdown.json", "breakdown.csv"].map(|f| a.out.join(f));
    RunManifest::new(
        "analyze",
        args,
        json!({ "mode": a.mode, "edges": a.edges }),
        a.seed,
        &[a.rankings.as_path()],
        &paths,
    )?
    .save(a.out.join("manifest.json"))?;
    write_json(&paths[0], &buckets)?;
    let csv = breakdown_csv(&buckets);
    write_text(&paths[1], &csv)?;
    print!("{csv}");
    Ok(())
}
