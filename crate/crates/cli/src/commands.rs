use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pal_core::analysis::{analyze, AnalyzeOptions};
use pal_core::concepts::{video_concept_matches, Lexicon};
use pal_core::corpus::{self, load_corpus, synthesize_corpus, write_corpus, write_jsonl_atomic, Corpus, SynthConfig};
use pal_core::downstream::{
    dropout_eval, eval_baseline, eval_model, kt_probe, resource_eval, resource_permutation_control, Baseline,
    ResourceLevel,
};
use pal_core::encoder::{load_text_vectors, TokenMode};
use pal_core::model::{load_checkpoint, pretrain, save_checkpoint, ModelConfig, PalModel};
use pal_core::Exec;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "pal", version, about = "Learner modeling from MOOC watch behavior")]
pub struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Rebuild learning sequences from raw heartbeat logs.
    Ingest(IngestArgs),
    /// Sample size, Markov test, adjacent similarity and discipline profiles.
    Analyze(AnalyzeArgs),
    /// Concept lexicon tools.
    #[command(subcommand)]
    Concepts(ConceptsCommand),
    /// Pre-train a model with masked behavior prediction.
    Train(TrainArgs),
    /// Downstream evaluations.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the concept search and ranking API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    courses: Option<usize>,
    #[arg(long)]
    videos_per_course: Option<usize>,
    #[arg(long)]
    mean_seq_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Corpus directory holding heartbeats.jsonl and the metadata files.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory; defaults to rewriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ConceptsCommand {
    /// Match the concept lexicon against every video's subtitles and write
    /// video_concepts.jsonl.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: u32,
        /// Defaults to video_concepts.jsonl inside the corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Text,
    Concept,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long, value_enum)]
    token_mode: Option<ModeArg>,
    #[arg(long)]
    use_meta: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    text_dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON model config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Precomputed raw vectors, one {video, vector} object per line.
    #[arg(long)]
    text_vectors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the training report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args, Debug)]
pub struct EvalCommon {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub(crate) enum BaselineArg {
    Pop,
    Kss,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub(crate) enum LevelArg {
    Course,
    Video,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Next-video recommendation (leave-one-out, popular negatives).
    Rec {
        #[command(flatten)]
        common: EvalCommon,
        /// Score with a baseline instead of a model.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
    },
    /// Quartile classification of comment or completion rates.
    Resource {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum, default_value = "video")]
        level: LevelArg,
        /// Shuffle the labels with this seed before splitting.
        #[arg(long)]
        permute: Option<u64>,
        /// Also report mean macro-F1 over this many label permutations.
        #[arg(long)]
        control_rounds: Option<usize>,
    },
    /// Knowledge-tracing probe.
    Kt {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, default_value_t = 1.0)]
        train_fraction: f64,
    },
    /// Dropout prediction, combined features against counts only.
    Dropout {
        #[command(flatten)]
        common: EvalCommon,
    },
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Append-only watch log, replayed at start.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    log::info!("resolved run: {:?} (exec {:?})", cli.command, exec);
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Analyze(a) => analyze_cmd(a, exec),
        Command::Concepts(ConceptsCommand::Extract { corpus, min_count, out }) => extract(&corpus, min_count, out),
        Command::Train(a) => train(a, exec),
        Command::Eval(e) => eval(e, exec),
        Command::Serve(a) => serve(a),
    }
}

/// Writes `bytes` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut name = path.file_name().context("output path has no file name")?.to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            log::info!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load(dir: &Path) -> Result<Corpus> {
    let c = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    log::info!(
        "corpus {}: {} students, {} videos, {} sequences",
        dir.display(),
        c.students.len(),
        c.videos.len(),
        c.sequences.len()
    );
    Ok(c)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(v) = a.students {
        cfg.n_students = v;
    }
    if let Some(v) = a.courses {
        cfg.n_courses = v;
    }
    if let Some(v) = a.videos_per_course {
        cfg.videos_per_course = v;
    }
    if let Some(v) = a.mean_seq_len {
        cfg.mean_seq_len = v;
    }
    log::info!("synth config: {cfg:?}");
    let c = synthesize_corpus(&cfg)?;
    write_corpus(&c, &a.out)?;
    emit(&corpus::corpus_stats(&c), None)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut c = load(&a.corpus)?;
    if c.heartbeats.is_empty() {
        bail!("{} has no heartbeat logs to ingest", a.corpus.display());
    }
    let (sequences, report) = corpus::ingest(&c.heartbeats);
    c.sequences = sequences;
    c.reindex();
    let out = a.out.unwrap_or(a.corpus);
    write_corpus(&c, &out)?;
    emit(&report, None)
}

fn analyze_cmd(a: AnalyzeArgs, exec: Exec) -> Result<()> {
    let c = load(&a.corpus)?;
    let opts = AnalyzeOptions {
        alpha: a.alpha,
        seed: a.seed,
        ..AnalyzeOptions::default()
    };
    emit(&analyze(&c, &opts, exec)?, a.out.as_deref())
}

fn extract(dir: &Path, min_count: u32, out: Option<PathBuf>) -> Result<()> {
    let c = load(dir)?;
    if c.concepts.is_empty() {
        bail!("{} has no concepts.jsonl lexicon", dir.display());
    }
    let matches = video_concept_matches(&c, &Lexicon::new(&c.concepts), min_count);
    let linked = matches.iter().filter(|m| !m.is_empty()).count();
    let out = out.unwrap_or_else(|| dir.join("video_concepts.jsonl"));
    write_jsonl_atomic(&out, &corpus::video_concept_lines(&c, &matches))?;
    emit(&json!({ "videos": c.videos.len(), "linked": linked, "out": out }), None)
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(file: Option<&Path>, f: &ModelFlags) -> Result<ModelConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => ModelConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = f.$field { cfg.$field = v; } )* };
    }
    set!(layers, heads, d, max_len, mask_ratio, use_meta, lr, epochs, batch_size, seed, text_dim);
    if let Some(m) = f.token_mode {
        cfg.token_mode = match m {
            ModeArg::Text => TokenMode::Text,
            ModeArg::Concept => TokenMode::Concept,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let c = load(&a.corpus)?;
    let cfg = resolve_config(a.config.as_deref(), &a.flags)?;
    log::info!("resolved model config: {}", serde_json::to_string(&cfg)?);
    let overrides = a
        .text_vectors
        .as_deref()
        .map(|p| load_text_vectors(p, &c, cfg.text_dim))
        .transpose()?;
    let (model, report) = pretrain(&c, &cfg, overrides.as_ref(), exec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&a.out, &model, &c.content_hash(), Some(&report))?;
    log::info!("wrote {}", a.out.display());
    let summary = json!({ "config": cfg, "report": report, "checkpoint": a.out });
    emit(&summary, a.report.as_deref())?;
    Ok(())
}

fn load_model(path: Option<&Path>, c: &Corpus) -> Result<PalModel> {
    let path = path.context("--model is required")?;
    let ck = load_checkpoint(path, Some(&c.content_hash()))?;
    Ok(ck.into_model()?)
}

fn eval(e: EvalCommand, exec: Exec) -> Result<()> {
    let (common, value): (&EvalCommon, Value) = match &e {
        EvalCommand::Rec { common, baseline } => {
            let c = load(&common.corpus)?;
            let v = match baseline {
                Some(b) => {
                    let kind = match b {
                        BaselineArg::Pop => Baseline::Pop,
                        BaselineArg::Kss => Baseline::Kss,
                    };
                    json!({ "task": "rec", "scorer": kind, "report": eval_baseline(kind, &c, exec)? })
                }
                None => {
                    let m = load_model(common.model.as_deref(), &c)?;
                    json!({ "task": "rec", "scorer": "pal", "report": eval_model(&m, &c, exec)? })
                }
            };
            (common, v)
        }
        EvalCommand::Resource {
            common,
            level,
            permute,
            control_rounds,
        } => {
            let c = load(&common.corpus)?;
            let m = load_model(common.model.as_deref(), &c)?;
            let level = match level {
                LevelArg::Course => ResourceLevel::Course,
                LevelArg::Video => ResourceLevel::Video,
            };
            let mut v = serde_json::to_value(resource_eval(&m, &c, level, common.seed, *permute, exec)?)?;
            if let Some(r) = control_rounds {
                v["permutation_macro_f1"] = json!(resource_permutation_control(&m, &c, level, common.seed, *r, exec)?);
            }
            (common, v)
        }
        EvalCommand::Kt { common, train_fraction } => {
            let c = load(&common.corpus)?;
            let m = load_model(common.model.as_deref(), &c)?;
            (common, serde_json::to_value(kt_probe(&m, &c, *train_fraction, common.seed, exec)?)?)
        }
        EvalCommand::Dropout { common } => {
            let c = load(&common.corpus)?;
            let m = load_model(common.model.as_deref(), &c)?;
            (common, serde_json::to_value(dropout_eval(&m, &c, common.seed, exec)?)?)
        }
    };
    emit(&value, common.out.as_deref())
}

fn serve(a: ServeArgs) -> Result<()> {
    let c = load(&a.corpus)?;
    let model = load_model(Some(&a.model), &c)?;
    let service = Arc::new(pal_serve::Service::new(c, model, a.events.as_deref())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = pal_serve::bind(a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        pal_serve::serve(listener, service).await?;
        Ok(())
    })
}
