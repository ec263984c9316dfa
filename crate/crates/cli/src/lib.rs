//! The `qac` command-line tool.

pub mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use qac_core::corpus::logio::{read_aol, read_log, write_log};
use qac_core::corpus::{build_splits, synth_corpus, CategoryLexicon, LogRecord, SplitSpec, Splits};
use qac_core::matcher::{CompletionTrie, Matcher};
use qac_core::model::{SinModel, Variant};
use qac_core::train::{
    ablation_suite, evaluate, OrderingCheck, fingerprint, paired_t_test, reciprocal_rank, train, AblationConfig, Dataset,
    EvalImpression, EvalReport, Ranker, Slicing, TrainConfig, TrainError,
};
use qac_service::{http, ServiceConfig, SessionStore, Snapshot, SuggestRequest, SuggestService};
use serde::Serialize;

pub use config::CliConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) | CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Failed(_) => "assertion",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One JSON line for scripts.
    pub fn status_line(&self) -> String {
        serde_json::json!({
            "status": "error",
            "exit": self.exit_code(),
            "kind": self.kind(),
            "reason": self.to_string(),
        })
        .to_string()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qac", version, about = "Personalised query auto-completion toolkit")]
pub struct Cli {
    /// TOML config file; falls back to $QAC_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    /// `user  timestamp_ms  kind  text  [category]  [prefix]`
    Tsv,
    /// The public AOL query log layout.
    Aol,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Mpc,
    Mcg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic log with planted intention signals.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the category lexicon of the synthetic taxonomy.
        #[arg(long)]
        lexicon_out: Option<PathBuf>,
    },
    /// Validate and normalise a log, then write the four time splits.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = LogFormat::Tsv)]
        format: LogFormat,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build the completion trie snapshot from the background split.
    BuildTrie {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Completions cached per node; defaults to `dataset.trie_k`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one model variant and write its checkpoint.
    Train {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "SIN")]
        variant: Variant,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint or a baseline on the valid or test split.
    Eval {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<Baseline>,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Comma-separated subset of seen, ie, it.
        #[arg(long)]
        slices: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train every variant per seed; exit 1 if an ordering check fails.
    Ablate {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the HTTP suggest service.
    Serve {
        #[arg(long)]
        trie: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Replay test impressions through an embedded service and report
    /// latency percentiles and MRR with and without history filtering.
    Bench {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        trie: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.status_line());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = CliConfig::resolve(cli.config.as_deref())?;
    let fp = fingerprint(&config);
    tracing::info!(fingerprint = %fp, "resolved config");
    match cli.command {
        Command::Synth { seed, out, lexicon_out } => synth(&config, seed, &out, lexicon_out.as_deref()),
        Command::Ingest { input, format, out_dir } => ingest(&config, &input, format, &out_dir),
        Command::BuildTrie { splits, out, k } => build_trie(&config, &splits, &out, k),
        Command::Train {
            splits,
            variant,
            seed,
            out,
        } => train_cmd(&config, &splits, variant, seed, &out),
        Command::Eval {
            splits,
            checkpoint,
            baseline,
            split,
            slices,
            lexicon,
            out_dir,
        } => eval_cmd(
            &config,
            &fp,
            EvalArgs {
                splits: &splits,
                checkpoint: checkpoint.as_deref(),
                baseline,
                split,
                slices: slices.as_deref(),
                lexicon: lexicon.as_deref(),
                out_dir: &out_dir,
            },
        ),
        Command::Ablate {
            splits,
            seeds,
            variants,
            lexicon,
            out_dir,
        } => ablate_cmd(&config, &splits, seeds, variants.as_deref(), lexicon.as_deref(), &out_dir),
        Command::Serve {
            trie,
            checkpoint,
            lexicon,
            host,
            port,
        } => serve_cmd(&config, trie, checkpoint, lexicon, host, port),
        Command::Bench {
            splits,
            trie,
            checkpoint,
            lexicon,
            requests,
            out,
        } => bench_cmd(&config, &splits, trie, checkpoint, lexicon, requests, out.as_deref()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, body).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn synth(config: &CliConfig, seed: u64, out: &Path, lexicon_out: Option<&Path>) -> Result<(), CliError> {
    let corpus = synth_corpus(&config.synth, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let f = File::create(out).map_err(io_err(out))?;
    write_log(BufWriter::new(f), &corpus.records).map_err(io_err(out))?;
    if let Some(p) = lexicon_out {
        let lex = config.synth.taxonomy.lexicon().map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(p, lex.to_file_string()).map_err(io_err(p))?;
    }
    println!("{}", serde_json::json!({"records": corpus.records.len(), "out": out}));
    Ok(())
}

const SPLIT_FILES: [&str; 4] = ["background.tsv", "train.tsv", "valid.tsv", "test.tsv"];

fn read_records(path: &Path, format: LogFormat) -> Result<Vec<LogRecord>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let r = BufReader::new(f);
    match format {
        LogFormat::Tsv => read_log(r),
        LogFormat::Aol => read_aol(r),
    }
    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn ingest(config: &CliConfig, input: &Path, format: LogFormat, out_dir: &Path) -> Result<(), CliError> {
    let records = read_records(input, format)?;
    let spec = match &config.split.windows {
        Some(w) => w.clone(),
        None => {
            let lo = records.iter().map(|r| r.timestamp).min();
            let hi = records.iter().map(|r| r.timestamp).max();
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(CliError::Config(format!("{} holds no records", input.display())));
            };
            let mut s = SplitSpec::proportional(lo, hi + 1, config.split.fractions);
            s.min_query_frequency = config.split.min_query_frequency;
            s
        }
    };
    let splits = build_splits(records, &spec).map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(out_dir)?;
    let parts = [&splits.background, &splits.train, &splits.valid, &splits.test];
    for (name, part) in SPLIT_FILES.iter().zip(parts) {
        let path = out_dir.join(name);
        let f = File::create(&path).map_err(io_err(&path))?;
        write_log(BufWriter::new(f), part).map_err(io_err(&path))?;
    }
    write_json(&out_dir.join("split.json"), &spec)?;
    println!(
        "{}",
        serde_json::json!({
            "background": splits.background.len(),
            "train": splits.train.len(),
            "valid": splits.valid.len(),
            "test": splits.test.len(),
        })
    );
    Ok(())
}

pub fn load_splits(dir: &Path) -> Result<Splits, CliError> {
    let mut parts = Vec::with_capacity(4);
    for name in SPLIT_FILES {
        parts.push(read_records(&dir.join(name), LogFormat::Tsv)?);
    }
    let test = parts.pop().unwrap_or_default();
    let valid = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    let background = parts.pop().unwrap_or_default();
    Ok(Splits {
        background,
        train,
        valid,
        test,
    })
}

fn build_trie(config: &CliConfig, splits: &Path, out: &Path, k: Option<usize>) -> Result<(), CliError> {
    let splits = load_splits(splits)?;
    let trie = CompletionTrie::build(splits.background_counts(), k.unwrap_or(config.dataset.trie_k));
    let f = File::create(out).map_err(io_err(out))?;
    trie.write_snapshot(BufWriter::new(f)).map_err(io_err(out))?;
    println!("{}", serde_json::json!({"queries": trie.len(), "nodes": trie.num_nodes()}));
    Ok(())
}

fn load_dataset(config: &CliConfig, splits: &Path) -> Result<Dataset, CliError> {
    let splits = load_splits(splits)?;
    Ok(Dataset::build(&splits, config.dataset.clone())?)
}

fn train_cmd(config: &CliConfig, splits: &Path, variant: Variant, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(config, splits)?;
    let tc = TrainConfig {
        seed: seed.unwrap_or(config.train.seed),
        ..config.train.clone()
    };
    let mut model = SinModel::new(variant, config.model.clone(), ds.vocab.clone(), tc.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let state = match train(&mut model, &ds, &tc) {
        Ok(s) => s,
        Err(TrainError::NonFinite { step, loss, batch }) => {
            let dump = out.with_extension("nonfinite.json");
            write_json(&dump, &batch)?;
            return Err(CliError::Failed(format!(
                "non-finite loss {loss} at step {step}; batch written to {}",
                dump.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    model.save(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(&out.with_extension("state.json"), &state)?;
    println!(
        "{}",
        serde_json::json!({"steps": state.step, "best_step": state.best_step, "best_valid_mrr": state.best_mrr})
    );
    Ok(())
}

fn load_lexicon(path: Option<&Path>) -> Result<Option<CategoryLexicon>, CliError> {
    let Some(p) = path else { return Ok(None) };
    let f = File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    CategoryLexicon::parse(BufReader::new(f))
        .map(Some)
        .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

struct EvalArgs<'a> {
    splits: &'a Path,
    checkpoint: Option<&'a Path>,
    baseline: Option<Baseline>,
    split: SplitName,
    slices: Option<&'a str>,
    lexicon: Option<&'a Path>,
    out_dir: &'a Path,
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<(), CliError> {
    let tsv = dir.join(format!("{stem}.tsv"));
    fs::write(&tsv, report.to_tsv()).map_err(io_err(&tsv))?;
    write_json(&dir.join(format!("{stem}.json")), report)
}

fn eval_cmd(config: &CliConfig, fp: &str, a: EvalArgs) -> Result<(), CliError> {
    let lexicon = load_lexicon(a.lexicon.or(config.lexicon.as_deref()))?;
    let wanted: Vec<String> = match a.slices {
        Some(s) => s.split(',').map(|x| x.trim().to_lowercase()).filter(|x| !x.is_empty()).collect(),
        None if lexicon.is_some() => vec!["seen".into(), "ie".into(), "it".into()],
        None => vec!["seen".into()],
    };
    if let Some(bad) = wanted.iter().find(|s| !["seen", "ie", "it"].contains(&s.as_str())) {
        return Err(CliError::Config(format!("unknown slice `{bad}`")));
    }
    let semantic = wanted.iter().any(|s| s == "ie" || s == "it");
    if semantic && lexicon.is_none() {
        return Err(CliError::Config("IE/IT slices need a lexicon".into()));
    }
    let slicing = Slicing {
        seen: wanted.iter().any(|s| s == "seen"),
        lexicon: if semantic { lexicon.as_ref() } else { None },
    };
    let ds = load_dataset(config, a.splits)?;
    let (name, imps): (&str, &[EvalImpression]) = match a.split {
        SplitName::Valid => ("valid", &ds.valid),
        SplitName::Test => ("test", &ds.test),
    };
    let m = config.train.eval_candidates;
    create_dir(a.out_dir)?;
    let mpc = evaluate(Ranker::Mpc, imps, &ds.matcher, m, slicing, fp)?;
    let report = match (a.checkpoint, a.baseline) {
        (Some(ck), _) => {
            let model = SinModel::load(ck, None).map_err(|e| CliError::Config(format!("{}: {e}", ck.display())))?;
            let r = evaluate(Ranker::Model(&model), imps, &ds.matcher, m, slicing, fp)?;
            if let Some(t) = paired_t_test(&r.reciprocal_ranks, &mpc.reciprocal_ranks) {
                write_json(&a.out_dir.join(format!("ttest-vs-mpc-{name}.json")), &t)?;
            }
            r
        }
        (None, Some(Baseline::Mpc)) => mpc,
        (None, Some(Baseline::Mcg)) => evaluate(Ranker::Mcg, imps, &ds.matcher, m, slicing, fp)?,
        (None, None) => return Err(CliError::Config("need --checkpoint or --baseline".into())),
    };
    let stem = format!("{}-{name}", report.ranker.replace('+', "_"));
    write_report(a.out_dir, &stem, &report)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn ablate_cmd(
    config: &CliConfig,
    splits: &Path,
    seeds: Option<u64>,
    variants: Option<&str>,
    lexicon: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let lexicon = load_lexicon(lexicon.or(config.lexicon.as_deref()))?
        .ok_or_else(|| CliError::Config("ablation ordering checks need a lexicon".into()))?;
    let variants = match variants {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse::<Variant>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?,
        None => config.ablate.variants.clone(),
    };
    let n = seeds.unwrap_or(config.ablate.seeds);
    let ac = AblationConfig {
        variants,
        seeds: (0..n).collect(),
        model: config.model.clone(),
        train: config.train.clone(),
    };
    let ds = load_dataset(config, splits)?;
    let table = ablation_suite(&ds, &ac, Some(&lexicon))?;
    create_dir(out_dir)?;
    let tsv = out_dir.join("ablation.tsv");
    fs::write(&tsv, table.to_tsv()).map_err(io_err(&tsv))?;
    write_json(&out_dir.join("ablation.json"), &table)?;
    print!("{}", table.to_tsv());
    match ordering_failure(&table.checks) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// The first failed ordering check as an exit-1 error.
pub fn ordering_failure(checks: &[OrderingCheck]) -> Option<CliError> {
    checks.iter().find(|c| !c.passed).map(|c| {
        CliError::Failed(format!(
            "ordering {} > {} on {} failed: {:.4} vs {:.4}",
            c.better, c.worse, c.slice, c.better_mean, c.worse_mean
        ))
    })
}

/// Loads the trie/model pair named by flags or the `serve` section.
pub fn load_snapshot(
    serve: &ServiceConfig,
    trie: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    lexicon: Option<CategoryLexicon>,
) -> Result<Snapshot, CliError> {
    let trie = trie
        .or_else(|| serve.trie.clone())
        .ok_or_else(|| CliError::Config("no trie snapshot given".into()))?;
    let ck = checkpoint
        .or_else(|| serve.checkpoint.clone())
        .ok_or_else(|| CliError::Config("no checkpoint given".into()))?;
    let f = File::open(&trie).map_err(|e| CliError::Config(format!("{}: {e}", trie.display())))?;
    let t = CompletionTrie::read_snapshot(BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", trie.display())))?;
    let model = SinModel::load(&ck, None).map_err(|e| CliError::Config(format!("{}: {e}", ck.display())))?;
    Ok(Snapshot {
        matcher: Matcher::new(t),
        model,
        lexicon,
    })
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn serve_cmd(
    config: &CliConfig,
    trie: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    host: Option<String>,
    port: Option<u16>,
) -> Result<(), CliError> {
    let mut sc = config.serve.clone();
    if let Some(h) = host {
        sc.host = h;
    }
    if let Some(p) = port {
        sc.port = p;
    }
    let lex = load_lexicon(lexicon.as_deref().or(sc.lexicon.as_deref()).or(config.lexicon.as_deref()))?;
    let snapshot = load_snapshot(&sc, trie, checkpoint, lex)?;
    let sessions = match &sc.sessions {
        Some(p) if p.exists() => SessionStore::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        _ => SessionStore::new(snapshot.model.config.views.clone()),
    };
    runtime()?.block_on(async move {
        let addr = format!("{}:{}", sc.host, sc.port);
        let session_file = sc.sessions.clone();
        let svc = Arc::new(SuggestService::new(sc, sessions));
        svc.install(snapshot).map_err(|e| CliError::Config(e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
        tracing::info!(%addr, "serving");
        axum::serve(listener, http::router(svc.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(p) = session_file {
            svc.sessions.save(&p).map_err(io_err(&p))?;
        }
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRun {
    pub filter_history: bool,
    pub requests: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub mrr: f64,
    pub batches: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub variant: String,
    pub k: usize,
    pub candidates: usize,
    pub concurrency: usize,
    pub runs: Vec<BenchRun>,
    pub within_budget: bool,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Replays `impressions` through a fresh embedded service per filtering mode.
pub async fn bench(
    serve: &ServiceConfig,
    snapshot: Arc<Snapshot>,
    impressions: &[EvalImpression],
    k: usize,
    concurrency: usize,
) -> Result<Vec<BenchRun>, CliError> {
    let mut runs = Vec::new();
    for filter in [true, false] {
        let sc = ServiceConfig {
            filter_history: filter,
            ..serve.clone()
        };
        let svc = Arc::new(SuggestService::new(sc, SessionStore::new(snapshot.model.config.views.clone())));
        svc.install(Snapshot {
            matcher: snapshot.matcher.clone(),
            model: snapshot.model.clone(),
            lexicon: snapshot.lexicon.clone(),
        })
        .map_err(|e| CliError::Config(e.to_string()))?;
        let imps: Arc<Vec<EvalImpression>> = Arc::new(impressions.to_vec());
        let workers = concurrency.max(1);
        let mut handles = Vec::new();
        for w in 0..workers {
            let svc = svc.clone();
            let imps = imps.clone();
            handles.push(tokio::spawn(async move {
                let mut out = Vec::new();
                for (i, imp) in imps.iter().enumerate().skip(w).step_by(workers) {
                    let uid = format!("{}#{i}", imp.user_id);
                    svc.sessions.set(&uid, imp.history.clone());
                    let req = SuggestRequest {
                        user_id: uid,
                        prefix: imp.prefix.clone(),
                        k: Some(k),
                        debug: false,
                    };
                    let t = Instant::now();
                    let resp = svc.suggest(&req).await;
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    let list: Vec<String> = match resp {
                        Ok(r) => r.suggestions.into_iter().map(|s| s.query).collect(),
                        Err(e) => return Err(CliError::Runtime(e.to_string())),
                    };
                    out.push((ms, reciprocal_rank(&list, &imp.clicked)));
                }
                Ok(out)
            }));
        }
        let mut lat = Vec::new();
        let mut rr = 0.0;
        for h in handles {
            for (ms, r) in h.await.map_err(|e| CliError::Runtime(e.to_string()))?? {
                lat.push(ms);
                rr += r;
            }
        }
        lat.sort_by(f64::total_cmp);
        let n = lat.len().max(1) as f64;
        runs.push(BenchRun {
            filter_history: filter,
            requests: lat.len(),
            p50_ms: percentile(&lat, 50.0),
            p99_ms: percentile(&lat, 99.0),
            mean_ms: lat.iter().sum::<f64>() / n,
            mrr: rr / n,
            batches: svc.batch_stats().batches.load(std::sync::atomic::Ordering::Relaxed),
        });
    }
    Ok(runs)
}

fn bench_cmd(
    config: &CliConfig,
    splits: &Path,
    trie: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    requests: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let sc = config.serve.clone();
    let lex = load_lexicon(lexicon.as_deref().or(sc.lexicon.as_deref()).or(config.lexicon.as_deref()))?;
    let snapshot = Arc::new(load_snapshot(&sc, trie, checkpoint, lex)?);
    let ds = load_dataset(config, splits)?;
    if ds.test.is_empty() {
        return Err(CliError::Config("test split holds no impressions".into()));
    }
    let n = requests.unwrap_or(config.bench.requests);
    let imps: Vec<EvalImpression> = ds.test.iter().cycle().take(n).cloned().collect();
    let b = &config.bench;
    let runs = runtime()?.block_on(bench(&sc, snapshot.clone(), &imps, b.k, b.concurrency))?;
    let report = BenchReport {
        variant: snapshot.model.variant.name().into(),
        k: b.k,
        candidates: sc.candidates,
        concurrency: b.concurrency,
        within_budget: runs
            .iter()
            .all(|r| r.p50_ms < b.p50_budget_ms && r.p99_ms < b.p99_budget_ms),
        runs,
    };
    let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = out {
        fs::write(p, &body).map_err(io_err(p))?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{body}").map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Failed("x".into()).exit_code(), 1);
        let line = CliError::Config("bad key".into()).status_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["exit"], 2);
        assert_eq!(v["kind"], "config");
    }

    #[test]
    fn failed_ordering_exits_1() {
        let check = |passed| OrderingCheck {
            slice: "it".into(),
            better: "SIN_b+H+SE".into(),
            worse: "SIN_b+H".into(),
            better_mean: 0.5,
            worse_mean: 0.6,
            passed,
        };
        let mut checks = vec![check(true)];
        assert!(ordering_failure(&checks).is_none());
        checks.push(check(false));
        let e = ordering_failure(&checks).unwrap();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("on it failed"));
    }
}
