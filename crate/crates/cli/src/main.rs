use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cmover::clustering::{aggregate_sppmi, column_normalize, kmeans, ContextClustering, EmbeddingTable};
use cmover::cmd::Metric;
use cmover::config::RunConfig;
use cmover::corpus::{accumulate_cooccurrences, build_vocabulary_from_lines, SparseCoocMatrix, Vocabulary};
use cmover::estimates::HistogramStore;
use cmover::eval::{self, Report};
use cmover::pipeline::{files, Model};
use cmover::ppmi::{compute_sppmi, SppmiMatrix};

#[derive(Parser, Debug)]
#[command(name = "cmover", version, about = "Context histograms and optimal-transport distances between words and sentences")]
struct Cli {
    /// Worker threads for every parallel stage (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding stage artifacts.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Task preset (sts, wordsim, hypernymy).
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    metric: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count tokens and write the vocabulary.
    Vocab,
    /// Accumulate windowed co-occurrences.
    Cooc,
    /// Shifted, smoothed PPMI from the co-occurrences.
    Sppmi,
    /// Cluster context vectors into representative contexts.
    Cluster {
        /// One cluster per vocabulary word instead of k-means.
        #[arg(long)]
        identity: bool,
    },
    /// Aggregate SPPMI per cluster and write the histogram store.
    Histograms,
    /// Distance between two words, or two sentences when either contains spaces.
    Dist { first: String, second: String },
    /// Barycenter of a sentence, printed as `atom<TAB>weight` lines.
    Comb { sentence: String },
    /// Closest vocabulary words to a word or sentence.
    Neighbors {
        query: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Sentence similarity: a TSV file or a directory of per-year subdirectories.
    EvalSts { path: PathBuf },
    /// Hypernymy detection datasets.
    EvalHyp { paths: Vec<PathBuf> },
    /// Word similarity datasets.
    EvalWs { paths: Vec<PathBuf> },
    /// Built-in oracle checks.
    Selftest,
}

/// Raised for flag misuse; maps to exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(path) = &cli.config {
        // Validates the file on its own first, so its errors name the file.
        RunConfig::load(path)?;
        let text = fs::read_to_string(path).map_err(|e| cmover::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some((k, v)) = line.split_once('=') {
                pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    let o = &cli.overrides;
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| -> Result<()> {
        match flags.iter().find(|(seen, _)| seen == k) {
            Some((_, prev)) if *prev != v => Err(usage(format!("conflicting values for {k}: {prev:?} and {v:?}"))),
            Some(_) => Ok(()),
            None => {
                flags.push((k.to_string(), v));
                Ok(())
            }
        }
    };
    if let Some(v) = &o.task {
        push("task", v.clone())?;
    }
    if let Some(v) = &o.corpus {
        push("corpus", v.display().to_string())?;
    }
    if let Some(v) = &o.embeddings {
        push("embeddings", v.display().to_string())?;
    }
    if let Some(v) = o.seed {
        push("seed", v.to_string())?;
    }
    if let Some(v) = &o.metric {
        push("metric", v.clone())?;
    }
    if let Some(v) = o.lambda {
        push("lambda", format!("{v:?}"))?;
    }
    if let Some(v) = o.iters {
        push("iters", v.to_string())?;
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        push(k.trim(), v.trim().to_string())?;
    }
    for (k, v) in flags {
        match pairs.iter_mut().find(|(seen, _)| *seen == k) {
            Some(slot) => slot.1 = v,
            None => pairs.push((k, v)),
        }
    }
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    Ok(RunConfig::parse(&text)?)
}

fn need(work: &Path, file: &str, stage: &str) -> Result<PathBuf> {
    let path = work.join(file);
    if !path.is_file() {
        return Err(cmover::Error::Io {
            path: path.clone(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing {file}; run `cmover {stage}` first"),
            ),
        }
        .into());
    }
    Ok(path)
}

fn corpus_lines(cfg: &RunConfig) -> Result<Vec<String>> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| usage("no corpus given (use --corpus or the corpus key)"))?;
    let text = fs::read_to_string(path).map_err(|e| cmover::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Vectors that back the word atoms of the ground space.
fn point_path(cfg: &RunConfig) -> Result<&Path> {
    let p = if cfg.metric == Metric::Entailment {
        cfg.entailment.as_ref().or(cfg.embeddings.as_ref())
    } else {
        cfg.embeddings.as_ref()
    };
    p.map(PathBuf::as_path)
        .ok_or_else(|| usage("no embeddings given (use --embeddings or the embeddings key)"))
}

fn context_path(cfg: &RunConfig) -> Result<&Path> {
    match &cfg.context_embeddings {
        Some(p) => Ok(p),
        None => point_path(cfg),
    }
}

fn echo_config(work: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(work).with_context(|| format!("creating {}", work.display()))?;
    let path = work.join(files::CONFIG);
    fs::write(&path, cfg.render()).map_err(|e| cmover::Error::Io { path, source: e })?;
    Ok(())
}

fn load_vocab(work: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::load_tsv(&need(work, files::VOCAB, "vocab")?)?)
}

fn load_model(work: &Path, cfg: &RunConfig) -> Result<Model> {
    let vocab = load_vocab(work)?;
    let store = HistogramStore::load(&need(work, files::HISTOGRAMS, "histograms")?)?;
    let clustering = ContextClustering::load(&need(work, files::CLUSTERS, "cluster")?, cfg.metric)?;
    let points = EmbeddingTable::load_aligned(point_path(cfg)?, &vocab)?;
    Ok(Model::new(vocab, &store, clustering.centroids(), points.vectors().clone(), cfg)?)
}

fn fmt_value(x: f64, cfg: &RunConfig) -> String {
    format!("{x:.*}", cfg.precision)
}

fn write_report(work: &Path, name: &str, report: &Report) -> Result<String> {
    fs::create_dir_all(work).with_context(|| format!("creating {}", work.display()))?;
    for (file, body) in [
        (format!("{name}_report.tsv"), report.to_tsv()),
        (format!("{name}_summary.txt"), report.summary()),
    ] {
        let path = work.join(file);
        fs::write(&path, body).map_err(|e| cmover::Error::Io { path, source: e })?;
    }
    Ok(report.to_tsv())
}

fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    if let Command::Selftest = cli.command {
        let checks = cmover::selftest::run();
        let mut out = String::new();
        for c in &checks {
            writeln!(out, "{}\t{}\t{}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        if checks.iter().any(|c| !c.passed) {
            print!("{out}");
            bail!(cmover::Error::NumericalOverflow("self-test failed".into()));
        }
        return Ok(out);
    }
    let cfg = resolve_config(cli)?;
    let work = cli.work.as_path();
    let mut out = String::new();
    match &cli.command {
        Command::Vocab => {
            let lines = corpus_lines(&cfg)?;
            let vocab = build_vocabulary_from_lines(lines.iter(), cfg.min_count)?;
            echo_config(work, &cfg)?;
            vocab.save_tsv(&work.join(files::VOCAB))?;
            writeln!(out, "{} words", vocab.len())?;
        }
        Command::Cooc => {
            let vocab = load_vocab(work)?;
            let lines = corpus_lines(&cfg)?;
            let cooc = accumulate_cooccurrences(&lines, &vocab, cfg.window, cfg.weighting)?;
            echo_config(work, &cfg)?;
            cooc.save(&work.join(files::COOC))?;
            writeln!(out, "{} entries", cooc.nnz())?;
        }
        Command::Sppmi => {
            let cooc = SparseCoocMatrix::load(&need(work, files::COOC, "cooc")?)?;
            let sppmi = compute_sppmi(&cooc, cfg.alpha, cfg.shift)?;
            echo_config(work, &cfg)?;
            sppmi.save(&work.join(files::SPPMI))?;
            writeln!(out, "{} entries", sppmi.nnz())?;
        }
        Command::Cluster { identity } => {
            let vocab = load_vocab(work)?;
            let emb = EmbeddingTable::load_aligned(context_path(&cfg)?, &vocab)?;
            let clustering = if *identity {
                ContextClustering::identity(&emb, cfg.metric)
            } else {
                kmeans(&emb, cfg.k.min(emb.len()), cfg.seed, cfg.kmeans_iters, cfg.metric)?
            };
            echo_config(work, &cfg)?;
            clustering.save(&work.join(files::CLUSTERS))?;
            writeln!(out, "{} clusters", clustering.k())?;
        }
        Command::Histograms => {
            let sppmi = SppmiMatrix::load(&need(work, files::SPPMI, "sppmi")?)?;
            let clustering = ContextClustering::load(&need(work, files::CLUSTERS, "cluster")?, cfg.metric)?;
            let clustered = column_normalize(&aggregate_sppmi(&sppmi, &clustering)?, cfg.beta)?;
            let store = HistogramStore::build(&clustered)?;
            echo_config(work, &cfg)?;
            clustered.save(&work.join(files::CLUSTERED))?;
            store.save(&work.join(files::HISTOGRAMS))?;
            writeln!(out, "{} histograms over {} clusters", store.len(), store.k())?;
        }
        Command::Dist { first, second } => {
            let model = load_model(work, &cfg)?;
            let sentence = |s: &str| s.split_whitespace().count() > 1;
            let d = if sentence(first) || sentence(second) {
                model.sentence_distance(first, second)?
            } else {
                model.word_distance(first.trim(), second.trim())?
            };
            writeln!(out, "{}", fmt_value(d, &cfg))?;
        }
        Command::Comb { sentence } => {
            let model = load_model(work, &cfg)?;
            let s = model.sentence(sentence)?;
            for (atom, w) in s.estimate().iter() {
                writeln!(out, "{atom}\t{}", fmt_value(w, &cfg))?;
            }
        }
        Command::Neighbors { query, top } => {
            let model = load_model(work, &cfg)?;
            for (word, d) in model.neighbors(query, *top)? {
                writeln!(out, "{word}\t{}", fmt_value(d, &cfg))?;
            }
        }
        Command::EvalSts { path } => {
            let datasets = eval::load_sts_dir(path)?;
            let model = load_model(work, &cfg)?;
            let report = eval::run_sts(&datasets, |a, b| model.sentence_distance(a, b));
            out = write_report(work, "sts", &report)?;
            out.push_str(&report.summary());
        }
        Command::EvalHyp { paths } => {
            if paths.is_empty() {
                return Err(usage("eval-hyp needs at least one dataset"));
            }
            let datasets = paths.iter().map(|p| eval::load_hypernymy(p)).collect::<cmover::Result<Vec<_>>>()?;
            let model = load_model(work, &cfg)?;
            let report = eval::run_hypernymy(&datasets, |a, b| model.word_distance(a, b).map(|d| -d));
            out = write_report(work, "hypernymy", &report)?;
            out.push_str(&report.summary());
        }
        Command::EvalWs { paths } => {
            if paths.is_empty() {
                return Err(usage("eval-ws needs at least one dataset"));
            }
            let datasets = paths.iter().map(|p| eval::load_wordsim(p)).collect::<cmover::Result<Vec<_>>>()?;
            let model = load_model(work, &cfg)?;
            let report = eval::run_wordsim(&datasets, |a, b| model.word_distance(a, b));
            out = write_report(work, "wordsim", &report)?;
            out.push_str(&report.summary());
        }
        Command::Selftest => unreachable!("handled above"),
    }
    Ok(out)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<cmover::Error>() {
        Some(e) => match e {
            cmover::Error::Config(_) | cmover::Error::BadParameter(_) | cmover::Error::Oov(_) | cmover::Error::EmptySentence => 1,
            cmover::Error::ZeroMassWord(_)
            | cmover::Error::DegenerateInput(_)
            | cmover::Error::NumericalOverflow(_)
            | cmover::Error::DegenerateCost(_)
            | cmover::Error::DegenerateMetric(_) => 3,
            _ => 2,
        },
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            match err.downcast_ref::<cmover::Error>() {
                Some(e) => eprintln!("error [{}]: {err:#}", e.kind()),
                None => eprintln!("error: {err:#}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
