//! Pipeline commands and the `subqe` command-line front end.
//!
//! Each `cmd_*` function is deterministic given its inputs and the config
//! seed; the binary only parses flags and maps errors to exit codes.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;

use crate::bow::bow_score;
use crate::config::PipelineConfig;
use crate::embeddings::{load_embeddings, similarity_matrix, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, length_buckets, miss_rate, render_fnr_table, render_length_table, render_metrics_table, MetricsReport,
};
use crate::features::{extract_features, FeatureContext};
use crate::forest::{accuracy as forest_accuracy, train_rfc, RandomForestModel};
use crate::labeler::{
    build_dataset, label_scored, read_labeled_tsv, write_discards_tsv, write_labeled_tsv, DistributionReport,
    LabeledPair, ScoredPair, SourcePools,
};
use crate::nn::train::format_log;
use crate::nn::{predict_examples, Checkpoint, Embedder, Example, QeModel, Trainer};
use crate::subtitle::{
    align_by_timestamp, parse_srt, read_good_pairs, read_pairs_tsv, tokenize, write_pairs_tsv, BilingualPair,
    Provenance, SubtitleFile,
};
use crate::synth::{
    add_captions, build_rfc_corpus, drift_align, random_align, scramble_target, split_train_test, CaptionLexicon,
    NgramStats, SourceWeights,
};
use crate::toy::{ToyConfig, ToyCorpus};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for every other failure.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl CliError {
    fn config(error: Error) -> Self {
        CliError {
            code: EXIT_CONFIG,
            error,
        }
    }

    /// `error[<kind>]: <message>` on one line.
    pub fn line(&self) -> String {
        let msg = self.error.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.error.kind())
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError {
            code: EXIT_FAILURE,
            error,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "subqe", version, about = "Weakly supervised subtitle translation quality estimation")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the language pair, e.g. en-de.
    #[arg(long, global = true)]
    pub lang_pair: Option<String>,
    /// Overrides the model architecture.
    #[arg(long, global = true, value_parser = ["hybrid", "lstm", "cnn"])]
    pub arch: Option<String>,
    /// Overrides the model head.
    #[arg(long, global = true, value_parser = ["classification", "scoring"])]
    pub head: Option<String>,
    /// Overrides any config key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aligns same-named SRT files of two directories into a pair TSV.
    Align {
        #[arg(long)]
        src_dir: Option<PathBuf>,
        #[arg(long)]
        tgt_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates Loose and Bad samples per the configured source weights.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores aligned pairs, fuses labels and mixes in the other sources.
    Label {
        /// Aligned pair TSV.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Synthetic pair TSV from `synth`.
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Random forest model from `train-rfc`.
        #[arg(long)]
        rfc: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the random forest on a corrupted parallel corpus.
    TrainRfc {
        /// Parallel pair TSV; defaults to `path.parallel`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the neural QE model on a labeled dataset.
    TrainQe {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report only the miss rate of positive samples.
        #[arg(long)]
        positives_only: bool,
    },
    /// Labels pairs with a trained checkpoint.
    Score(ScoreArgs),
    /// Writes a deterministic synthetic workspace and its config.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ToyConfig::default().documents)]
        documents: usize,
    },
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pair TSV to score.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires = "target")]
    pub source: Option<String>,
    #[arg(long, requires = "source")]
    pub target: Option<String>,
    /// Output TSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append the last dense layer's input vector to each row.
    #[arg(long)]
    pub dump_activations: bool,
}

/// Loads the config, applies flag overrides and validates it.
pub fn resolve_config(cli: &Cli) -> std::result::Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::config)?,
        None => PipelineConfig::default(),
    };
    let apply = |cfg: &mut PipelineConfig, k: &str, v: &str| cfg.set(k, v).map_err(CliError::config);
    if let Some(lp) = &cli.lang_pair {
        apply(&mut cfg, "lang_pair", lp)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(a) = &cli.arch {
        apply(&mut cfg, "model.architecture", a)?;
    }
    if let Some(h) = &cli.head {
        apply(&mut cfg, "model.head", h)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::config(Error::Config(format!("--set expects key=value, got {kv:?}"))))?;
        apply(&mut cfg, k.trim(), v.trim())?;
    }
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.code
        }
    }
}

/// Runs one parsed invocation and returns a short summary.
pub fn run(cli: &Cli) -> std::result::Result<String, CliError> {
    if let Command::Toy { out, documents } = &cli.command {
        let toy = ToyConfig {
            documents: *documents,
            seed: cli.seed.unwrap_or(ToyConfig::default().seed),
            ..Default::default()
        };
        let path = cmd_toy(&toy, out)?;
        return Ok(format!("wrote toy workspace; config {}", path.display()));
    }
    let cfg = resolve_config(cli)?;
    let summary = match &cli.command {
        Command::Align { src_dir, tgt_dir, out } => {
            let src = dir_or_config(src_dir, &cfg, "src_subtitles")?;
            let tgt = dir_or_config(tgt_dir, &cfg, "tgt_subtitles")?;
            let s = cmd_align(&cfg, &src, &tgt, out)?;
            format!("aligned {} pairs from {} files", s.pairs, s.files)
        }
        Command::Synth { out } => {
            let counts = cmd_synth(&cfg, out)?;
            let parts: Vec<String> = counts.iter().map(|(p, n)| format!("{p}={n}")).collect();
            format!("synthesized {}", parts.join(" "))
        }
        Command::Label { pairs, synth, rfc, out } => {
            let report = cmd_label(&cfg, pairs.as_deref(), synth.as_deref(), rfc.as_deref(), out)?;
            report.render(&cfg.target_lang)
        }
        Command::TrainRfc { corpus, out } => {
            let corpus = dir_or_config(corpus, &cfg, "parallel")?;
            let s = cmd_train_rfc(&cfg, &corpus, out)?;
            format!(
                "forest trained on {} samples: train accuracy {:.4}, test accuracy {:.4}",
                s.train_samples, s.train_accuracy, s.test_accuracy
            )
        }
        Command::TrainQe { dataset, out } => {
            let s = cmd_train_qe(&cfg, dataset, out)?;
            format!("trained {} epochs, final loss {:.6}", s.epochs, s.final_loss)
        }
        Command::Eval {
            checkpoint,
            dataset,
            out,
            positives_only,
        } => {
            let e = cmd_eval(&cfg, checkpoint, dataset, out, *positives_only)?;
            match (e.metrics, e.miss_rate) {
                (Some(m), _) => format!("accuracy {:.4} on {} samples", m.accuracy, e.samples),
                (None, Some(r)) => format!("miss rate {r:.4} on {} positives", e.samples),
                _ => String::new(),
            }
        }
        Command::Score(args) => {
            let input = match (&args.pairs, &args.source, &args.target) {
                (Some(p), _, _) => ScoreInput::File(p.clone()),
                (None, Some(s), Some(t)) => ScoreInput::Pair(s.clone(), t.clone()),
                _ => {
                    return Err(CliError::config(Error::Config(
                        "score needs --pairs or --source with --target".into(),
                    )))
                }
            };
            let rows = cmd_score(&cfg, &args.checkpoint, &input, args.dump_activations)?;
            let text = score_tsv(&rows);
            match &args.out {
                Some(p) => {
                    fs::write(p, text).map_err(Error::from)?;
                    format!("scored {} pairs", rows.len())
                }
                None => text.trim_end().to_string(),
            }
        }
        Command::Toy { .. } => unreachable!(),
    };
    Ok(summary)
}

fn dir_or_config(flag: &Option<PathBuf>, cfg: &PipelineConfig, key: &str) -> std::result::Result<PathBuf, CliError> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => cfg.require(key).map_err(CliError::config),
    }
}

/// `<path><suffix>`, e.g. `out.tsv` + `.log` -> `out.tsv.log`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_tables(cfg: &PipelineConfig) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let dim = cfg.model.embed_dim;
    let (src, _) = load_embeddings(open(&cfg.require("src_embeddings")?)?, dim, &cfg.source_lang)?;
    let (tgt, _) = load_embeddings(open(&cfg.require("tgt_embeddings")?)?, dim, &cfg.target_lang)?;
    Ok((src, tgt))
}

fn srt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("srt")))
        .collect();
    files.sort();
    Ok(files)
}

/// Aligned documents: the target file and its aligned pairs.
pub fn align_dirs(
    cfg: &PipelineConfig,
    src_dir: &Path,
    tgt_dir: &Path,
) -> Result<Vec<(SubtitleFile, Vec<BilingualPair>)>> {
    let mut out = Vec::new();
    for src_path in srt_files(src_dir)? {
        let tgt_path = tgt_dir.join(src_path.file_name().expect("listed files have names"));
        if !tgt_path.exists() {
            log::warn!("no target subtitle for {}", src_path.display());
            continue;
        }
        let src = parse_srt(&fs::read_to_string(&src_path)?)?.with_language(&cfg.source_lang);
        let tgt = parse_srt(&fs::read_to_string(&tgt_path)?)?.with_language(&cfg.target_lang);
        let (pairs, _) = align_by_timestamp(&src, &tgt, cfg.min_overlap)?;
        out.push((tgt, pairs));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignSummary {
    pub files: usize,
    pub pairs: usize,
}

pub fn cmd_align(cfg: &PipelineConfig, src_dir: &Path, tgt_dir: &Path, out: &Path) -> Result<AlignSummary> {
    let docs = align_dirs(cfg, src_dir, tgt_dir)?;
    let pairs: Vec<BilingualPair> = docs.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    let mut w = create(out)?;
    write_pairs_tsv(&mut w, &pairs)?;
    w.flush()?;
    Ok(AlignSummary {
        files: docs.len(),
        pairs: pairs.len(),
    })
}

fn load_good_pairs(cfg: &PipelineConfig) -> Result<Vec<BilingualPair>> {
    read_good_pairs(open(&cfg.require("good_pairs")?)?, &cfg.source_lang, &cfg.target_lang)
}

fn load_lexicon(cfg: &PipelineConfig) -> Result<CaptionLexicon> {
    match &cfg.paths.captions {
        Some(p) => CaptionLexicon::read(open(&cfg.resolve(p))?),
        None => Ok(CaptionLexicon::default()),
    }
}

/// Repeats `step` until `n` items are collected or attempts run out.
fn draw<F>(n: usize, mut step: F) -> Result<Vec<BilingualPair>>
where
    F: FnMut() -> Result<Vec<BilingualPair>>,
{
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 10 * n + 100 {
        attempts += 1;
        match step() {
            Ok(batch) => out.extend(batch.into_iter().take(n - out.len())),
            Err(Error::TooShort { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if out.len() < n {
        log::warn!("generated {} of {n} requested samples", out.len());
    }
    Ok(out)
}

/// Generates the four synthetic sources in proportion to their weights and
/// writes them as one pair TSV. Returns the count per generator.
pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> Result<Vec<(Provenance, usize)>> {
    let mut rng = cfg.rng("synth");
    let fractions = cfg.weights.fractions()?;
    let share = |p: Provenance| {
        let i = SourceWeights::SOURCES.iter().position(|&s| s == p).expect("synthetic source");
        fractions[i]
    };
    let needs_good = share(Provenance::AddedCaptions) + share(Provenance::ScrambledText) > 0.0;
    let needs_subs = share(Provenance::DriftedAligned) + share(Provenance::RandomlyAligned) > 0.0;
    let good = if needs_good { load_good_pairs(cfg)? } else { Vec::new() };
    let docs = if needs_subs {
        align_dirs(cfg, &cfg.require("src_subtitles")?, &cfg.require("tgt_subtitles")?)?
    } else {
        Vec::new()
    };
    let aligned: Vec<BilingualPair> = docs.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    let base = cfg.dataset_size.unwrap_or(good.len() + aligned.len());
    let quota = |p: Provenance| (share(p) * base as f64).round() as usize;
    let lexicon = load_lexicon(cfg)?;

    let mut all = Vec::new();
    let mut counts = Vec::new();
    for p in [
        Provenance::AddedCaptions,
        Provenance::ScrambledText,
        Provenance::DriftedAligned,
        Provenance::RandomlyAligned,
    ] {
        let n = quota(p);
        let pool = if matches!(p, Provenance::AddedCaptions | Provenance::ScrambledText) {
            &good
        } else {
            &aligned
        };
        let made = if n == 0 || pool.is_empty() {
            if n > 0 {
                log::warn!("no input pairs for {p}");
            }
            Vec::new()
        } else {
            match p {
                Provenance::AddedCaptions => {
                    draw(n, || Ok(vec![add_captions(pool.choose(&mut rng).unwrap(), &lexicon, &mut rng)?]))?
                }
                Provenance::ScrambledText => {
                    draw(n, || Ok(vec![scramble_target(pool.choose(&mut rng).unwrap(), &mut rng)?]))?
                }
                Provenance::RandomlyAligned => draw(n, || {
                    let mut r = random_align(pool, &mut rng)?;
                    r.shuffle(&mut rng);
                    Ok(r)
                })?,
                _ => draw(n, || {
                    let (tgt, pairs) = docs.choose(&mut rng).unwrap();
                    let (mut d, _) = drift_align(tgt, pairs, cfg.drift_window, &mut rng)?;
                    d.shuffle(&mut rng);
                    Ok(d)
                })?,
            }
        };
        counts.push((p, made.len()));
        all.extend(made);
    }
    let mut w = create(out)?;
    write_pairs_tsv(&mut w, &all)?;
    w.flush()?;
    Ok(counts)
}

fn ngram_stats(parallel: &[BilingualPair]) -> (NgramStats, NgramStats) {
    let src: Vec<_> = parallel.iter().map(BilingualPair::source_tokens).collect();
    let tgt: Vec<_> = parallel.iter().map(BilingualPair::target_tokens).collect();
    (NgramStats::build(&src), NgramStats::build(&tgt))
}

fn read_pairs_file(path: &Path) -> Result<Vec<BilingualPair>> {
    read_pairs_tsv(open(path)?)
}

/// Bag-of-words score, 0 when either side has no known token.
pub fn pair_bow_score(pair: &BilingualPair, src: &EmbeddingTable, tgt: &EmbeddingTable, cfg: &PipelineConfig) -> f64 {
    similarity_matrix(&pair.source_tokens(), &pair.target_tokens(), src, tgt)
        .and_then(|s| bow_score(&s, &cfg.bow))
        .unwrap_or(0.0)
}

/// Builds the labeled dataset and writes it with a discard sidecar
/// (`.discards.tsv`) and the distribution report (`.report.txt`).
pub fn cmd_label(
    cfg: &PipelineConfig,
    pairs: Option<&Path>,
    synth: Option<&Path>,
    rfc: Option<&Path>,
    out: &Path,
) -> Result<DistributionReport> {
    let mut pools = SourcePools::new();
    let mut discards = Vec::new();
    if cfg.weights.statistical > 0.0 {
        let pairs = pairs.ok_or_else(|| Error::Config("statistical source needs --pairs".into()))?;
        let rfc = rfc.ok_or_else(|| Error::Config("statistical source needs --rfc".into()))?;
        let model = RandomForestModel::read_json(open(rfc)?)?;
        let (src, tgt) = load_tables(cfg)?;
        let (src_stats, tgt_stats) = ngram_stats(&read_pairs_file(&cfg.require("parallel")?)?);
        let ctx = FeatureContext {
            src_table: &src,
            tgt_table: &tgt,
            src_stats: &src_stats,
            tgt_stats: &tgt_stats,
        };
        let scored: Vec<ScoredPair> = read_pairs_file(pairs)?
            .into_iter()
            .map(|pair| {
                let s_bow = pair_bow_score(&pair, &src, &tgt, cfg);
                let s_rfc = model.score(extract_features(&pair, &ctx).values());
                ScoredPair { pair, s_bow, s_rfc }
            })
            .collect();
        let (labeled, dropped) = label_scored(scored, &cfg.fusion)?;
        pools.extend(labeled);
        discards = dropped;
    }
    if cfg.weights.good_pairs > 0.0 {
        for p in load_good_pairs(cfg)? {
            pools.add(LabeledPair::from_provenance(p)?);
        }
    }
    if let Some(path) = synth {
        for p in read_pairs_file(path)? {
            if cfg.weights.weight(p.provenance) > 0.0 {
                pools.add(LabeledPair::from_provenance(p)?);
            }
        }
    }
    let (dataset, report) = build_dataset(&pools, &cfg.weights, cfg.dataset_size, &mut cfg.rng("label"))?;
    let mut w = create(out)?;
    write_labeled_tsv(&mut w, &dataset)?;
    w.flush()?;
    let mut w = create(&sidecar(out, ".discards.tsv"))?;
    write_discards_tsv(&mut w, &discards)?;
    w.flush()?;
    fs::write(sidecar(out, ".report.txt"), report.render(&cfg.target_lang))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfcSummary {
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Corrupts the parallel corpus, trains the forest on a seeded split and
/// writes the model as JSON.
pub fn cmd_train_rfc(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<RfcSummary> {
    let parallel = read_pairs_file(corpus)?;
    let (src, tgt) = load_tables(cfg)?;
    let (src_stats, tgt_stats) = ngram_stats(&parallel);
    let ctx = FeatureContext {
        src_table: &src,
        tgt_table: &tgt,
        src_stats: &src_stats,
        tgt_stats: &tgt_stats,
    };
    let mut rng = cfg.rng("train_rfc");
    let rfc_corpus = build_rfc_corpus(&parallel, &mut rng)?;
    let data: Vec<(crate::features::FeatureVector, bool)> = rfc_corpus
        .samples
        .iter()
        .map(|s| (extract_features(&s.pair, &ctx), s.positive))
        .collect();
    let (train, test) = split_train_test(&data, cfg.forest_train_fraction, &mut rng);
    let model = train_rfc(&train, &cfg.forest, crate::synth::derive_seed(cfg.seed, "forest"))?;
    let acc = |set: &[(crate::features::FeatureVector, bool)]| {
        let x: Vec<Vec<f64>> = set.iter().map(|(f, _)| f.values().to_vec()).collect();
        let y: Vec<bool> = set.iter().map(|(_, l)| *l).collect();
        forest_accuracy(&model, &x, &y)
    };
    let summary = RfcSummary {
        train_samples: train.len(),
        test_samples: test.len(),
        train_accuracy: acc(&train),
        test_accuracy: if test.is_empty() { 0.0 } else { acc(&test) },
    };
    let mut w = create(out)?;
    model.write_json(&mut w)?;
    w.flush()?;
    Ok(summary)
}

fn read_dataset(cfg: &PipelineConfig, path: &Path) -> Result<Vec<Example>> {
    let pairs = read_labeled_tsv(open(path)?, &cfg.source_lang, &cfg.target_lang)?;
    if pairs.is_empty() {
        return Err(Error::Empty);
    }
    Ok(pairs.iter().map(Example::from_labeled).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub learning_rates: Vec<f64>,
}

/// Trains the configured model; the checkpoint goes to `out`, the
/// per-epoch log (with wall-clock times) to `<out>.log`.
pub fn cmd_train_qe(cfg: &PipelineConfig, dataset: &Path, out: &Path) -> Result<TrainSummary> {
    let data = read_dataset(cfg, dataset)?;
    let (src, tgt) = load_tables(cfg)?;
    let embedder = Embedder::new(&src, &tgt)?;
    let model = QeModel::new(cfg.model.clone(), &mut cfg.rng("model_init"))?;
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    trainer.fit(&data, &embedder)?;
    let mut w = create(out)?;
    Checkpoint::from_trainer(&trainer).write_to(&mut w)?;
    w.flush()?;
    fs::write(sidecar(out, ".log"), format_log(&trainer.log))?;
    Ok(TrainSummary {
        epochs: trainer.log.len(),
        final_loss: trainer.log.last().map_or(f64::NAN, |e| e.loss),
        learning_rates: trainer.log.iter().map(|e| e.lr).collect(),
    })
}

fn load_model(cfg: &PipelineConfig, checkpoint: &Path) -> Result<QeModel> {
    let model = Checkpoint::load(checkpoint)?.model;
    if model.config.embed_dim != cfg.model.embed_dim {
        return Err(Error::DimMismatch {
            expected: cfg.model.embed_dim,
            found: model.config.embed_dim,
        });
    }
    Ok(model)
}

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub samples: usize,
    pub metrics: Option<MetricsReport>,
    pub miss_rate: Option<f64>,
}

/// Writes the evaluation report. With `positives_only` the report holds the
/// miss rate (positives predicted Bad) and nothing else.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
    positives_only: bool,
) -> Result<EvalOutcome> {
    let model = load_model(cfg, checkpoint)?;
    let data = read_dataset(cfg, dataset)?;
    let (src, tgt) = load_tables(cfg)?;
    let embedder = Embedder::new(&src, &tgt)?;
    let pred: Vec<_> = predict_examples(&model, &data, &embedder, EVAL_BATCH)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    let truth: Vec<_> = data.iter().map(|e| e.label).collect();
    let name = model.config.architecture.as_str().to_string();
    if positives_only {
        let rate = miss_rate(&pred, &truth)?;
        let positives = truth.iter().filter(|l| l.is_positive()).count();
        let text = format!(
            "{}positives\t{positives}\nmiss_rate\t{rate}\n",
            render_fnr_table(&[(name, rate)])
        );
        fs::write(out, text)?;
        return Ok(EvalOutcome {
            samples: positives,
            metrics: None,
            miss_rate: Some(rate),
        });
    }
    let lens: Vec<usize> = data.iter().map(|e| e.tgt.len()).collect();
    let (cm, report) = evaluate(&pred, &truth, &lens)?;
    let buckets = length_buckets(&lens, &pred, &truth)?;
    let text = format!(
        "{}\n{}\n{}",
        render_metrics_table(&[(name, report.clone())]),
        cm.render(),
        render_length_table(&buckets)
    );
    fs::write(out, text)?;
    Ok(EvalOutcome {
        samples: data.len(),
        metrics: Some(report),
        miss_rate: None,
    })
}

#[derive(Debug, Clone)]
pub enum ScoreInput {
    Pair(String, String),
    /// Pair TSV, or labeled TSV whose labels are ignored.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub source_text: String,
    pub target_text: String,
    pub prediction: crate::nn::Prediction,
    pub activations: Option<Vec<f64>>,
}

fn read_score_input(cfg: &PipelineConfig, input: &ScoreInput) -> Result<Vec<(String, String)>> {
    match input {
        ScoreInput::Pair(s, t) => Ok(vec![(s.clone(), t.clone())]),
        ScoreInput::File(path) => {
            let mut first = String::new();
            open(path)?.read_line(&mut first)?;
            let rows: Vec<(String, String)> = if first.trim_end().split('\t').nth(2) == Some("label") {
                read_labeled_tsv(open(path)?, &cfg.source_lang, &cfg.target_lang)?
                    .into_iter()
                    .map(|p| (p.pair.source_text, p.pair.target_text))
                    .collect()
            } else {
                read_pairs_file(path)?
                    .into_iter()
                    .map(|p| (p.source_text, p.target_text))
                    .collect()
            };
            Ok(rows)
        }
    }
}

pub fn cmd_score(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    input: &ScoreInput,
    dump_activations: bool,
) -> Result<Vec<ScoreRow>> {
    let model = load_model(cfg, checkpoint)?;
    let (src, tgt) = load_tables(cfg)?;
    let embedder = Embedder::new(&src, &tgt)?;
    let texts = read_score_input(cfg, input)?;
    let mut rows = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EVAL_BATCH) {
        let toks: Vec<_> = chunk.iter().map(|(s, t)| (tokenize(s), tokenize(t))).collect();
        let batch = embedder.batch(toks.iter().map(|(s, t)| (s, t)));
        let preds = model.predict_batch(&batch)?;
        let acts = if dump_activations {
            model.penultimate_activations(&batch)?.into_iter().map(Some).collect()
        } else {
            vec![None; chunk.len()]
        };
        for (((s, t), prediction), activations) in chunk.iter().zip(preds).zip(acts) {
            rows.push(ScoreRow {
                source_text: s.clone(),
                target_text: t.clone(),
                prediction,
                activations,
            });
        }
    }
    Ok(rows)
}

/// `source_text, target_text, label`, then `p_bad p_loose p_good` or
/// `score`, then `act_0..` when activations were dumped.
pub fn score_tsv(rows: &[ScoreRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut header = vec!["source_text".to_string(), "target_text".into(), "label".into()];
    if first.prediction.probabilities.is_some() {
        header.extend(["p_bad", "p_loose", "p_good"].map(String::from));
    } else {
        header.push("score".into());
    }
    if let Some(a) = &first.activations {
        header.extend((0..a.len()).map(|i| format!("act_{i}")));
    }
    let mut out = header.join("\t") + "\n";
    for r in rows {
        let mut cols = vec![
            crate::subtitle::sanitize_field(&r.source_text),
            crate::subtitle::sanitize_field(&r.target_text),
            r.prediction.label.to_string(),
        ];
        match (r.prediction.probabilities, r.prediction.score) {
            (Some(p), _) => cols.extend(p.map(|x| x.to_string())),
            (None, Some(s)) => cols.push(s.to_string()),
            _ => {}
        }
        if let Some(a) = &r.activations {
            cols.extend(a.iter().map(f64::to_string));
        }
        out += &(cols.join("\t") + "\n");
    }
    out
}

/// Desk-scale pipeline config for a toy workspace.
pub fn toy_pipeline_config(toy: &ToyConfig, dir: &Path) -> PipelineConfig {
    let (sl, tl) = (&toy.source_lang, &toy.target_lang);
    let mut cfg = PipelineConfig::for_pair(sl, tl);
    cfg.seed = toy.seed;
    cfg.data_dir = Some(dir.to_path_buf());
    cfg.paths.src_embeddings = Some(format!("embeddings.{sl}.vec").into());
    cfg.paths.tgt_embeddings = Some(format!("embeddings.{tl}.vec").into());
    cfg.paths.src_subtitles = Some(format!("subtitles/{sl}").into());
    cfg.paths.tgt_subtitles = Some(format!("subtitles/{tl}").into());
    cfg.paths.good_pairs = Some("good_pairs.tsv".into());
    cfg.paths.captions = Some("captions.txt".into());
    cfg.paths.parallel = Some("parallel.tsv".into());
    cfg.model.embed_dim = toy.embed_dim;
    cfg.train.batch_size = 64;
    cfg.train.max_epochs = 15;
    cfg.forest.n_trees = 50;
    cfg
}

/// Writes the toy workspace plus `subqe.conf`; returns the config path.
pub fn cmd_toy(toy: &ToyConfig, dir: &Path) -> Result<PathBuf> {
    let corpus = ToyCorpus::generate(toy)?;
    corpus.write_workspace(dir)?;
    let dir = fs::canonicalize(dir)?;
    let path = dir.join("subqe.conf");
    fs::write(&path, toy_pipeline_config(toy, &dir).emit())?;
    Ok(path)
}
