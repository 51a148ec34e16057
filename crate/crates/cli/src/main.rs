mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use auxsumm_core::checkpoint::Checkpoint;
use auxsumm_core::corpus::{
    chunk_corpus, load_dataset, preprocess_all, preprocess_text, read_raw_tweets, write_dataset, Chunk,
    Stopwords, TweetTokens, REFERENCE_BUDGET,
};
use auxsumm_core::decode::{decode_source, summarize, Decoded};
use auxsumm_core::eval::evaluate_dataset;
use auxsumm_core::extract::{rank_tweets, select_until_budget, ContentTfIdfRanker, FileRanker, Ranker};
use auxsumm_core::keyphrase::{FileScorer, KeyPhraseScorer, TfIdfScorer};
use auxsumm_core::model::{AuxPgn, Example};
use auxsumm_core::train::{train, TrainOutputs, Trainer};
use auxsumm_core::vocab::{build_vocab, Vocabulary};
use auxsumm_core::Error as CoreError;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "auxsumm", version, about = "Key-phrase guided abstractive tweet summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Raw tweets to a dataset file.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// One stopword per line; defaults to the built-in English list.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Reference summaries, one per output chunk.
        #[arg(long)]
        references: Option<PathBuf>,
        /// One record per tweet instead of budget-sized chunks.
        #[arg(long)]
        per_tweet: bool,
        #[command(flatten)]
        tun: Tunables,
    },
    /// Frequency-ranked vocabulary from a dataset's sources.
    BuildVocab {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        tun: Tunables,
    },
    /// Extractive pre-selection: rank per-tweet records and keep the best within the budget.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Precomputed ranking, one 0-based record index per line.
        #[arg(long = "ranking-file", visible_alias = "ranking")]
        ranking_file: Option<PathBuf>,
        #[command(flatten)]
        tun: Tunables,
    },
    /// Train (or resume) the network, writing checkpoints and a metrics log.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// JSONL key-phrases; TF-IDF scoring over the dataset otherwise.
        #[arg(long)]
        keyphrases: Option<PathBuf>,
        /// Defaults to `<checkpoint-dir>/metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        tun: Tunables,
    },
    /// Beam-decode summaries from a checkpoint.
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Dataset file, or raw tweets with `--raw`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// JSON with log-probabilities and per-step generation probabilities.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        keyphrases: Option<PathBuf>,
        #[arg(long = "ranking-file", visible_alias = "ranking")]
        ranking_file: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[command(flatten)]
        tun: Tunables,
    },
    /// ROUGE-1/2/L per line pair; files hold one space-tokenized text per line.
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        tun: Tunables,
    },
}

// Every config key as an optional flag; values are checked by `RunConfig::set`.
#[derive(Args, Default)]
struct Tunables {
    /// Flat `key = value` file applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    w1: Option<String>,
    #[arg(long)]
    w2: Option<String>,
    #[arg(long)]
    lambda_cov: Option<String>,
    #[arg(long)]
    max_source_len: Option<String>,
    #[arg(long)]
    max_target_len: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    uniform_gamma_fallback: Option<String>,
    #[arg(long)]
    init_range: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    initial_accumulator: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    grad_clip_norm: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    coverage_start_iteration: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    beam_size: Option<String>,
    #[arg(long)]
    min_length: Option<String>,
    #[arg(long)]
    max_length: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    keyphrase_at_decode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    length_normalize: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long, visible_alias = "max-size")]
    max_vocab: Option<String>,
    #[arg(long)]
    keyphrase_top_k: Option<String>,
}

impl Tunables {
    fn overrides(&self) -> [(&'static str, &Option<String>); 27] {
        [
            ("hidden-dim", &self.hidden_dim),
            ("embed-dim", &self.embed_dim),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("lambda-cov", &self.lambda_cov),
            ("max-source-len", &self.max_source_len),
            ("max-target-len", &self.max_target_len),
            ("uniform-gamma-fallback", &self.uniform_gamma_fallback),
            ("init-range", &self.init_range),
            ("precision", &self.precision),
            ("learning-rate", &self.learning_rate),
            ("initial-accumulator", &self.initial_accumulator),
            ("batch-size", &self.batch_size),
            ("iterations", &self.iterations),
            ("grad-clip-norm", &self.grad_clip_norm),
            ("seed", &self.seed),
            ("checkpoint-every", &self.checkpoint_every),
            ("coverage-start-iteration", &self.coverage_start_iteration),
            ("threads", &self.threads),
            ("beam-size", &self.beam_size),
            ("min-length", &self.min_length),
            ("max-length", &self.max_length),
            ("keyphrase-at-decode", &self.keyphrase_at_decode),
            ("length-normalize", &self.length_normalize),
            ("budget", &self.budget),
            ("max-vocab", &self.max_vocab),
            ("keyphrase-top-k", &self.keyphrase_top_k),
        ]
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            require(path)?;
            cfg.load_file(path).map_err(Failure::Usage)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v).map_err(Failure::Usage)?;
            }
        }
        cfg.validate().map_err(Failure::Usage)?;
        Ok(cfg)
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("missing path: {}", path.display())))
    }
}

fn print_resolved(cfg: &RunConfig, paths: &[(&str, Option<&Path>)]) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# resolved config");
    let _ = write!(err, "{}", cfg.render());
    for (name, p) in paths {
        if let Some(p) = p {
            let _ = writeln!(err, "{name} = {}", p.display());
        }
    }
}

fn load_stopwords(path: Option<&Path>) -> Result<Stopwords, Failure> {
    match path {
        Some(p) => Ok(Stopwords::from_file(p)?),
        None => Ok(Stopwords::english()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Preprocess {
            input,
            output,
            stopwords,
            references,
            per_tweet,
            tun,
        } => {
            let cfg = tun.resolve()?;
            require(&input)?;
            if let Some(p) = &stopwords {
                require(p)?;
            }
            if let Some(p) = &references {
                require(p)?;
            }
            print_resolved(
                &cfg,
                &[
                    ("input", Some(&input)),
                    ("output", Some(&output)),
                    ("stopwords", stopwords.as_deref()),
                    ("references", references.as_deref()),
                ],
            );
            let sw = load_stopwords(stopwords.as_deref())?;
            let raws = read_raw_tweets(&input)?;
            let tweets: Vec<TweetTokens> = preprocess_all(&raws, &sw)
                .into_iter()
                .filter(|t| !t.tokens.is_empty())
                .collect();
            let mut chunks = if per_tweet {
                tweets
                    .into_iter()
                    .map(|t| Chunk {
                        source_tokens: t.tokens,
                        reference_tokens: None,
                        origin_ids: vec![t.id],
                    })
                    .collect()
            } else {
                chunk_corpus(&tweets, cfg.budget)?
            };
            if let Some(path) = &references {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                let refs: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
                if refs.len() != chunks.len() {
                    return Err(Failure::Runtime(format!(
                        "{}: {} references for {} records",
                        path.display(),
                        refs.len(),
                        chunks.len()
                    )));
                }
                let keep_all = Stopwords::empty();
                for (chunk, r) in chunks.iter_mut().zip(refs) {
                    let mut toks = preprocess_text(r, &keep_all);
                    toks.truncate(REFERENCE_BUDGET);
                    chunk.reference_tokens = Some(toks);
                }
            }
            write_dataset(&chunks, &output)?;
            eprintln!("wrote {} records to {}", chunks.len(), output.display());
        }

        Command::BuildVocab { dataset, output, tun } => {
            let cfg = tun.resolve()?;
            require(&dataset)?;
            print_resolved(&cfg, &[("dataset", Some(&dataset)), ("output", Some(&output))]);
            let chunks = load_dataset(&dataset)?;
            let vocab = build_vocab(&chunks, cfg.max_vocab)?;
            vocab.save(&output)?;
            eprintln!("wrote {} entries to {}", vocab.size(), output.display());
        }

        Command::Extract {
            dataset,
            output,
            ranking_file,
            tun,
        } => {
            let cfg = tun.resolve()?;
            require(&dataset)?;
            if let Some(p) = &ranking_file {
                require(p)?;
            }
            print_resolved(
                &cfg,
                &[
                    ("dataset", Some(&dataset)),
                    ("output", Some(&output)),
                    ("ranking-file", ranking_file.as_deref()),
                ],
            );
            let tweets: Vec<TweetTokens> = load_dataset(&dataset)?
                .into_iter()
                .enumerate()
                .map(|(i, c)| TweetTokens {
                    id: c.origin_ids.first().cloned().unwrap_or_else(|| i.to_string()),
                    tokens: c.source_tokens,
                })
                .collect();
            let ranker: Box<dyn Ranker> = match &ranking_file {
                Some(p) => Box::new(FileRanker::load(p)?),
                None => Box::new(ContentTfIdfRanker),
            };
            let ranked = rank_tweets(&tweets, ranker.as_ref())?;
            let selection = select_until_budget(&ranked, cfg.budget)?;
            write_dataset(std::slice::from_ref(&selection), &output)?;
            eprintln!(
                "selected {} tweets, {} tokens",
                selection.origin_ids.len(),
                selection.source_tokens.len()
            );
        }

        Command::Train {
            dataset,
            vocab,
            checkpoint_dir,
            keyphrases,
            metrics,
            resume,
            tun,
        } => {
            let mut cfg = tun.resolve()?;
            require(&dataset)?;
            require(&vocab)?;
            for p in [&keyphrases, &resume].into_iter().flatten() {
                require(p)?;
            }
            let vocab = Vocabulary::load(&vocab)?;
            let mut trainer = match &resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    // Resumed runs keep the stored settings; only the iteration target moves.
                    let target = cfg.train.max_iterations;
                    cfg.model = ckpt.meta.model.clone();
                    cfg.train = ckpt.meta.train.clone();
                    cfg.train.max_iterations = target;
                    let mut t = Trainer::from_checkpoint(ckpt)?;
                    t.set_max_iterations(cfg.train.max_iterations);
                    t
                }
                None => {
                    cfg.model.vocab_size = vocab.size();
                    let model = AuxPgn::new(cfg.model.clone(), cfg.train.seed)?;
                    Trainer::new(model, cfg.train.clone())?
                }
            };
            if trainer.model().config().vocab_size != vocab.size() {
                return Err(Failure::Usage(format!(
                    "vocabulary has {} entries but the checkpoint expects {}",
                    vocab.size(),
                    trainer.model().config().vocab_size
                )));
            }
            let metrics = metrics.unwrap_or_else(|| checkpoint_dir.join("metrics.csv"));
            print_resolved(
                &cfg,
                &[
                    ("dataset", Some(&dataset)),
                    ("checkpoint-dir", Some(&checkpoint_dir)),
                    ("keyphrases", keyphrases.as_deref()),
                    ("metrics", Some(&metrics)),
                    ("resume", resume.as_deref()),
                ],
            );

            let chunks = load_dataset(&dataset)?;
            let scorer: Option<Box<dyn KeyPhraseScorer>> = if cfg.model.w2 > 0.0 {
                Some(match &keyphrases {
                    Some(p) => Box::new(FileScorer::load(p)?),
                    None => Box::new(
                        TfIdfScorer::fit(&chunks)
                            .with_top_k((cfg.keyphrase_top_k > 0).then_some(cfg.keyphrase_top_k)),
                    ),
                })
            } else {
                None
            };
            let mut examples = Vec::with_capacity(chunks.len());
            for (i, chunk) in chunks.iter().enumerate() {
                let reference = chunk.reference_tokens.as_deref().ok_or_else(|| {
                    Failure::Runtime(format!("{}: record {} has no reference", dataset.display(), i + 1))
                })?;
                let kps = scorer.as_ref().map(|s| s.keyphrases(i, chunk));
                examples.push(Example::new(
                    &chunk.source_tokens,
                    reference,
                    &vocab,
                    kps.as_deref(),
                    trainer.model().config(),
                )?);
            }
            let outputs = TrainOutputs {
                metrics: Some(metrics),
                checkpoint_dir: Some(checkpoint_dir.clone()),
            };
            let records = train(&mut trainer, &examples, &outputs, |r| {
                if r.iteration % 100 == 0 {
                    eprintln!("iteration {} loss {:.6}", r.iteration, r.loss);
                }
            })?;
            if let Some(last) = records.last() {
                eprintln!("finished at iteration {} with loss {:.6}", last.iteration, last.loss);
            }
        }

        Command::Summarize {
            checkpoint,
            vocab,
            input,
            output,
            sidecar,
            raw,
            keyphrases,
            ranking_file,
            stopwords,
            tun,
        } => {
            let mut cfg = tun.resolve()?;
            require(&checkpoint)?;
            require(&vocab)?;
            require(&input)?;
            for p in [&keyphrases, &ranking_file, &stopwords].into_iter().flatten() {
                require(p)?;
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            cfg.model = ckpt.meta.model.clone();
            let model = AuxPgn::from_params(ckpt.meta.model.clone(), ckpt.params)?;
            let vocab = Vocabulary::load(&vocab)?;
            print_resolved(
                &cfg,
                &[
                    ("checkpoint", Some(&checkpoint)),
                    ("input", Some(&input)),
                    ("output", Some(&output)),
                    ("sidecar", sidecar.as_deref()),
                    ("keyphrases", keyphrases.as_deref()),
                    ("ranking-file", ranking_file.as_deref()),
                    ("stopwords", stopwords.as_deref()),
                ],
            );

            let file_scorer = keyphrases.as_deref().map(FileScorer::load).transpose()?;
            let decoded: Vec<Decoded> = if raw {
                let sw = load_stopwords(stopwords.as_deref())?;
                let tweets = read_raw_tweets(&input)?;
                let ranker: Box<dyn Ranker> = match &ranking_file {
                    Some(p) => Box::new(FileRanker::load(p)?),
                    None => Box::new(ContentTfIdfRanker),
                };
                // Without a key-phrase file, document frequencies come from the tweets.
                let docs: Vec<Chunk> = preprocess_all(&tweets, &sw)
                    .into_iter()
                    .map(|t| Chunk::from_source(t.tokens))
                    .collect();
                let fallback = TfIdfScorer::fit(&docs)
                    .with_top_k((cfg.keyphrase_top_k > 0).then_some(cfg.keyphrase_top_k));
                let scorer: &dyn KeyPhraseScorer = match &file_scorer {
                    Some(s) => s,
                    None => &fallback,
                };
                let s = summarize(&model, &vocab, &tweets, &sw, ranker.as_ref(), Some(scorer), cfg.budget, &cfg.decode)?;
                vec![s.decoded]
            } else {
                let chunks = load_dataset(&input)?;
                let fallback = TfIdfScorer::fit(&chunks)
                    .with_top_k((cfg.keyphrase_top_k > 0).then_some(cfg.keyphrase_top_k));
                let scorer: &dyn KeyPhraseScorer = match &file_scorer {
                    Some(s) => s,
                    None => &fallback,
                };
                let mut out = Vec::with_capacity(chunks.len());
                for (i, chunk) in chunks.iter().enumerate() {
                    let kps = cfg.decode.keyphrase_at_decode.then(|| scorer.keyphrases(i, chunk));
                    out.push(decode_source(&model, &vocab, &chunk.source_tokens, kps.as_deref(), &cfg.decode)?);
                }
                out
            };

            let text: String = decoded.iter().map(|d| d.text() + "\n").collect();
            write_file(&output, &text)?;
            if let Some(path) = &sidecar {
                let entries: Vec<_> = decoded
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        json!({
                            "index": i,
                            "log_prob": d.log_prob,
                            "finished": d.finished,
                            "p_gen": d.p_gens,
                            "tokens": d.tokens,
                        })
                    })
                    .collect();
                let body = serde_json::to_string_pretty(&entries)
                    .map_err(|e| Failure::Runtime(format!("sidecar: {e}")))?;
                write_file(path, &(body + "\n"))?;
            }
            eprintln!("wrote {} summaries to {}", decoded.len(), output.display());
        }

        Command::Evaluate {
            candidates,
            references,
            report,
            tun,
        } => {
            let cfg = tun.resolve()?;
            require(&candidates)?;
            require(&references)?;
            print_resolved(
                &cfg,
                &[
                    ("candidates", Some(&candidates)),
                    ("references", Some(&references)),
                    ("report", Some(&report)),
                ],
            );
            let read = |p: &Path| -> Result<Vec<Vec<String>>, Failure> {
                let text = fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
                Ok(text
                    .lines()
                    .map(|l| l.split_whitespace().map(String::from).collect())
                    .collect())
            };
            let cands = read(&candidates)?;
            let refs = read(&references)?;
            let rep = evaluate_dataset(&cands, &refs)?;
            write_file(&report, &rep.to_csv())?;
            let m = &rep.mean;
            println!("rouge1_f1 {:.6}", m.rouge1.f1);
            println!("rouge2_f1 {:.6}", m.rouge2.f1);
            println!("rougeL_f1 {:.6}", m.rouge_l.f1);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
