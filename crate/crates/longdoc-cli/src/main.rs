//! Command-line driver: scaling benchmarks, kernel verification suites,
//! synthetic corpus generation, training, tagging, and span scoring.
//!
//! Exit codes: 0 on success, 1 when a verification suite fails, 2 for
//! invalid arguments or unreadable inputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use longdoc::bench::{fit_complexity_slope, run_scaling_bench, to_csv, write_csv, BenchConfig};
use longdoc::bias::BiasPattern;
use longdoc::data::{
    chunk_fixed, chunk_split_page, generate_corpus, read_corpus, read_predictions,
    tokenize_document, write_corpus, write_predictions, Chunk, GenConfig, TokenizedDocument,
    Vocab, FIELD_CLASSES,
};
use longdoc::model::{AttentionKind, Model, ModelConfig};
use longdoc::train::{
    evaluate_f1, finetune_tagging, mlm_pretrain, predict_spans, write_metrics, TrainConfig,
};
use longdoc::verify::{run_equivalence_suite, run_gradient_suite, KernelOverrides};

#[derive(Parser)]
#[command(
    name = "longdoc",
    version,
    about = "Attention-scaling benchmarks and a layout-aware tagging pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure runtime/memory scaling of the attention mechanisms.
    Bench {
        /// Comma-separated subset of: full, linformer, cosformer.
        #[arg(long, value_delimiter = ',', default_value = "full,linformer,cosformer")]
        mechanisms: Vec<String>,
        /// Ascending sequence lengths.
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        lengths: Vec<usize>,
        /// Head dimension of the synthetic Q/K/V.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Low-rank projection size for linformer runs.
        #[arg(long, default_value_t = 128)]
        k: usize,
        /// Timed repetitions per point (first warmup run is discarded).
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Bias pattern: none, cosine1d, squircle, or cross.
        #[arg(long, default_value = "none")]
        bias: BiasPattern,
        /// Working-memory budget; configurations above it are skipped.
        #[arg(long, default_value_t = 512)]
        budget_mb: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the kernel equivalence and gradient suites.
    Verify,
    /// Generate a synthetic labeled corpus (JSONL, one document per line).
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Fractions of short,medium,long documents; must sum to 1.
        #[arg(long, value_delimiter = ',', default_value = "0.55,0.40,0.05")]
        length_mix: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model as described by a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tag a corpus with a trained model and write predicted spans.
    Tag {
        /// Checkpoint path; its vocabulary sidecar (<model>.vocab) must
        /// sit next to it.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Chunking strategy: split-page or fixed.
        #[arg(long, default_value = "split-page")]
        chunking: String,
    },
    /// Score predicted spans against a gold corpus.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Bench {
            mechanisms,
            lengths,
            dim,
            k,
            reps,
            bias,
            budget_mb,
            seed,
            out,
        } => {
            let kinds = mechanisms
                .iter()
                .map(|name| parse_mechanism(name, k))
                .collect::<Result<Vec<_>>>()?;
            let cfg = BenchConfig {
                lengths,
                d: dim,
                k,
                reps,
                bias,
                seed,
                budget_bytes: budget_mb * 1024 * 1024,
            };
            let records = run_scaling_bench(&kinds, &cfg)?;
            match &out {
                Some(path) => {
                    write_csv(path, &records)?;
                    eprintln!("wrote {} records to {}", records.len(), path.display());
                }
                None => print!("{}", to_csv(&records)),
            }
            for kind in kinds {
                let own: Vec<_> = records
                    .iter()
                    .filter(|r| r.mechanism == kind.to_string())
                    .cloned()
                    .collect();
                match fit_complexity_slope(&own) {
                    Ok(slope) => eprintln!("{kind}: log-log slope {slope:.3}"),
                    Err(_) => eprintln!("{kind}: too few measured lengths for a slope fit"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let overrides = KernelOverrides::default();
            let equivalence = run_equivalence_suite(&overrides);
            let gradients = run_gradient_suite(&overrides);
            println!("equivalence suite\n{equivalence}");
            println!("gradient suite\n{gradients}");
            if equivalence.passed() && gradients.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Gen {
            seed,
            count,
            length_mix,
            out,
        } => {
            if length_mix.len() != 3 {
                bail!("--length-mix needs exactly three fractions");
            }
            let docs = generate_corpus(&GenConfig {
                seed,
                count,
                length_mix: (length_mix[0], length_mix[1], length_mix[2]),
            })?;
            write_corpus(&out, &docs)?;
            eprintln!("wrote {} documents to {}", docs.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let spec: TrainSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            train(&spec)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Tag {
            model,
            input,
            out,
            chunking,
        } => {
            let model_obj = Model::load(&model)?;
            let vocab = read_vocab(&vocab_sidecar(&model))?;
            if vocab.len() != model_obj.config().vocab_size {
                bail!(
                    "vocabulary sidecar has {} entries but the checkpoint expects {}",
                    vocab.len(),
                    model_obj.config().vocab_size
                );
            }
            let chunker = parse_chunker(&chunking)?;
            let docs = read_corpus(&input)?;
            let n_max = model_obj.config().n_max;
            let mut preds = Vec::with_capacity(docs.len());
            for doc in &docs {
                let stream = tokenize_document(doc, &vocab)?;
                let chunks = chunker(&stream, n_max)?;
                preds.push(predict_spans(&model_obj, &stream, &chunks)?);
            }
            write_predictions(&out, &preds)?;
            eprintln!("tagged {} documents into {}", preds.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { pred, gold } => {
            let preds = read_predictions(&pred)?;
            let gold_docs = read_corpus(&gold)?;
            let report = evaluate_f1(&preds, &gold_docs)?;
            print!("{report}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_mechanism(name: &str, k: usize) -> Result<AttentionKind> {
    match name {
        "full" => Ok(AttentionKind::Full),
        "linformer" => Ok(AttentionKind::Linformer { k }),
        "cosformer" => Ok(AttentionKind::Cosformer),
        other => Err(anyhow!(
            "unknown mechanism '{other}' (expected full, linformer, or cosformer)"
        )),
    }
}

type Chunker = fn(&longdoc::data::TokenStream, usize) -> Result<Vec<Chunk>, longdoc::data::DataError>;

fn parse_chunker(name: &str) -> Result<Chunker> {
    match name {
        "fixed" => Ok(chunk_fixed),
        "split-page" => Ok(chunk_split_page),
        other => Err(anyhow!(
            "unknown chunking '{other}' (expected fixed or split-page)"
        )),
    }
}

fn vocab_sidecar(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_os_string();
    s.push(".vocab");
    PathBuf::from(s)
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut vocab: Vocab =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    vocab.rebuild_index();
    Ok(vocab)
}

fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let text = serde_json::to_string(vocab)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Architecture knobs for a fresh model; the vocabulary size comes from
/// the corpus, so it is not part of this section.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSpec {
    d_model: usize,
    heads: usize,
    layers: usize,
    n_max: usize,
    attention: AttentionKind,
    bias: BiasPattern,
    /// Cap on the learned vocabulary (specials and characters always fit).
    vocab_cap: usize,
    /// Words seen fewer times than this fall back to character pieces.
    min_count: usize,
    seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_model: 64,
            heads: 4,
            layers: 2,
            n_max: 512,
            attention: AttentionKind::Full,
            bias: BiasPattern::None,
            vocab_cap: 8000,
            min_count: 1,
            seed: 0,
        }
    }
}

/// On-disk description of one training run.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSpec {
    /// JSONL corpus of labeled documents.
    corpus: String,
    /// "mlm" or "tagging".
    objective: String,
    /// "fixed" or "split-page".
    #[serde(default = "default_chunking")]
    chunking: String,
    /// Warm-start checkpoint; when present the model section is ignored
    /// and the checkpoint's vocabulary sidecar is reused.
    #[serde(default)]
    init: Option<String>,
    #[serde(default)]
    model: ModelSpec,
    #[serde(default)]
    train: TrainConfig,
    model_out: String,
    #[serde(default)]
    metrics_out: Option<String>,
}

fn default_chunking() -> String {
    "split-page".to_string()
}

fn build_chunks(
    docs: &[TokenizedDocument],
    vocab: &Vocab,
    chunker: Chunker,
    n_max: usize,
) -> Result<Vec<Chunk>> {
    let mut chunks = Vec::new();
    for doc in docs {
        let stream = tokenize_document(doc, vocab)?;
        chunks.extend(chunker(&stream, n_max)?);
    }
    Ok(chunks)
}

fn train(spec: &TrainSpec) -> Result<()> {
    let docs = read_corpus(&spec.corpus)?;
    let chunker = parse_chunker(&spec.chunking)?;

    let (mut model, vocab) = match &spec.init {
        Some(init) => {
            let model = Model::load(init)?;
            let vocab = read_vocab(&vocab_sidecar(Path::new(init)))?;
            if vocab.len() != model.config().vocab_size {
                bail!(
                    "vocabulary sidecar has {} entries but the checkpoint expects {}",
                    vocab.len(),
                    model.config().vocab_size
                );
            }
            (model, vocab)
        }
        None => {
            let vocab = Vocab::build(
                docs.iter()
                    .flat_map(|d| d.pages.iter())
                    .flat_map(|p| p.words.iter())
                    .map(|w| w.text.as_str()),
                spec.model.min_count,
                spec.model.vocab_cap,
            );
            let classes = FIELD_CLASSES.iter().map(|c| c.to_string()).collect();
            let mut cfg = ModelConfig::desk(vocab.len(), classes);
            cfg.d_model = spec.model.d_model;
            cfg.heads = spec.model.heads;
            cfg.layers = spec.model.layers;
            cfg.n_max = spec.model.n_max;
            cfg.attention = spec.model.attention;
            cfg.bias = spec.model.bias;
            (Model::new(cfg, spec.model.seed)?, vocab)
        }
    };

    let chunks = build_chunks(&docs, &vocab, chunker, model.config().n_max)?;
    eprintln!(
        "training on {} chunks from {} documents ({} steps)",
        chunks.len(),
        docs.len(),
        spec.train.total_steps
    );
    let metrics = match spec.objective.as_str() {
        "mlm" => mlm_pretrain(&mut model, &chunks, &spec.train)?,
        "tagging" => finetune_tagging(&mut model, &chunks, &spec.train)?,
        other => bail!("unknown objective '{other}' (expected mlm or tagging)"),
    };

    model.save(&spec.model_out)?;
    write_vocab(&vocab_sidecar(Path::new(&spec.model_out)), &vocab)?;
    if let Some(path) = &spec.metrics_out {
        write_metrics(path, &metrics)?;
    }
    if let Some(last) = metrics.last() {
        eprintln!(
            "finished at step {} (lr {:.3e}, loss {:.4}); model written to {}",
            last.step, last.lr, last.loss, spec.model_out
        );
    }
    Ok(())
}
