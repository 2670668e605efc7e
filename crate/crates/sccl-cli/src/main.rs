//! Batch command-line pipeline: lexicon expansion, training, evaluation,
//! prediction, gradient checking, and the ablation table.
//!
//! Exit codes: 0 success, 1 usage or invalid configuration, 2 data error
//! (missing or malformed files), 3 failed verification (gradient check or
//! divergent training).

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sccl_core::ablation::{parse_variant_list, run_ablation, PAPER_VARIANTS};
use sccl_core::corpus::{load_corpus, preprocess, preprocess_corpus, Corpus, LabeledDoc, StopwordSet};
use sccl_core::exec::ExecMode;
use sccl_core::lexicon::{
    auto_seeds, build_stats, expand_lexicon, rank_seed_candidates, Lexicon, SeedSet,
};
use sccl_core::metrics::percent;
use sccl_core::model::{
    encode_doc, evaluate, full_model_gradcheck, predict_encoded, train, ModelBundle, ModelConfig,
    TrainOptions,
};
use sccl_core::ScclError;

#[derive(Parser)]
#[command(name = "sccl", version, about = "Dual-route six-class sentiment classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a base sentiment lexicon into a domain lexicon via seed words
    /// and co-occurrence statistics, and write a candidate report.
    LexiconBuild(LexiconBuildArgs),
    /// Train a model and write the checkpoint plus a training history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Classify raw token lines from a file or stdin.
    Predict(PredictArgs),
    /// Run the end-to-end finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate architecture variants into a comparison table.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct LexiconBuildArgs {
    /// Labeled corpus file (`<label>\t<tokens>` per line).
    #[arg(long)]
    corpus: PathBuf,
    /// Base lexicon file (`<word>\t<+1|-1>\t<score>\t<base|expanded>`).
    #[arg(long)]
    base: PathBuf,
    /// Curated seed file (`<word>\t<pos|neg>` per line).
    #[arg(long, conflicts_with = "auto_seeds")]
    seeds: Option<PathBuf>,
    /// Derive seeds automatically: top-k TF-IDF words carrying base polarity.
    #[arg(long, value_name = "K")]
    auto_seeds: Option<usize>,
    /// Positive words to admit.
    #[arg(long, default_value_t = 60)]
    n_pos: usize,
    /// Negative words to admit.
    #[arg(long, default_value_t = 60)]
    n_neg: usize,
    /// Minimum total occurrences for co-occurrence participation.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Stopword file, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Output path for the expanded lexicon.
    #[arg(long)]
    out: PathBuf,
    /// Candidate report path (default: `<out>.candidates.tsv`).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Candidates listed in the report.
    #[arg(long, default_value_t = 100)]
    report_k: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Domain lexicon for the sentiment route.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Model configuration JSON; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed, overriding the config value.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Output directory (checkpoint `model.bin` + `history.tsv`).
    #[arg(long)]
    out: PathBuf,
    /// Hold out this fraction for per-epoch validation metrics.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Stratify the validation split by class.
    #[arg(long, default_value_t = false)]
    stratified: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Metrics TSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print micro-F1 and the confusion matrix to stderr.
    #[arg(long, default_value_t = false)]
    verbose: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input file of space-separated token lines (stdin when omitted).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Output destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed of the generic parameter point (0 is the verified reference).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Domain lexicon (base rows feed the "Normal Lexicon" variant).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Separate target corpus for the `SCCL-test` variant.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Comma-separated variant labels; defaults to the seven-row table.
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: u8,
    msg: String,
}

impl From<ScclError> for CliError {
    fn from(e: ScclError) -> Self {
        let code = match &e {
            ScclError::Config(_) => 1,
            ScclError::NonFiniteLoss { .. } => 3,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    ScclError::io(path, e).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::LexiconBuild(a) => lexicon_build(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn load_stopwords(path: &Option<PathBuf>) -> Result<StopwordSet, CliError> {
    Ok(match path {
        Some(p) => StopwordSet::load(p)?,
        None => StopwordSet::empty(),
    })
}

fn load_prepared_corpus(path: &Path, stopwords: &StopwordSet) -> Result<Corpus, CliError> {
    let corpus = load_corpus(path)?;
    Ok(preprocess_corpus(&corpus, stopwords, ExecMode::Parallel))
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<ModelConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn lexicon_build(a: LexiconBuildArgs) -> Result<(), CliError> {
    let stopwords = load_stopwords(&a.stopwords)?;
    let corpus = load_prepared_corpus(&a.corpus, &stopwords)?;
    let base = Lexicon::load(&a.base)?;
    let stats = build_stats(&corpus, a.min_count)?;

    let report = rank_seed_candidates(&stats, &base, a.report_k);
    let report_path = a
        .report
        .unwrap_or_else(|| a.out.with_file_name(format!(
            "{}.candidates.tsv",
            a.out.file_name().unwrap_or_default().to_string_lossy()
        )));
    fs::write(&report_path, report.to_tsv()).map_err(|e| io_err(&report_path, e))?;
    if report.truncated() {
        eprintln!(
            "note: vocabulary has only {} words, report shorter than requested {}",
            report.vocab_size, a.report_k
        );
    }

    let seeds = match (&a.seeds, a.auto_seeds) {
        (Some(path), None) => SeedSet::load(path)?,
        (None, Some(k)) => auto_seeds(&stats, &base, k)?,
        (None, None) => {
            return Err(CliError { code: 1, msg: "provide --seeds <file> or --auto-seeds <k>".into() })
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let (expanded, exp) = expand_lexicon(&base, &seeds, &stats, a.n_pos, a.n_neg)?;
    expanded.save(&a.out)?;
    eprintln!(
        "lexicon: {} base + {} expanded ({} pos, {} neg) -> {}",
        base.len(),
        exp.added_pos + exp.added_neg,
        exp.added_pos,
        exp.added_neg,
        a.out.display()
    );
    if exp.shortfall() > 0 {
        eprintln!(
            "note: candidate pool exhausted, {} fewer entries than requested",
            exp.shortfall()
        );
    }
    if exp.skipped_seeds > 0 {
        eprintln!("note: {} seed words absent from the corpus were skipped", exp.skipped_seeds);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let stopwords = load_stopwords(&a.stopwords)?;
    let corpus = load_prepared_corpus(&a.corpus, &stopwords)?;
    let cfg = load_config(&a.config, a.seed)?;
    let lexicon = a.lexicon.as_deref().map(Lexicon::load).transpose()?;

    let (train_set, val_set) = match a.val_fraction {
        Some(f) => {
            let (tr, te) = if a.stratified {
                sccl_core::corpus::split_train_test_stratified(&corpus, f, cfg.seed)?
            } else {
                sccl_core::corpus::split_train_test(&corpus, f, cfg.seed)?
            };
            (tr, Some(te))
        }
        None => (corpus, None),
    };

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let opts = TrainOptions { validation: val_set.as_ref(), checkpoint_dir: Some(&a.out) };
    let trained = train(&train_set, lexicon.as_ref(), &cfg, &opts)?;

    let mut history = String::from("epoch\ttrain_loss\tval_acc\tval_f1\n");
    for h in &trained.history {
        let (acc, f1) = match &h.val {
            Some(m) => (percent(m.accuracy), percent(m.macro_f1)),
            None => (String::new(), String::new()),
        };
        history.push_str(&format!("{}\t{}\t{}\t{}\n", h.epoch, h.mean_loss, acc, f1));
    }
    let history_path = a.out.join("history.tsv");
    fs::write(&history_path, history).map_err(|e| io_err(&history_path, e))?;

    let ckpt = a.out.join("model.bin");
    let bundle = ModelBundle {
        config: cfg,
        params: trained.params,
        vocab_char: trained.vocab_char,
        vocab_word: trained.vocab_word,
        lexicon,
    };
    bundle.save(&ckpt)?;
    eprintln!("checkpoint -> {}", ckpt.display());
    if let Some(last) = trained.history.last() {
        eprintln!("final epoch {}: train loss {:.4}", last.epoch, last.mean_loss);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let stopwords = load_stopwords(&a.stopwords)?;
    let corpus = load_prepared_corpus(&a.corpus, &stopwords)?;
    let m = evaluate(
        &bundle.params,
        &corpus,
        bundle.lexicon.as_ref(),
        &bundle.vocab_char,
        &bundle.vocab_word,
        &bundle.config,
    )?;
    let label = a
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let tsv = format!("variant\tacc\tf1\n{label}\t{}\t{}\n", percent(m.accuracy), percent(m.macro_f1));
    write_or_print(&a.out, &tsv)?;
    if a.verbose {
        eprintln!("micro_f1\t{}", percent(m.micro_f1));
        if !m.zero_support.is_empty() {
            eprintln!("zero-support classes: {:?}", m.zero_support);
        }
        eprintln!("confusion (rows = labels, cols = predictions):");
        for row in &m.confusion {
            eprintln!("  {row:?}");
        }
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let stopwords = load_stopwords(&a.stopwords)?;
    let lines: Vec<String> = match &a.input {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            text.lines().map(str::to_string).collect()
        }
        None => std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| CliError { code: 2, msg: format!("stdin: {e}") })?,
    };

    let mut out = String::new();
    for line in &lines {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let doc = preprocess(&LabeledDoc::new(tokens, 0), &stopwords);
        let enc = encode_doc(&doc, bundle.lexicon.as_ref(), &bundle.vocab_char, &bundle.vocab_word);
        let (class, probs) = predict_encoded(&bundle.params, &enc, &bundle.config)?;
        let dist: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
        out.push_str(&format!("{class}\t{}\n", dist.join(" ")));
    }
    match &a.out {
        Some(p) => fs::write(p, out).map_err(|e| io_err(p, e))?,
        None => {
            let stdout = std::io::stdout();
            let mut h = stdout.lock();
            h.write_all(out.as_bytes())
                .map_err(|e| CliError { code: 2, msg: format!("stdout: {e}") })?;
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let report = full_model_gradcheck(a.seed)?;
    println!(
        "gradient check: {} parameter entries, max relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    if let Some((param, elem, analytic, numeric)) = report.worst {
        println!("worst entry: parameter {param} element {elem}: analytic {analytic:.6e}, numeric {numeric:.6e}");
    }
    if report.max_rel_err > a.tolerance {
        return Err(CliError {
            code: 3,
            msg: format!("max relative error {:.3e} exceeds {:.1e}", report.max_rel_err, a.tolerance),
        });
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let stopwords = load_stopwords(&a.stopwords)?;
    let corpus = load_prepared_corpus(&a.corpus, &stopwords)?;
    let target = a
        .target
        .as_deref()
        .map(|p| load_prepared_corpus(p, &stopwords))
        .transpose()?;
    let cfg = load_config(&a.config, a.seed)?;
    let lexicon = a.lexicon.as_deref().map(Lexicon::load).transpose()?;
    let variants = match &a.variants {
        Some(csv) => parse_variant_list(csv)?,
        None => PAPER_VARIANTS.to_vec(),
    };
    let table = run_ablation(
        &corpus,
        lexicon.as_ref(),
        target.as_ref(),
        &cfg,
        &variants,
        a.test_fraction,
    )?;
    write_or_print(&a.out, &table.to_tsv())
}
