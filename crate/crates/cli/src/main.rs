use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gecrefine::analysis::confusion_set;
use gecrefine::corpus::{load_aligned_sentences, load_sentences, preprocess, write_sentences, PreprocessOptions};
use gecrefine::corrector::{train_corrector, RuleExtraction};
use gecrefine::experiment::{run_experiment, write_outputs, ExperimentConfig};
use gecrefine::external::{ExternalClassifier, ExternalScorer};
use gecrefine::filters::{
    ce_filter, lm_filter, sed_filter, train_sed_classifier, CeOptions, FilterMethod, SedClassifier, SedTraining,
    SentenceClassifier,
};
use gecrefine::lm::{LmConfig, NgramLm};
use gecrefine::metrics::evaluate_corpus;
use gecrefine::refine::{refine_corpus, write_records, RefineOptions};
use gecrefine::subword::{decode_bpe, learn_bpe, BpeModel};
use gecrefine::synth::{build_synth_corpus, Grammar, NoiseSpec, TypeMix};
use gecrefine::{BeamConfig, CorpusFormat, CorrectorHandle, ParallelCorpus, PerplexityScorer, Smoothing, Tokens};

#[derive(Parser, Debug)]
#[command(name = "gecrefine", version, about = "Denoise grammatical-error-correction parallel corpora")]
#[command(args_override_self = true)]
struct Cli {
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, clean and rewrite a parallel corpus.
    Ingest(IngestArgs),
    /// Train an n-gram language model on one sentence per line.
    TrainLm(TrainLmArgs),
    /// Learn byte-pair-encoding merges.
    LearnBpe(LearnBpeArgs),
    /// Segment (or, with --decode, join) sentences with a BPE model.
    ApplyBpe(ApplyBpeArgs),
    /// Train the noisy-channel corrector on a parallel corpus.
    TrainCorrector(TrainCorrectorArgs),
    /// Train the sentence-level error detector used by `filter --method sed`.
    TrainSed(TrainSedArgs),
    /// Self-refine the targets of a corpus with a perplexity fail-safe.
    Refine(RefineArgs),
    /// Drop suspect pairs with a filtering baseline.
    Filter(FilterArgs),
    /// Generate a synthetic noisy corpus with gold targets.
    Synth(SynthArgs),
    /// Score hypotheses against gold targets (WER and edit P/R/F0.5).
    Eval(EvalArgs),
    /// Target-side realizations of a source pattern.
    Confusions(ConfusionsArgs),
    /// Run the full synthetic experiment.
    Bench(BenchArgs),
}

/// JSON file whose keys are long flag names; explicit flags take precedence.
#[derive(Args, Debug)]
#[allow(dead_code)] // consumed by `expand_config` before parsing
struct ConfigArg {
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    input: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<CorpusFormat>,
    #[arg(long, default_value_t = 80)]
    max_len: usize,
    /// Keep pairs whose source and target are identical.
    #[arg(long)]
    keep_identical: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct TrainLmArgs {
    sentences: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value = "add_k:0.1")]
    smoothing: Smoothing,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct LearnBpeArgs {
    sentences: PathBuf,
    #[arg(long, default_value_t = 8000)]
    merges: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct ApplyBpeArgs {
    sentences: PathBuf,
    #[arg(long)]
    bpe: PathBuf,
    /// Join subwords back into words instead of segmenting.
    #[arg(long)]
    decode: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct TrainCorrectorArgs {
    corpus: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 2)]
    min_count: u64,
    #[arg(long, default_value_t = 1)]
    context: usize,
    #[arg(long, default_value_t = 1.0)]
    lm_weight: f64,
    #[arg(long, default_value_t = 5)]
    max_edits: usize,
    #[arg(long)]
    no_length_norm: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct TrainSedArgs {
    /// Grammatical sentences, one per line.
    #[arg(long)]
    grammatical: PathBuf,
    /// Ungrammatical sentences, one per line.
    #[arg(long)]
    ungrammatical: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct RefineArgs {
    corpus: PathBuf,
    /// Corrector model file, or `cmd:<shell command>`.
    #[arg(long)]
    corrector: String,
    /// Language model file, or `cmd:<shell command>`.
    #[arg(long)]
    scorer: String,
    #[arg(long)]
    no_failsafe: bool,
    /// Pass pairs that fail through unchanged instead of aborting.
    #[arg(long)]
    skip_on_error: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct FilterArgs {
    corpus: PathBuf,
    #[arg(long)]
    method: FilterMethod,
    #[arg(long, default_value_t = 0.2)]
    drop_fraction: f64,
    /// Source-to-target corrector model (ce).
    #[arg(long)]
    fwd: Option<PathBuf>,
    /// Target-to-source corrector model (ce).
    #[arg(long)]
    rev: Option<PathBuf>,
    /// Classifier model file, or `cmd:<shell command>` (sed).
    #[arg(long)]
    classifier: Option<String>,
    /// Language model file, or `cmd:<shell command>` (lm).
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-pair scores as tsv.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_rate: f64,
    #[arg(long, default_value = "0.3:0.7")]
    type_mix: TypeMix,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Template grammar; the built-in grammar when omitted.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Corpus of (source, hypothesis) pairs.
    #[arg(long)]
    hyp: PathBuf,
    /// Gold targets, one per line, aligned with the corpus.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct ConfusionsArgs {
    corpus: PathBuf,
    #[arg(long)]
    pattern: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_corpus(path: &Path) -> gecrefine::Result<ParallelCorpus> {
    ParallelCorpus::load(path, CorpusFormat::from_path(path))
}

fn write_corpus(corpus: &ParallelCorpus, path: &Path) -> gecrefine::Result<()> {
    corpus.write(path, CorpusFormat::from_path(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("{}: cannot write", path.display()))
}

fn open_scorer(spec: &str) -> anyhow::Result<Box<dyn PerplexityScorer>> {
    Ok(match spec.strip_prefix("cmd:") {
        Some(cmd) => Box::new(ExternalScorer::new(cmd)),
        None => Box::new(NgramLm::load(spec)?),
    })
}

fn open_classifier(spec: &str) -> anyhow::Result<Box<dyn SentenceClassifier>> {
    Ok(match spec.strip_prefix("cmd:") {
        Some(cmd) => Box::new(ExternalClassifier::new(cmd)),
        None => Box::new(SedClassifier::load(spec)?),
    })
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let format = a.format.unwrap_or_else(|| CorpusFormat::from_path(&a.input));
    let corpus = ParallelCorpus::load(&a.input, format)?;
    let options = PreprocessOptions {
        max_len: a.max_len,
        drop_identical: !a.keep_identical,
    };
    let cleaned = preprocess(&corpus, options);
    log::info!("kept {} of {} pairs", cleaned.len(), corpus.len());
    write_corpus(&cleaned, &a.out)?;
    println!("{}\t{}", corpus.len(), cleaned.len());
    Ok(())
}

fn train_lm_cmd(a: TrainLmArgs) -> anyhow::Result<()> {
    let sentences = load_sentences(&a.sentences)?;
    let lm = NgramLm::train(&sentences, LmConfig::new(a.order, a.smoothing))?;
    lm.save(&a.out)?;
    Ok(())
}

fn learn_bpe_cmd(a: LearnBpeArgs) -> anyhow::Result<()> {
    let sentences = load_sentences(&a.sentences)?;
    let model = learn_bpe(&sentences, a.merges)?;
    log::info!("learned {} merges", model.num_merges());
    model.save(&a.out)?;
    Ok(())
}

fn apply_bpe_cmd(a: ApplyBpeArgs) -> anyhow::Result<()> {
    let model = BpeModel::load(&a.bpe)?;
    let sentences = load_aligned_sentences(&a.sentences)?;
    let out: Vec<Tokens> = if a.decode {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| decode_bpe(s).with_context(|| format!("{}:{}", a.sentences.display(), i + 1)))
            .collect::<anyhow::Result<_>>()?
    } else {
        sentences.iter().map(|s| model.apply(s)).collect()
    };
    write_sentences(&a.out, out.iter())?;
    Ok(())
}

fn train_corrector_cmd(a: TrainCorrectorArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let lm = NgramLm::load(&a.lm)?;
    let beam = BeamConfig {
        beam_size: a.beam,
        length_norm: !a.no_length_norm,
        lm_weight: a.lm_weight,
        max_edits_per_sentence: a.max_edits,
    };
    let extraction = RuleExtraction {
        context: a.context,
        min_count: a.min_count,
    };
    let model = train_corrector(&corpus, lm, beam, extraction)?;
    log::info!("{} edit rules", model.channel.num_rules());
    model.save(&a.out)?;
    Ok(())
}

fn train_sed_cmd(a: TrainSedArgs) -> anyhow::Result<()> {
    let good = load_sentences(&a.grammatical)?;
    let bad = load_sentences(&a.ungrammatical)?;
    let lm = NgramLm::load(&a.lm)?;
    let training = SedTraining {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..Default::default()
    };
    let classifier = train_sed_classifier(&good, &bad, &lm, training)?;
    if let Some(acc) = classifier.heldout_accuracy {
        println!("held-out accuracy\t{acc:.4}");
    }
    classifier.save(&a.out)?;
    Ok(())
}

fn refine_cmd(a: RefineArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let corrector = CorrectorHandle::open(&a.corrector)?;
    let scorer = open_scorer(&a.scorer)?;
    let options = RefineOptions {
        failsafe: !a.no_failsafe,
        skip_on_error: a.skip_on_error,
        workers: a.workers,
    };
    let out = refine_corpus(&corpus, &corrector, scorer.as_ref(), options)?;
    write_corpus(&out.corpus, &a.out)?;
    if let Some(path) = &a.records {
        write_records(path, &out.records)?;
    }
    if let Some(path) = &a.summary {
        write_json(path, &out.summary)?;
    }
    let s = &out.summary;
    println!(
        "pairs {}\taccepted {}\tfailsafe {}\tunchanged {}",
        s.pairs, s.accepted_refined, s.failsafe_kept_original, s.unchanged_identical
    );
    Ok(())
}

fn filter_cmd(a: FilterArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let (kept, report) = match a.method {
        FilterMethod::Ce => {
            let (Some(fwd), Some(rev)) = (&a.fwd, &a.rev) else {
                bail!("--method ce needs --fwd and --rev models");
            };
            let forward = CorrectorHandle::open(&fwd.to_string_lossy())?;
            let reverse = CorrectorHandle::open(&rev.to_string_lossy())?;
            let options = CeOptions {
                drop_fraction: a.drop_fraction,
                higher_is_worse: true,
                workers: a.workers,
            };
            ce_filter(&corpus, &forward, &reverse, options)?
        }
        FilterMethod::Sed => {
            let Some(spec) = &a.classifier else {
                bail!("--method sed needs --classifier");
            };
            let classifier = open_classifier(spec)?;
            gecrefine::with_workers(a.workers, || sed_filter(&corpus, classifier.as_ref()))?
        }
        FilterMethod::Lm => {
            let Some(spec) = &a.lm else {
                bail!("--method lm needs --lm");
            };
            let scorer = open_scorer(spec)?;
            gecrefine::with_workers(a.workers, || lm_filter(&corpus, scorer.as_ref()))?
        }
    };
    write_corpus(&kept, &a.out)?;
    if let Some(path) = &a.report {
        report.write_json(path)?;
    }
    if let Some(path) = &a.scores {
        report.write_scores(path)?;
    }
    println!(
        "input {}\tkept {}\treduction {:.1}%",
        report.input_size,
        report.kept_size,
        100.0 * report.reduction_rate
    );
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> anyhow::Result<()> {
    let grammar = match &a.grammar {
        Some(p) => Grammar::load(p)?,
        None => Grammar::builtin(),
    };
    let spec = NoiseSpec::new(a.noise_rate, a.type_mix, a.seed)?;
    let synth = build_synth_corpus(a.n, &spec, &grammar)?;
    synth.save(&a.out_dir)?;
    println!(
        "pairs {}\tnoisy {:.1}%\tno learner error {}",
        synth.len(),
        100.0 * synth.noise_fraction(),
        synth.flagged.len()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.hyp)?;
    let gold = load_aligned_sentences(&a.reference)?;
    if gold.len() != corpus.len() {
        bail!(
            "{} has {} pairs but {} has {} lines",
            a.hyp.display(),
            corpus.len(),
            a.reference.display(),
            gold.len()
        );
    }
    let sources: Vec<Tokens> = corpus.sources().cloned().collect();
    let hyps: Vec<Tokens> = corpus.targets().cloned().collect();
    let report = evaluate_corpus(&sources, &hyps, &gold, 0.5)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!(
        "WER {:.4}\tP {:.4}\tR {:.4}\tF0.5 {:.4}",
        report.wer, report.precision, report.recall, report.f05
    );
    Ok(())
}

fn confusions_cmd(a: ConfusionsArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let pattern: Tokens = a.pattern.split_whitespace().map(String::from).collect();
    let set = confusion_set(&corpus, &pattern)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&set)?);
    } else {
        print!("{set}");
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs, mut config: ExperimentConfig) -> anyhow::Result<()> {
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.workers.is_some() {
        config.workers = a.workers;
    }
    let out = run_experiment(&config)?;
    write_outputs(&out, &config, &a.out_dir)?;
    println!(
        "{:<16}{:>8}{:>10}{:>10}{:>8}{:>8}{:>8}",
        "strategy", "pairs", "WER in", "WER out", "P", "R", "F0.5"
    );
    for r in out.rows() {
        println!(
            "{:<16}{:>8}{:>9.2}%{:>9.2}%{:>8.3}{:>8.3}{:>8.3}",
            r.strategy.as_str(),
            r.corpus_size_after,
            100.0 * r.wer_before,
            100.0 * r.wer_after,
            r.downstream_p,
            r.downstream_r,
            r.downstream_f05
        );
    }
    Ok(())
}

/// Rewrites `--config file.json` into flags placed right after the
/// subcommand, so flags given on the command line win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(sub) = strs.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1) else {
        return Ok(args);
    };
    if strs[sub] == "bench" {
        return Ok(args);
    }
    let mut path = None;
    let mut rest = Vec::new();
    let mut i = sub + 1;
    while i < args.len() {
        if strs[i] == "--config" {
            path = Some(strs.get(i + 1).cloned().ok_or("--config needs a value")?);
            i += 2;
        } else if let Some(p) = strs[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            i += 1;
        } else {
            rest.push(args[i].clone());
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
    let obj = value.as_object().ok_or_else(|| format!("{path}: expected a JSON object"))?;
    let mut flags: Vec<OsString> = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => flags.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => flags.extend([flag.into(), s.into()]),
            serde_json::Value::Number(n) => flags.extend([flag.into(), n.to_string().into()]),
            _ => return Err(format!("{path}: value of `{key}` must be a string, number or boolean")),
        }
    }
    let mut out: Vec<OsString> = args[..=sub].to_vec();
    out.extend(flags);
    out.extend(rest);
    Ok(out)
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // a bad experiment file is a usage error, like a bad --config elsewhere
    let experiment = match &cli.command {
        Command::Bench(BenchArgs { config: Some(p), .. }) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        _ => ExperimentConfig::default(),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::TrainLm(a) => train_lm_cmd(a),
        Command::LearnBpe(a) => learn_bpe_cmd(a),
        Command::ApplyBpe(a) => apply_bpe_cmd(a),
        Command::TrainCorrector(a) => train_corrector_cmd(a),
        Command::TrainSed(a) => train_sed_cmd(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Filter(a) => filter_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Confusions(a) => confusions_cmd(a),
        Command::Bench(a) => bench_cmd(a, experiment),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
