//! End-to-end desk experiment: build a noisy synthetic corpus, denoise it
//! with each configured strategy, train a downstream corrector on every
//! result and evaluate it on a held-out synthetic test set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{decision_histogram, noise_report};
use crate::corpus::{CorpusFormat, ParallelCorpus, SentencePair};
use crate::corrector::{train_corrector, BeamConfig, Corrector, RuleExtraction, StatisticalCorrector};
use crate::error::{Error, Result};
use crate::filters::{ce_filter, lm_filter, sed_filter, train_sed_classifier, CeOptions, FilterReport, SedTraining};
use crate::lm::{train_lm, NgramLm, Smoothing};
use crate::metrics::{evaluate_corpus, EvalReport};
use crate::refine::{refine_corpus, write_records, RefineOptions, RefineSummary};
use crate::synth::{build_synth_corpus, gen_clean, Grammar, NoiseSpec, SynthCorpus, TypeMix};
use crate::Tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Train on the noisy corpus as is.
    None,
    Sr,
    SrNoFailsafe,
    Ce,
    Sed,
    Lm,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Sr => "sr",
            Strategy::SrNoFailsafe => "sr_no_failsafe",
            Strategy::Ce => "ce",
            Strategy::Sed => "sed",
            Strategy::Lm => "lm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub rate: f64,
    pub type_mix: TypeMix,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rate: 0.3,
            type_mix: TypeMix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub smoothing: Smoothing,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 3,
            smoothing: Smoothing::AddK { k: 0.1 },
        }
    }
}

/// Language model fused into the trained correctors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorLm {
    /// The clean native-text model that also serves as the fail-safe scorer.
    Native,
    /// A model trained on the targets of the corrector's own training corpus.
    Targets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Clean sentences for the language model.
    pub n_native: usize,
    /// Clean-target pairs for the filtering baselines' own models.
    pub n_aux: usize,
    pub noise: NoiseConfig,
    pub lm: LmSection,
    pub corrector_lm: CorrectorLm,
    pub beam: BeamConfig,
    pub extraction: RuleExtraction,
    pub drop_fraction: f64,
    pub strategies: Vec<Strategy>,
    pub workers: Option<usize>,
    pub grammar: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            n_train: 3000,
            n_test: 500,
            n_native: 3000,
            n_aux: 1000,
            noise: NoiseConfig::default(),
            lm: LmSection::default(),
            corrector_lm: CorrectorLm::Targets,
            beam: BeamConfig::default(),
            extraction: RuleExtraction::default(),
            drop_fraction: 0.2,
            strategies: vec![
                Strategy::None,
                Strategy::Sr,
                Strategy::SrNoFailsafe,
                Strategy::Ce,
                Strategy::Sed,
                Strategy::Lm,
            ],
            workers: None,
            grammar: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub corpus_size_after: usize,
    pub wer_before: f64,
    pub wer_after: f64,
    #[serde(rename = "downstream_P")]
    pub downstream_p: f64,
    #[serde(rename = "downstream_R")]
    pub downstream_r: f64,
    #[serde(rename = "downstream_F05")]
    pub downstream_f05: f64,
}

/// Everything a strategy produced.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub corpus: ParallelCorpus,
    pub refine: Option<(RefineSummary, Vec<crate::refine::RefinementRecord>)>,
    pub filter: Option<FilterReport>,
    pub eval: EvalReport,
    pub row: ResultRow,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub train: SynthCorpus,
    pub test: SynthCorpus,
    pub runs: Vec<StrategyRun>,
}

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn run(&self, strategy: Strategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const NATIVE_STREAM: u64 = 3;
const AUX_STREAM: u64 = 4;
const SED_STREAM: u64 = 5;

/// Independent sub-seed for one stage of the experiment.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn corrector_lm(corpus: &ParallelCorpus, native: &NgramLm, config: &ExperimentConfig) -> Result<NgramLm> {
    match config.corrector_lm {
        CorrectorLm::Native => Ok(native.clone()),
        CorrectorLm::Targets => {
            let targets: Vec<Tokens> = corpus.targets().cloned().collect();
            train_lm(&targets, config.lm.order, config.lm.smoothing.clone())
        }
    }
}

/// Trains a corrector on `corpus` and decodes every test source with it.
fn downstream(
    corpus: &ParallelCorpus,
    lm: &NgramLm,
    config: &ExperimentConfig,
    test: &SynthCorpus,
) -> Result<EvalReport> {
    let sources: Vec<Tokens> = test.noisy.sources().cloned().collect();
    if corpus.is_empty() {
        return evaluate_corpus(&sources, &sources, &test.gold_targets, 0.5);
    }
    let hyps: Vec<Tokens> = match train_corrector(corpus, corrector_lm(corpus, lm, config)?, config.beam, config.extraction) {
        Ok(model) => crate::with_workers(config.workers, || correct_all(&model, &sources))?,
        // nothing left to learn from: the model copies its input
        Err(Error::NothingToLearn(_)) => sources.clone(),
        Err(e) => return Err(e),
    };
    evaluate_corpus(&sources, &hyps, &test.gold_targets, 0.5)
}

fn correct_all(model: &StatisticalCorrector, sources: &[Tokens]) -> Result<Vec<Tokens>> {
    use rayon::prelude::*;
    sources.par_iter().map(|s| model.correct(s)).collect()
}

/// Gold targets for the pairs that survived, looked up by id.
fn gold_for(corpus: &ParallelCorpus, train: &SynthCorpus) -> Vec<Tokens> {
    corpus.iter().map(|p| train.gold_targets[p.id].clone()).collect()
}

fn subset(train: &SynthCorpus, kept: &ParallelCorpus) -> ParallelCorpus {
    ParallelCorpus::new(kept.iter().map(|p| train.noisy.pairs[p.id].clone()).collect())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    if config.strategies.is_empty() {
        return Err(Error::InvalidArgument("no strategies configured".into()));
    }
    let grammar = match &config.grammar {
        Some(p) => Grammar::load(p)?,
        None => Grammar::builtin(),
    };
    let spec = |stream: u64, rate: f64| {
        NoiseSpec {
            annotation_noise_rate: rate,
            type_mix: config.noise.type_mix,
            rng_seed: derive_seed(config.seed, stream),
            ..Default::default()
        }
        .validated()
    };
    let train = build_synth_corpus(config.n_train, &spec(TRAIN_STREAM, config.noise.rate)?, &grammar)?;
    let test = build_synth_corpus(config.n_test, &spec(TEST_STREAM, 0.0)?, &grammar)?;
    let native = gen_clean(config.n_native, &grammar, derive_seed(config.seed, NATIVE_STREAM));
    let lm = train_lm(&native, config.lm.order, config.lm.smoothing.clone())?;
    log::info!(
        "built {} training pairs ({:.1}% noisy), {} test pairs, {} native sentences",
        train.len(),
        100.0 * train.noise_fraction(),
        test.len(),
        native.len()
    );

    let noisy_targets: Vec<Tokens> = train.noisy.targets().cloned().collect();
    let wer_before = crate::metrics::wer_lists(&noisy_targets, &train.gold_targets)?;

    let needs_aux = config.strategies.iter().any(|s| matches!(s, Strategy::Ce | Strategy::Sed));
    let aux = if needs_aux {
        Some(build_synth_corpus(config.n_aux, &spec(AUX_STREAM, 0.0)?, &grammar)?)
    } else {
        None
    };

    let mut refiner: Option<StatisticalCorrector> = None;
    let mut runs = Vec::new();
    for &strategy in &config.strategies {
        log::info!("strategy {}", strategy.as_str());
        let mut refine = None;
        let mut filter = None;
        let corpus = match strategy {
            Strategy::None => train.noisy.clone(),
            Strategy::Sr | Strategy::SrNoFailsafe => {
                if refiner.is_none() {
                    refiner = Some(train_corrector(&train.noisy, corrector_lm(&train.noisy, &lm, config)?, config.beam, config.extraction)?);
                }
                let options = RefineOptions {
                    failsafe: strategy == Strategy::Sr,
                    skip_on_error: false,
                    workers: config.workers,
                };
                let out = refine_corpus(&train.noisy, refiner.as_ref().expect("trained"), &lm, options)?;
                refine = Some((out.summary, out.records));
                out.corpus
            }
            Strategy::Ce => {
                let aux = aux.as_ref().expect("aux corpus");
                let forward = train_corrector(&aux.noisy, corrector_lm(&aux.noisy, &lm, config)?, config.beam, config.extraction)?;
                let reversed = ParallelCorpus::new(
                    aux.noisy
                        .iter()
                        .map(|p| SentencePair::from_tokens(p.id, p.target.clone(), p.source.clone()))
                        .collect(),
                );
                let sources: Vec<Tokens> = aux.noisy.sources().cloned().collect();
                let rev_lm = train_lm(&sources, config.lm.order, config.lm.smoothing.clone())?;
                let reverse = train_corrector(&reversed, rev_lm, config.beam, config.extraction)?;
                let options = CeOptions {
                    drop_fraction: config.drop_fraction,
                    higher_is_worse: true,
                    workers: config.workers,
                };
                let (kept, report) = ce_filter(&train.noisy, &forward, &reverse, options)?;
                filter = Some(report);
                kept
            }
            Strategy::Sed => {
                let aux = aux.as_ref().expect("aux corpus");
                let bad: Vec<Tokens> = aux.noisy.sources().cloned().collect();
                let training = SedTraining {
                    seed: derive_seed(config.seed, SED_STREAM),
                    ..Default::default()
                };
                let classifier = train_sed_classifier(&aux.gold_targets, &bad, &lm, training)?;
                let (kept, report) = crate::with_workers(config.workers, || sed_filter(&train.noisy, &classifier))?;
                filter = Some(report);
                kept
            }
            Strategy::Lm => {
                let (kept, report) = crate::with_workers(config.workers, || lm_filter(&train.noisy, &lm))?;
                filter = Some(report);
                kept
            }
        };
        let wer_after = if corpus.is_empty() {
            0.0
        } else {
            let targets: Vec<Tokens> = corpus.targets().cloned().collect();
            crate::metrics::wer_lists(&targets, &gold_for(&corpus, &train))?
        };
        let eval = downstream(&corpus, &lm, config, &test)?;
        let row = ResultRow {
            strategy,
            corpus_size_after: corpus.len(),
            wer_before: if filter.is_some() {
                let before = subset(&train, &corpus);
                if before.is_empty() {
                    0.0
                } else {
                    let t: Vec<Tokens> = before.targets().cloned().collect();
                    crate::metrics::wer_lists(&t, &gold_for(&before, &train))?
                }
            } else {
                wer_before
            },
            wer_after,
            downstream_p: eval.precision,
            downstream_r: eval.recall,
            downstream_f05: eval.f05,
        };
        runs.push(StrategyRun {
            strategy,
            corpus,
            refine,
            filter,
            eval,
            row,
        });
    }
    Ok(ExperimentOutput { train, test, runs })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the synthetic data, every strategy's corpus and report, and
/// `results.json` under `dir`.
pub fn write_outputs(output: &ExperimentOutput, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    for sub in ["train", "test", "corpora", "records", "reports"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    write_json(&dir.join("config.json"), config)?;
    output.train.save(dir.join("train"))?;
    output.test.save(dir.join("test"))?;
    for run in &output.runs {
        let name = run.strategy.as_str();
        run.corpus.write(dir.join("corpora").join(format!("{name}.tsv")), CorpusFormat::Tsv)?;
        if let Some((summary, records)) = &run.refine {
            write_records(dir.join("records").join(format!("{name}.jsonl")), records)?;
            write_json(&dir.join("reports").join(format!("{name}.refine.json")), summary)?;
            write_json(
                &dir.join("reports").join(format!("{name}.decisions.json")),
                &decision_histogram(records, 20),
            )?;
            let noise = noise_report(&output.train.noisy, &run.corpus, &output.train.gold_targets)?;
            write_json(&dir.join("reports").join(format!("{name}.noise.json")), &noise)?;
        }
        if let Some(report) = &run.filter {
            write_json(&dir.join("reports").join(format!("{name}.filter.json")), report)?;
            report.write_scores(dir.join("reports").join(format!("{name}.scores.tsv")))?;
        }
        write_json(&dir.join("reports").join(format!("{name}.eval.json")), &run.eval)?;
    }
    write_json(&dir.join("results.json"), &output.rows())
}
