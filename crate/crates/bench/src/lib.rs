//! Shared fixtures for the benchmarks.

use gecrefine::corrector::{train_corrector, RuleExtraction, StatisticalCorrector};
use gecrefine::lm::train_lm;
use gecrefine::synth::{build_synth_corpus, gen_clean, Grammar};
use gecrefine::{BeamConfig, NgramLm, NoiseSpec, ParallelCorpus, Smoothing, Tokens};

pub struct Fixture {
    pub corpus: ParallelCorpus,
    pub native: Vec<Tokens>,
    pub lm: NgramLm,
    pub corrector: StatisticalCorrector,
}

/// A noisy synthetic corpus of `n` pairs with a native language model and a
/// corrector trained on the corpus itself.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let grammar = Grammar::builtin();
    let spec = NoiseSpec::new(0.3, Default::default(), seed).expect("noise spec");
    let corpus = build_synth_corpus(n, &spec, &grammar).expect("synthetic corpus").noisy;
    let native = gen_clean(n, &grammar, seed);
    let lm = train_lm(&native, 3, Smoothing::AddK { k: 0.1 }).expect("lm");
    let targets: Vec<Tokens> = corpus.targets().cloned().collect();
    let corrector_lm = train_lm(&targets, 3, Smoothing::AddK { k: 0.1 }).expect("lm");
    let corrector = train_corrector(&corpus, corrector_lm, BeamConfig::default(), RuleExtraction::default())
        .expect("corrector");
    Fixture { corpus, native, lm, corrector }
}
