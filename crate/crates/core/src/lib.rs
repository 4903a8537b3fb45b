//! Denoising toolkit for grammatical-error-correction parallel corpora.
//!
//! The central operation is self-refinement: a corrector trained on the noisy
//! corpus re-decodes every target sentence, and a perplexity fail-safe keeps
//! the original target whenever the rewrite scores worse under a language
//! model. Filtering baselines, noise metrics and a synthetic-noise harness
//! make the effect measurable on small machines.

pub mod analysis;
pub mod corpus;
pub mod corrector;
pub mod error;
pub mod experiment;
pub mod external;
pub mod filters;
pub mod lm;
pub mod metrics;
pub mod refine;
pub mod subword;
pub mod synth;

pub use corpus::{tokenize, CorpusFormat, ParallelCorpus, SentencePair};
pub use corrector::{BeamConfig, ChannelModel, Corrector, CorrectorHandle, EditRule};
pub use error::{Error, Result};
pub use lm::{NgramLm, PerplexityScore, PerplexityScorer, Smoothing};
pub use metrics::{EditSet, PrfScore};
pub use refine::{RefinementDecision, RefinementRecord, RefineOptions};
pub use subword::BpeModel;
pub use synth::{NoiseLabel, NoiseSpec, SynthCorpus};

/// A tokenized sentence.
pub type Tokens = Vec<String>;

/// Joins tokens with single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Runs `f` on a dedicated rayon pool with `workers` threads, or on the
/// global pool when `workers` is `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}
