//! Filtering baselines: dual conditional cross-entropy, sentence-level error
//! detection, and language-model perplexity comparison. Each keeps a
//! subsequence of the input corpus and reports how much it removed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::corrector::{CorrectorHandle, StatisticalCorrector};
use crate::error::{Error, Result};
use crate::external::ExternalClassifier;
use crate::lm::{LmFile, NgramLm, PerplexityScorer};
use crate::Tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    Ce,
    Sed,
    Lm,
}

impl std::str::FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(FilterMethod::Ce),
            "sed" => Ok(FilterMethod::Sed),
            "lm" => Ok(FilterMethod::Lm),
            other => Err(Error::InvalidArgument(format!("unknown filter method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: usize,
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub method: FilterMethod,
    pub input_size: usize,
    pub kept_size: usize,
    pub dropped: usize,
    pub reduction_rate: f64,
    /// Pairs that could not be scored and were kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
    #[serde(skip)]
    pub scores: Vec<PairScore>,
}

impl FilterReport {
    fn new(method: FilterMethod, input_size: usize, kept_size: usize) -> Self {
        FilterReport {
            method,
            input_size,
            kept_size,
            dropped: input_size - kept_size,
            reduction_rate: if input_size == 0 {
                0.0
            } else {
                1.0 - kept_size as f64 / input_size as f64
            },
            flagged: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Per-pair dump: `id<TAB>score<TAB>kept`.
    pub fn write_scores(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("id\tscore\tkept\n");
        for s in &self.scores {
            text.push_str(&format!("{}\t{}\t{}\n", s.id, s.score, u8::from(s.kept)));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Keeps the pairs whose entry in `keep` is set; ids and order are preserved.
fn select(corpus: &ParallelCorpus, keep: &[bool], note: String) -> ParallelCorpus {
    let pairs = corpus
        .pairs
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| p.clone())
        .collect();
    let mut provenance = corpus.provenance.clone();
    provenance.push(note);
    ParallelCorpus { pairs, provenance }
}

// ---------------------------------------------------------------------------
// cross-entropy filtering

/// Per-token conditional negative log-likelihood of an output given an input.
pub trait ConditionalScorer: Send + Sync {
    fn conditional_nll(&self, given: &[String], output: &[String]) -> Result<f64>;
}

impl ConditionalScorer for StatisticalCorrector {
    fn conditional_nll(&self, given: &[String], output: &[String]) -> Result<f64> {
        Ok(StatisticalCorrector::conditional_nll(self, given, output))
    }
}

impl ConditionalScorer for CorrectorHandle {
    fn conditional_nll(&self, given: &[String], output: &[String]) -> Result<f64> {
        match self {
            CorrectorHandle::Statistical(s) => Ok(s.conditional_nll(given, output)),
            CorrectorHandle::External(e) => Err(Error::InvalidArgument(format!(
                "external corrector `{}` cannot score sentence pairs",
                e.command()
            ))),
        }
    }
}

/// `|H_f - H_r| + (H_f + H_r) / 2`; lower is better.
pub fn ce_score(h_forward: f64, h_reverse: f64) -> f64 {
    (h_forward - h_reverse).abs() + 0.5 * (h_forward + h_reverse)
}

/// Scores a pair with a forward (source to target) and a reverse (target to
/// source) model.
pub fn ce_pair_score(
    source: &[String],
    target: &[String],
    forward: &dyn ConditionalScorer,
    reverse: &dyn ConditionalScorer,
) -> Result<f64> {
    let hf = forward.conditional_nll(source, target)?;
    let hr = reverse.conditional_nll(target, source)?;
    Ok(ce_score(hf, hr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeOptions {
    pub drop_fraction: f64,
    /// Drop the highest scores (true) or the lowest (false, for scorers of
    /// inverted polarity).
    pub higher_is_worse: bool,
    pub workers: Option<usize>,
}

impl Default for CeOptions {
    fn default() -> Self {
        CeOptions {
            drop_fraction: 0.2,
            higher_is_worse: true,
            workers: None,
        }
    }
}

/// Number of pairs removed for a drop fraction: `ceil(fraction * n)`.
pub fn drop_count(fraction: f64, n: usize) -> usize {
    // guard against products like 0.7 * 10 = 7.000000000000001
    let raw = fraction * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() < 1e-9 { nearest } else { raw.ceil() };
    (k as usize).min(n)
}

/// Drops the `ceil(drop_fraction * n)` worst-scoring pairs; among equal
/// scores, larger ids go first.
pub fn ce_filter_scores(
    corpus: &ParallelCorpus,
    scores: &[f64],
    options: CeOptions,
) -> Result<(ParallelCorpus, FilterReport)> {
    if !(0.0..1.0).contains(&options.drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop fraction must be in [0, 1), got {}",
            options.drop_fraction
        )));
    }
    assert_eq!(scores.len(), corpus.len());
    let n = corpus.len();
    let k = drop_count(options.drop_fraction, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let by_score = if options.higher_is_worse {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        };
        by_score.then_with(|| corpus.pairs[b].id.cmp(&corpus.pairs[a].id))
    });
    let mut keep = vec![true; n];
    for &i in &order[..k] {
        keep[i] = false;
    }
    let out = select(
        corpus,
        &keep,
        format!("ce filter drop_fraction={}: dropped {k}", options.drop_fraction),
    );
    let mut report = FilterReport::new(FilterMethod::Ce, n, out.len());
    report.scores = corpus
        .pairs
        .iter()
        .zip(scores)
        .zip(&keep)
        .map(|((p, &score), &kept)| PairScore { id: p.id, score, kept })
        .collect();
    Ok((out, report))
}

pub fn ce_filter(
    corpus: &ParallelCorpus,
    forward: &dyn ConditionalScorer,
    reverse: &dyn ConditionalScorer,
    options: CeOptions,
) -> Result<(ParallelCorpus, FilterReport)> {
    let scores: Vec<f64> = crate::with_workers(options.workers, || {
        corpus
            .pairs
            .par_iter()
            .map(|p| ce_pair_score(&p.source, &p.target, forward, reverse).map_err(|e| e.at_pair(p.id)))
            .collect::<Result<_>>()
    })?;
    ce_filter_scores(corpus, &scores, options)
}

// ---------------------------------------------------------------------------
// sentence-level error detection

/// Judges whether a sentence is grammatical.
pub trait SentenceClassifier: Send + Sync {
    fn is_grammatical(&self, tokens: &[String]) -> Result<bool>;
}

impl SentenceClassifier for ExternalClassifier {
    fn is_grammatical(&self, tokens: &[String]) -> Result<bool> {
        ExternalClassifier::is_grammatical(self, tokens)
    }
}

/// Word sequences that usually mark a learner error.
pub const DEFAULT_ERROR_PATTERNS: &[&str] = &[
    "discuss about",
    "discuss of",
    "discuss in",
    "enter in",
    "enter to",
    "he go",
    "she go",
    "it go",
    "he have",
    "she have",
    "they has",
    "we has",
    "i has",
    "he want",
    "she want",
    "they wants",
    "we wants",
    "he like",
    "she like",
    "they likes",
    "we likes",
    "a apple",
    "a idea",
    "an book",
    "depend of",
    "married with",
    "arrive to",
];

pub const NUM_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SedTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for SedTraining {
    fn default() -> Self {
        SedTraining {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Logistic classifier over four sentence features: length-normalized LM
/// log-probability, out-of-vocabulary rate, matched error patterns, length.
#[derive(Debug, Clone)]
pub struct SedClassifier {
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
    pub mean: [f64; NUM_FEATURES],
    pub scale: [f64; NUM_FEATURES],
    pub threshold: f64,
    pub patterns: Vec<Tokens>,
    pub heldout_accuracy: Option<f64>,
    lm: NgramLm,
}

fn count_patterns(tokens: &[String], patterns: &[Tokens]) -> usize {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    patterns
        .iter()
        .filter(|p| !p.is_empty() && p.len() <= lowered.len())
        .map(|p| lowered.windows(p.len()).filter(|w| *w == p.as_slice()).count())
        .sum()
}

fn raw_features(lm: &NgramLm, patterns: &[Tokens], tokens: &[String]) -> [f64; NUM_FEATURES] {
    if tokens.is_empty() {
        return [0.0; NUM_FEATURES];
    }
    let (log_prob, events) = lm.sentence_log_prob(tokens);
    let oov = tokens.iter().filter(|t| !lm.is_known(t)).count();
    [
        log_prob / events as f64,
        oov as f64 / tokens.len() as f64,
        count_patterns(tokens, patterns) as f64,
        tokens.len() as f64,
    ]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SedClassifier {
    fn standardized(&self, tokens: &[String]) -> [f64; NUM_FEATURES] {
        let raw = raw_features(&self.lm, &self.patterns, tokens);
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.scale[i])
    }

    /// Probability that `tokens` is grammatical.
    pub fn probability(&self, tokens: &[String]) -> f64 {
        let x = self.standardized(tokens);
        let z: f64 = self.bias + x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>();
        sigmoid(z)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = SedFile {
            weights: self.weights,
            bias: self.bias,
            mean: self.mean,
            scale: self.scale,
            threshold: self.threshold,
            patterns: self.patterns.iter().map(|p| p.join(" ")).collect(),
            heldout_accuracy: self.heldout_accuracy,
            lm: self.lm.to_file(),
        };
        fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: SedFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Ok(SedClassifier {
            weights: f.weights,
            bias: f.bias,
            mean: f.mean,
            scale: f.scale,
            threshold: f.threshold,
            patterns: f
                .patterns
                .iter()
                .map(|p| p.split_whitespace().map(String::from).collect())
                .collect(),
            heldout_accuracy: f.heldout_accuracy,
            lm: NgramLm::from_file(f.lm)?,
        })
    }
}

impl SentenceClassifier for SedClassifier {
    fn is_grammatical(&self, tokens: &[String]) -> Result<bool> {
        Ok(self.probability(tokens) >= self.threshold)
    }
}

#[derive(Serialize, Deserialize)]
struct SedFile {
    weights: [f64; NUM_FEATURES],
    bias: f64,
    mean: [f64; NUM_FEATURES],
    scale: [f64; NUM_FEATURES],
    threshold: f64,
    patterns: Vec<String>,
    heldout_accuracy: Option<f64>,
    lm: LmFile,
}

pub fn default_patterns() -> Vec<Tokens> {
    DEFAULT_ERROR_PATTERNS
        .iter()
        .map(|p| p.split(' ').map(String::from).collect())
        .collect()
}

/// Fits the classifier by full-batch gradient descent on the logistic loss.
/// A seeded shuffle holds out `heldout_fraction` of the examples for an
/// accuracy estimate; weights and bias start at zero.
pub fn train_sed_classifier(
    grammatical: &[Tokens],
    ungrammatical: &[Tokens],
    lm: &NgramLm,
    training: SedTraining,
) -> Result<SedClassifier> {
    if grammatical.is_empty() || ungrammatical.is_empty() {
        return Err(Error::InvalidArgument(
            "sed training needs both grammatical and ungrammatical examples".into(),
        ));
    }
    let patterns = default_patterns();
    // stratified split: each class contributes the same fraction to the held-out set
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
    let mut heldout = Vec::new();
    let mut train = Vec::new();
    for (class, label) in [(grammatical, 1.0), (ungrammatical, 0.0)] {
        let mut xs: Vec<([f64; NUM_FEATURES], f64)> = class
            .iter()
            .map(|s| (raw_features(lm, &patterns, s), label))
            .collect();
        xs.shuffle(&mut rng);
        let k = ((xs.len() as f64 * training.heldout_fraction).round() as usize).min(xs.len() - 1);
        train.extend(xs.split_off(k));
        heldout.extend(xs);
    }

    let mut mean = [0.0; NUM_FEATURES];
    let mut scale = [1.0; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        let m = train.iter().map(|(x, _)| x[i]).sum::<f64>() / train.len() as f64;
        let var = train.iter().map(|(x, _)| (x[i] - m).powi(2)).sum::<f64>() / train.len() as f64;
        mean[i] = m;
        scale[i] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let standardize = |x: &[f64; NUM_FEATURES]| -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| (x[i] - mean[i]) / scale[i])
    };
    let train_x: Vec<([f64; NUM_FEATURES], f64)> = train.iter().map(|(x, y)| (standardize(x), *y)).collect();

    let mut weights = [0.0; NUM_FEATURES];
    let mut bias = 0.0;
    let n = train_x.len() as f64;
    for _ in 0..training.epochs {
        let mut grad_w = [0.0; NUM_FEATURES];
        let mut grad_b = 0.0;
        for (x, y) in &train_x {
            let z = bias + x.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();
            let err = sigmoid(z) - y;
            for i in 0..NUM_FEATURES {
                grad_w[i] += err * x[i];
            }
            grad_b += err;
        }
        for i in 0..NUM_FEATURES {
            weights[i] -= training.learning_rate * (grad_w[i] / n + training.l2 * weights[i]);
        }
        bias -= training.learning_rate * grad_b / n;
    }

    let mut classifier = SedClassifier {
        weights,
        bias,
        mean,
        scale,
        threshold: 0.5,
        patterns,
        heldout_accuracy: None,
        lm: lm.clone(),
    };
    if !heldout.is_empty() {
        let correct = heldout
            .iter()
            .filter(|(x, y)| {
                let xs = standardize(x);
                let z = classifier.bias + xs.iter().zip(&classifier.weights).map(|(a, w)| a * w).sum::<f64>();
                (sigmoid(z) >= classifier.threshold) == (*y == 1.0)
            })
            .count();
        classifier.heldout_accuracy = Some(correct as f64 / heldout.len() as f64);
    }
    Ok(classifier)
}

/// Keeps a pair iff the classifier judges its TARGET grammatical. Sources are
/// never inspected.
pub fn sed_filter(
    corpus: &ParallelCorpus,
    classifier: &dyn SentenceClassifier,
) -> Result<(ParallelCorpus, FilterReport)> {
    let keep: Vec<bool> = corpus
        .pairs
        .par_iter()
        .map(|p| classifier.is_grammatical(&p.target).map_err(|e| e.at_pair(p.id)))
        .collect::<Result<_>>()?;
    let out = select(corpus, &keep, "sed filter".into());
    let mut report = FilterReport::new(FilterMethod::Sed, corpus.len(), out.len());
    report.scores = corpus
        .pairs
        .iter()
        .zip(&keep)
        .map(|(p, &kept)| PairScore {
            id: p.id,
            score: f64::from(u8::from(kept)),
            kept,
        })
        .collect();
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// language-model filtering

/// Keeps a pair iff `PPL(target) <= PPL(source)`. Pairs that cannot be
/// scored are kept and flagged.
pub fn lm_filter(
    corpus: &ParallelCorpus,
    scorer: &dyn PerplexityScorer,
) -> Result<(ParallelCorpus, FilterReport)> {
    let scored: Vec<Option<f64>> = corpus
        .pairs
        .par_iter()
        .map(|p| {
            let t = scorer.perplexity(&p.target).ok()?;
            let s = scorer.perplexity(&p.source).ok()?;
            Some(t.value - s.value)
        })
        .collect();
    let keep: Vec<bool> = scored.iter().map(|d| d.map_or(true, |d| d <= 0.0)).collect();
    let out = select(corpus, &keep, "lm filter".into());
    let mut report = FilterReport::new(FilterMethod::Lm, corpus.len(), out.len());
    report.flagged = corpus
        .pairs
        .iter()
        .zip(&scored)
        .filter(|(_, s)| s.is_none())
        .map(|(p, _)| p.id)
        .collect();
    report.scores = corpus
        .pairs
        .iter()
        .zip(&scored)
        .zip(&keep)
        .map(|((p, s), &kept)| PairScore {
            id: p.id,
            score: s.unwrap_or(f64::NAN),
            kept,
        })
        .collect();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use crate::lm::{train_lm, PerplexityScore, Smoothing};
    use std::collections::HashMap;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus_of(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            (0..n)
                .map(|i| SentencePair::from_tokens(i, toks(&format!("s{i}")), toks(&format!("t{i}"))))
                .collect(),
        )
    }

    #[test]
    fn ce_score_formula() {
        assert_eq!(ce_score(1.0, 1.0), 1.0);
        assert_eq!(ce_score(3.0, 1.0), 4.0);
        assert_eq!(ce_score(1.0, 3.0), 4.0);
    }

    #[test]
    fn drop_count_is_ceiling() {
        assert_eq!(drop_count(0.2, 10), 2);
        assert_eq!(drop_count(0.7, 10), 7);
        assert_eq!(drop_count(0.2, 11), 3);
        assert_eq!(drop_count(0.0, 11), 0);
        assert_eq!(drop_count(0.25, 3), 1);
    }

    #[test]
    fn ce_drops_highest_scores() {
        let c = corpus_of(10);
        let scores: Vec<f64> = (0..10).map(|i| [5.0, 1.0, 9.0, 2.0, 3.0, 4.0, 8.0, 0.5, 6.0, 7.0][i]).collect();
        let (out, report) = ce_filter_scores(&c, &scores, CeOptions::default()).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(report.kept_size, 8);
        assert_eq!(report.dropped, 2);
        assert!((report.reduction_rate - 0.2).abs() < 1e-12);
        let ids: Vec<usize> = out.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 1, 3, 4, 5, 7, 8, 9]);
    }

    #[test]
    fn ce_zero_fraction_is_identity() {
        let c = corpus_of(5);
        let (out, report) = ce_filter_scores(&c, &[1.0; 5], CeOptions { drop_fraction: 0.0, ..Default::default() }).unwrap();
        assert_eq!(out.pairs, c.pairs);
        assert_eq!(report.reduction_rate, 0.0);
    }

    #[test]
    fn ce_ties_drop_largest_ids() {
        let c = corpus_of(10);
        let (out, _) = ce_filter_scores(&c, &[3.0; 10], CeOptions::default()).unwrap();
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        let inverted = CeOptions { higher_is_worse: false, ..Default::default() };
        let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (out, _) = ce_filter_scores(&c, &scores, inverted).unwrap();
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), (2..10).collect::<Vec<_>>());
    }

    #[test]
    fn ce_rejects_bad_fraction() {
        let c = corpus_of(3);
        assert!(ce_filter_scores(&c, &[0.0; 3], CeOptions { drop_fraction: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn ce_ranks_copy_pairs_low_under_copy_favoring_models() {
        use crate::corrector::{BeamConfig, ChannelModel, StatisticalCorrector};
        let lm = train_lm(&[toks("a b c"), toks("a b d")], 2, Smoothing::AddK { k: 0.1 }).unwrap();
        let model = StatisticalCorrector::new(ChannelModel::from_rules(vec![], HashMap::new()), lm, BeamConfig::default()).unwrap();
        let c = ParallelCorpus::new(vec![
            SentencePair::from_tokens(0, toks("a b c"), toks("x y z")),
            SentencePair::from_tokens(1, toks("a b c"), toks("a b c")),
            SentencePair::from_tokens(2, toks("a b d"), toks("a q d")),
        ]);
        let scores: Vec<f64> = c.iter().map(|p| ce_pair_score(&p.source, &p.target, &model, &model).unwrap()).collect();
        assert!(scores[1] < scores[2] && scores[2] < scores[0], "{scores:?}");
    }

    struct Fixed(bool);
    impl SentenceClassifier for Fixed {
        fn is_grammatical(&self, _: &[String]) -> Result<bool> {
            Ok(self.0)
        }
    }

    struct Labels(Vec<Tokens>);
    impl SentenceClassifier for Labels {
        fn is_grammatical(&self, t: &[String]) -> Result<bool> {
            Ok(self.0.iter().any(|g| g.as_slice() == t))
        }
    }

    #[test]
    fn sed_filter_fixtures() {
        let c = corpus_of(6);
        let (out, report) = sed_filter(&c, &Fixed(true)).unwrap();
        assert_eq!(out.pairs, c.pairs);
        assert_eq!(report.reduction_rate, 0.0);
        let (out, report) = sed_filter(&c, &Fixed(false)).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.reduction_rate, 1.0);
        let good = Labels(vec![toks("t1"), toks("t4"), toks("s2")]);
        let (out, _) = sed_filter(&c, &good).unwrap();
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, 4]);
    }

    fn sed_data() -> (Vec<Tokens>, Vec<Tokens>, NgramLm) {
        let good: Vec<Tokens> = (0..60)
            .map(|i| toks(&format!("we discuss the plan number {} today .", i % 7)))
            .collect();
        let bad: Vec<Tokens> = (0..60)
            .map(|i| toks(&format!("we discuss about plan zork{} qux today .", i % 5)))
            .collect();
        let lm = train_lm(&good, 3, Smoothing::AddK { k: 0.1 }).unwrap();
        (good, bad, lm)
    }

    #[test]
    fn separable_classes_are_learned() {
        let (good, bad, lm) = sed_data();
        let clf = train_sed_classifier(&good, &bad, &lm, SedTraining::default()).unwrap();
        assert_eq!(clf.heldout_accuracy, Some(1.0));
        assert!(clf.is_grammatical(&good[0]).unwrap());
        assert!(!clf.is_grammatical(&bad[0]).unwrap());
    }

    #[test]
    fn identical_classes_are_at_chance() {
        let (good, _, lm) = sed_data();
        let mut accs = Vec::new();
        for seed in 0..10 {
            let clf = train_sed_classifier(&good, &good, &lm, SedTraining { seed, ..Default::default() }).unwrap();
            accs.push(clf.heldout_accuracy.unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() <= 0.1, "mean accuracy {mean}");
    }

    #[test]
    fn zero_epochs_gives_one_half() {
        let (good, bad, lm) = sed_data();
        let clf = train_sed_classifier(&good, &bad, &lm, SedTraining { epochs: 0, ..Default::default() }).unwrap();
        for s in good.iter().chain(&bad) {
            assert_eq!(clf.probability(s), 0.5);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let (good, _, lm) = sed_data();
        assert!(train_sed_classifier(&good, &[], &lm, SedTraining::default()).is_err());
    }

    #[test]
    fn sed_save_load() {
        let (good, bad, lm) = sed_data();
        let clf = train_sed_classifier(&good, &bad, &lm, SedTraining::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sed.json");
        clf.save(&path).unwrap();
        let back = SedClassifier::load(&path).unwrap();
        for s in good.iter().chain(&bad).take(20) {
            assert_eq!(back.probability(s).to_bits(), clf.probability(s).to_bits());
        }
    }

    /// Scorer returning a fixed perplexity per sentence.
    struct Table(HashMap<String, f64>);
    impl PerplexityScorer for Table {
        fn perplexity(&self, t: &[String]) -> Result<PerplexityScore> {
            self.0
                .get(&t.join(" "))
                .map(|&value| PerplexityScore { value, token_count: t.len() })
                .ok_or(Error::EmptySentence)
        }
    }

    #[test]
    fn lm_filter_rule() {
        let table = Table(HashMap::from([
            ("src0".to_string(), 40.0),
            ("tgt0".to_string(), 30.0),
            ("src1".to_string(), 30.0),
            ("tgt1".to_string(), 40.0),
            ("src2".to_string(), 25.0),
            ("tgt2".to_string(), 25.0),
        ]));
        let c = ParallelCorpus::new(
            (0..4).map(|i| SentencePair::from_tokens(i, toks(&format!("src{i}")), toks(&format!("tgt{i}")))).collect(),
        );
        let (out, report) = lm_filter(&c, &table).unwrap();
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 2, 3]);
        assert_eq!(report.flagged, vec![3]);
        assert!((report.reduction_rate - 0.25).abs() < 1e-12);
    }
}
