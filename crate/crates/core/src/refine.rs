//! Self-refinement of a noisy parallel corpus.
//!
//! Every target sentence is re-decoded by the base corrector. A rewrite is
//! kept only if it does not raise perplexity under the scorer; otherwise the
//! original target is restored. Sources are never touched and no pair is
//! dropped.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::corrector::Corrector;
use crate::error::{Error, Result};
use crate::lm::{PerplexityScore, PerplexityScorer};
use crate::Tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementDecision {
    AcceptedRefined,
    FailsafeKeptOriginal,
    UnchangedIdentical,
}

impl RefinementDecision {
    pub const ALL: [RefinementDecision; 3] = [
        RefinementDecision::AcceptedRefined,
        RefinementDecision::FailsafeKeptOriginal,
        RefinementDecision::UnchangedIdentical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RefinementDecision::AcceptedRefined => "accepted_refined",
            RefinementDecision::FailsafeKeptOriginal => "failsafe_kept_original",
            RefinementDecision::UnchangedIdentical => "unchanged_identical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub pair_id: usize,
    pub decision: RefinementDecision,
    pub ppl_original: Option<f64>,
    pub ppl_candidate: Option<f64>,
    #[serde(with = "joined")]
    pub original_target: Tokens,
    #[serde(with = "joined")]
    pub candidate: Tokens,
    /// The corrector returned an empty sentence.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_candidate: bool,
    /// The pair errored and was passed through unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl RefinementRecord {
    /// The target that ends up in the refined corpus.
    pub fn output_target(&self) -> &Tokens {
        match self.decision {
            RefinementDecision::AcceptedRefined => &self.candidate,
            _ => &self.original_target,
        }
    }
}

mod joined {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(String::from).collect())
    }
}

/// Accepts the candidate iff `ppl_original - ppl_candidate >= 0`.
pub fn failsafe_decide(
    ppl_original: PerplexityScore,
    ppl_candidate: PerplexityScore,
) -> Result<RefinementDecision> {
    for v in [ppl_original.value, ppl_candidate.value] {
        if !v.is_finite() {
            return Err(Error::NonFinite(v));
        }
    }
    if ppl_original.value - ppl_candidate.value >= 0.0 {
        Ok(RefinementDecision::AcceptedRefined)
    } else {
        Ok(RefinementDecision::FailsafeKeptOriginal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub failsafe: bool,
    /// Pass erroring pairs through unchanged instead of failing the run.
    pub skip_on_error: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            failsafe: true,
            skip_on_error: false,
            workers: None,
        }
    }
}

/// Refines one pair. The output keeps the original source.
pub fn refine_pair(
    pair: &SentencePair,
    corrector: &dyn Corrector,
    scorer: &dyn PerplexityScorer,
    failsafe: bool,
) -> Result<(SentencePair, RefinementRecord)> {
    let at = |e: Error| e.at_pair(pair.id);
    let candidate = corrector.correct(&pair.target).map_err(at)?;
    let mut record = RefinementRecord {
        pair_id: pair.id,
        decision: RefinementDecision::UnchangedIdentical,
        ppl_original: None,
        ppl_candidate: None,
        original_target: pair.target.clone(),
        candidate,
        empty_candidate: false,
        skipped: None,
    };
    if record.candidate == pair.target {
        return Ok((pair.clone(), record));
    }
    if record.candidate.is_empty() {
        record.empty_candidate = true;
        record.decision = RefinementDecision::FailsafeKeptOriginal;
        return Ok((pair.clone(), record));
    }
    if !failsafe {
        record.decision = RefinementDecision::AcceptedRefined;
        let out = pair.with_target(record.candidate.clone());
        return Ok((out, record));
    }
    let original = scorer.perplexity(&pair.target).map_err(at)?;
    let refined = scorer.perplexity(&record.candidate).map_err(at)?;
    record.ppl_original = Some(original.value);
    record.ppl_candidate = Some(refined.value);
    record.decision = failsafe_decide(original, refined).map_err(at)?;
    let out = match record.decision {
        RefinementDecision::AcceptedRefined => pair.with_target(record.candidate.clone()),
        _ => pair.clone(),
    };
    Ok((out, record))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub pairs: usize,
    pub accepted_refined: usize,
    pub failsafe_kept_original: usize,
    pub unchanged_identical: usize,
    pub empty_candidates: usize,
    pub skipped: usize,
    pub fraction_refined: f64,
    pub fraction_failsafe: f64,
    pub fraction_unchanged: f64,
}

impl RefineSummary {
    pub fn from_records(records: &[RefinementRecord]) -> Self {
        let mut s = RefineSummary {
            pairs: records.len(),
            ..Default::default()
        };
        for r in records {
            match r.decision {
                RefinementDecision::AcceptedRefined => s.accepted_refined += 1,
                RefinementDecision::FailsafeKeptOriginal => s.failsafe_kept_original += 1,
                RefinementDecision::UnchangedIdentical => s.unchanged_identical += 1,
            }
            s.empty_candidates += usize::from(r.empty_candidate);
            s.skipped += usize::from(r.skipped.is_some());
        }
        let n = records.len().max(1) as f64;
        s.fraction_refined = s.accepted_refined as f64 / n;
        s.fraction_failsafe = s.failsafe_kept_original as f64 / n;
        s.fraction_unchanged = s.unchanged_identical as f64 / n;
        s
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub corpus: ParallelCorpus,
    pub records: Vec<RefinementRecord>,
    pub summary: RefineSummary,
}

/// Refines every pair independently on a worker pool. Output order and
/// content do not depend on the number of workers.
pub fn refine_corpus(
    corpus: &ParallelCorpus,
    corrector: &dyn Corrector,
    scorer: &dyn PerplexityScorer,
    options: RefineOptions,
) -> Result<RefineOutput> {
    let results: Vec<Result<(SentencePair, RefinementRecord)>> = crate::with_workers(options.workers, || {
        corpus
            .pairs
            .par_iter()
            .map(|pair| refine_pair(pair, corrector, scorer, options.failsafe))
            .collect()
    });

    let mut pairs = Vec::with_capacity(corpus.len());
    let mut records = Vec::with_capacity(corpus.len());
    for (pair, result) in corpus.pairs.iter().zip(results) {
        match result {
            Ok((p, r)) => {
                pairs.push(p);
                records.push(r);
            }
            Err(e) if options.skip_on_error => {
                log::warn!("skipping pair {}: {e}", pair.id);
                pairs.push(pair.clone());
                records.push(RefinementRecord {
                    pair_id: pair.id,
                    decision: RefinementDecision::UnchangedIdentical,
                    ppl_original: None,
                    ppl_candidate: None,
                    original_target: pair.target.clone(),
                    candidate: pair.target.clone(),
                    empty_candidate: false,
                    skipped: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let summary = RefineSummary::from_records(&records);
    let mut provenance = corpus.provenance.clone();
    provenance.push(format!(
        "self-refinement failsafe={}: refined={} failsafe={} unchanged={}",
        options.failsafe, summary.accepted_refined, summary.failsafe_kept_original, summary.unchanged_identical
    ));
    Ok(RefineOutput {
        corpus: ParallelCorpus { pairs, provenance },
        records,
        summary,
    })
}

pub fn write_records(path: impl AsRef<Path>, records: &[RefinementRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RefinementRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_lm, NgramLm, Smoothing};

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn ppl(v: f64) -> PerplexityScore {
        PerplexityScore { value: v, token_count: 1 }
    }

    struct Identity;
    impl Corrector for Identity {
        fn correct(&self, tokens: &[String]) -> Result<Tokens> {
            Ok(tokens.to_vec())
        }
    }

    /// Replaces every occurrence of `from` with `to`.
    struct Replace(&'static str, &'static str);
    impl Corrector for Replace {
        fn correct(&self, tokens: &[String]) -> Result<Tokens> {
            Ok(tokens
                .iter()
                .map(|t| if t == self.0 { self.1.to_string() } else { t.clone() })
                .collect())
        }
    }

    struct Eraser;
    impl Corrector for Eraser {
        fn correct(&self, _: &[String]) -> Result<Tokens> {
            Ok(Vec::new())
        }
    }

    struct Failing;
    impl Corrector for Failing {
        fn correct(&self, tokens: &[String]) -> Result<Tokens> {
            if tokens.iter().any(|t| t == "boom") {
                Err(Error::External { command: "test".into(), message: "boom".into() })
            } else {
                Ok(tokens.to_vec())
            }
        }
    }

    fn lm() -> NgramLm {
        let data: Vec<Tokens> = ["I go home .", "you go home .", "we go out ."].iter().map(|s| toks(s)).collect();
        train_lm(&data, 2, Smoothing::AddK { k: 0.1 }).unwrap()
    }

    fn corpus() -> ParallelCorpus {
        ParallelCorpus::from_raw([
            ("I goes home .", "I goes home ."),
            ("you goes home .", "you go home ."),
            ("we went out .", "we go out ."),
            ("they go home .", "they goes home ."),
        ])
    }

    #[test]
    fn failsafe_decision_table() {
        assert_eq!(failsafe_decide(ppl(79.64), ppl(73.37)).unwrap(), RefinementDecision::AcceptedRefined);
        assert_eq!(failsafe_decide(ppl(32.42), ppl(33.59)).unwrap(), RefinementDecision::FailsafeKeptOriginal);
        assert_eq!(failsafe_decide(ppl(10.0), ppl(10.0)).unwrap(), RefinementDecision::AcceptedRefined);
        assert!(failsafe_decide(ppl(f64::INFINITY), ppl(1.0)).is_err());
        assert!(failsafe_decide(ppl(2.0), ppl(f64::NAN)).is_err());
    }

    #[test]
    fn identity_corrector_leaves_corpus_unchanged() {
        let c = corpus();
        let out = refine_corpus(&c, &Identity, &lm(), RefineOptions::default()).unwrap();
        assert_eq!(out.corpus.pairs, c.pairs);
        assert!(out.records.iter().all(|r| r.decision == RefinementDecision::UnchangedIdentical));
        assert_eq!(out.summary.fraction_unchanged, 1.0);
        assert_eq!(out.summary.fraction_refined, 0.0);
        assert_eq!(out.summary.fraction_failsafe, 0.0);
    }

    #[test]
    fn improving_candidate_replaces_target_only() {
        let pair = SentencePair::new(7, "I goes home .", "I goes home .");
        let (out, rec) = refine_pair(&pair, &Replace("goes", "go"), &lm(), true).unwrap();
        assert_eq!(rec.decision, RefinementDecision::AcceptedRefined);
        assert!(rec.ppl_candidate.unwrap() < rec.ppl_original.unwrap());
        assert_eq!(out.target, toks("I go home ."));
        assert_eq!(out.source, pair.source);
        assert_eq!(out.source_raw, pair.source_raw);
        assert_eq!(out.id, 7);
    }

    #[test]
    fn worse_candidate_is_rejected_unless_failsafe_off() {
        let pair = SentencePair::new(0, "I goes home .", "I go home .");
        let (out, rec) = refine_pair(&pair, &Replace("go", "goes"), &lm(), true).unwrap();
        assert_eq!(rec.decision, RefinementDecision::FailsafeKeptOriginal);
        assert_eq!(out.target, pair.target);
        let (out, rec) = refine_pair(&pair, &Replace("go", "goes"), &lm(), false).unwrap();
        assert_eq!(rec.decision, RefinementDecision::AcceptedRefined);
        assert_eq!(out.target, toks("I goes home ."));
        assert!(rec.ppl_original.is_none());
    }

    #[test]
    fn one_of_four_accepted() {
        // only pair 0's target contains "I"; the swap ties on perplexity and is accepted
        let out = refine_corpus(&corpus(), &Replace("I", "you"), &lm(), RefineOptions::default()).unwrap();
        let refined = out.records.iter().filter(|r| r.decision == RefinementDecision::AcceptedRefined).count();
        let changed = out.records.iter().filter(|r| r.decision != RefinementDecision::UnchangedIdentical).count();
        assert_eq!(changed, 1);
        assert_eq!(refined, 1);
        assert_eq!(out.summary.fraction_refined, 0.25);
    }

    #[test]
    fn empty_candidate_keeps_original_and_is_flagged() {
        let pair = SentencePair::new(0, "a", "b c");
        let (out, rec) = refine_pair(&pair, &Eraser, &lm(), true).unwrap();
        assert_eq!(rec.decision, RefinementDecision::FailsafeKeptOriginal);
        assert!(rec.empty_candidate);
        assert_eq!(out, pair);
    }

    #[test]
    fn errors_carry_pair_id_or_are_skipped() {
        let c = ParallelCorpus::from_raw([("a", "fine"), ("b", "boom here")]);
        let err = refine_corpus(&c, &Failing, &lm(), RefineOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Pair { pair_id: 1, .. }), "{err}");
        let opts = RefineOptions { skip_on_error: true, ..Default::default() };
        let out = refine_corpus(&c, &Failing, &lm(), opts).unwrap();
        assert_eq!(out.corpus.pairs, c.pairs);
        assert_eq!(out.summary.skipped, 1);
        assert!(out.records[1].skipped.as_ref().unwrap().contains("boom"));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let c = corpus();
        let one = refine_corpus(&c, &Replace("goes", "go"), &lm(), RefineOptions { workers: Some(1), ..Default::default() }).unwrap();
        let four = refine_corpus(&c, &Replace("goes", "go"), &lm(), RefineOptions { workers: Some(4), ..Default::default() }).unwrap();
        assert_eq!(one.corpus, four.corpus);
        assert_eq!(one.records, four.records);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let out = refine_corpus(&corpus(), &Replace("goes", "go"), &lm(), RefineOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &out.records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for field in ["pair_id", "decision", "ppl_original", "ppl_candidate", "original_target", "candidate"] {
            assert!(first.get(field).is_some(), "missing {field}");
        }
        assert_eq!(read_records(&path).unwrap(), out.records);
    }
}
