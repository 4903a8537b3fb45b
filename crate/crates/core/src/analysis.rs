//! Corpus-level reports: noise reduction against gold targets, confusion
//! sets for a source pattern, and refinement decision histograms.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::corrector::align;
use crate::error::{Error, Result};
use crate::metrics::{self, AlignOp};
use crate::refine::{RefinementDecision, RefinementRecord};
use crate::Tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub pairs: usize,
    pub wer_before: f64,
    pub wer_after: f64,
    pub absolute_reduction: f64,
    pub relative_reduction: f64,
}

/// WER of the targets before and after denoising, each against gold.
pub fn noise_report(before: &ParallelCorpus, after: &ParallelCorpus, gold: &[Tokens]) -> Result<NoiseReport> {
    if before.len() != after.len() || before.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "noise report needs aligned inputs, got {} before, {} after, {} gold",
            before.len(),
            after.len(),
            gold.len()
        )));
    }
    if let Some((b, a)) = before.iter().zip(after.iter()).find(|(b, a)| b.id != a.id) {
        return Err(Error::InvalidArgument(format!(
            "noise report: pair ids differ ({} before, {} after)",
            b.id, a.id
        )));
    }
    let before_t: Vec<Tokens> = before.targets().cloned().collect();
    let after_t: Vec<Tokens> = after.targets().cloned().collect();
    let wer_before = metrics::wer_lists(&before_t, gold)?;
    let wer_after = metrics::wer_lists(&after_t, gold)?;
    let absolute_reduction = wer_before - wer_after;
    Ok(NoiseReport {
        pairs: before.len(),
        wer_before,
        wer_after,
        absolute_reduction,
        relative_reduction: if wer_before > 0.0 { absolute_reduction / wer_before } else { 0.0 },
    })
}

impl fmt::Display for NoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs       {}", self.pairs)?;
        writeln!(f, "WER before  {:.1}%", 100.0 * self.wer_before)?;
        writeln!(f, "WER after   {:.1}%", 100.0 * self.wer_after)?;
        write!(
            f,
            "reduction   {:.1} points ({:.1}% relative)",
            100.0 * self.absolute_reduction,
            100.0 * self.relative_reduction
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub realization: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSet {
    pub pattern: String,
    pub occurrences: usize,
    pub entries: Vec<ConfusionEntry>,
}

impl ConfusionSet {
    pub fn percent_of(&self, realization: &str) -> f64 {
        self.entries
            .iter()
            .find(|e| e.realization == realization)
            .map_or(0.0, |e| e.percent)
    }
}

impl fmt::Display for ConfusionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} occurrences)", self.pattern, self.occurrences)?;
        for e in &self.entries {
            let shown = if e.realization.is_empty() { "<empty>" } else { &e.realization };
            writeln!(f, "  {:>5.1}%  {:>6}  {}", e.percent, e.count, shown)?;
        }
        Ok(())
    }
}

/// Target tokens aligned to source positions `[start, end)`: tokens matched
/// or substituted for a position in the span, plus insertions that fall
/// between two such positions.
pub fn project_span(ops: &[AlignOp], target: &[String], start: usize, end: usize) -> Tokens {
    let in_span = |op: &AlignOp| match *op {
        AlignOp::Equal { src, .. } | AlignOp::Substitute { src, .. } | AlignOp::Delete { src } => {
            (start..end).contains(&src)
        }
        AlignOp::Insert { .. } => false,
    };
    let (Some(first), Some(last)) = (ops.iter().position(in_span), ops.iter().rposition(in_span)) else {
        return Vec::new();
    };
    ops[first..=last]
        .iter()
        .filter_map(|op| match *op {
            AlignOp::Equal { tgt, .. } | AlignOp::Substitute { tgt, .. } | AlignOp::Insert { tgt } => {
                Some(target[tgt].clone())
            }
            AlignOp::Delete { .. } => None,
        })
        .collect()
}

/// Distribution of target-side realizations of every occurrence of
/// `pattern` in the source sentences.
pub fn confusion_set(corpus: &ParallelCorpus, pattern: &[String]) -> Result<ConfusionSet> {
    if pattern.is_empty() {
        return Err(Error::InvalidArgument("confusion pattern is empty".into()));
    }
    let per_pair: Vec<Vec<String>> = corpus
        .pairs
        .par_iter()
        .map(|p| {
            let starts: Vec<usize> = p
                .source
                .windows(pattern.len())
                .enumerate()
                .filter(|(_, w)| *w == pattern)
                .map(|(i, _)| i)
                .collect();
            if starts.is_empty() {
                return Vec::new();
            }
            let ops = align(&p.source, &p.target);
            starts
                .into_iter()
                .map(|s| project_span(&ops, &p.target, s, s + pattern.len()).join(" "))
                .collect()
        })
        .collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in per_pair.into_iter().flatten() {
        *counts.entry(r).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mut entries: Vec<ConfusionEntry> = counts
        .into_iter()
        .map(|(realization, count)| ConfusionEntry {
            realization,
            count,
            percent: 100.0 * count as f64 / total as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.realization.cmp(&b.realization)));
    Ok(ConfusionSet {
        pattern: pattern.join(" "),
        occurrences: total,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    pub original: String,
    pub replacement: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionHistogram {
    /// Non-zero decision counts, in declaration order.
    pub counts: Vec<(RefinementDecision, usize)>,
    pub top_patterns: Vec<PatternCount>,
}

impl DecisionHistogram {
    pub fn count(&self, decision: RefinementDecision) -> usize {
        self.counts
            .iter()
            .find(|(d, _)| *d == decision)
            .map_or(0, |(_, c)| *c)
    }
}

impl fmt::Display for DecisionHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (d, c) in &self.counts {
            writeln!(f, "{:<24}{c}", d.as_str())?;
        }
        for p in &self.top_patterns {
            writeln!(f, "{:>6}  {} -> {}", p.count, p.original, p.replacement)?;
        }
        Ok(())
    }
}

/// Decision counts and the `k` most frequent replacements proposed by the
/// corrector, whether or not they were accepted.
pub fn decision_histogram(records: &[RefinementRecord], k: usize) -> DecisionHistogram {
    let counts = RefinementDecision::ALL
        .iter()
        .map(|&d| (d, records.iter().filter(|r| r.decision == d).count()))
        .filter(|(_, c)| *c > 0)
        .collect();
    if k == 0 {
        return DecisionHistogram {
            counts,
            top_patterns: Vec::new(),
        };
    }
    let per_record: Vec<Vec<(String, String)>> = records
        .par_iter()
        .filter(|r| !r.candidate.is_empty() && r.candidate != r.original_target)
        .map(|r| {
            metrics::extract_edits(&r.original_target, &r.candidate)
                .edits
                .into_iter()
                .map(|e| (r.original_target[e.start..e.end].join(" "), e.replacement.join(" ")))
                .collect()
        })
        .collect();
    let mut tally: HashMap<(String, String), usize> = HashMap::new();
    for p in per_record.into_iter().flatten() {
        *tally.entry(p).or_default() += 1;
    }
    let mut top_patterns: Vec<PatternCount> = tally
        .into_iter()
        .map(|((original, replacement), count)| PatternCount {
            original,
            replacement,
            count,
        })
        .collect();
    top_patterns.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.original.cmp(&b.original))
            .then_with(|| a.replacement.cmp(&b.replacement))
    });
    top_patterns.truncate(k);
    DecisionHistogram { counts, top_patterns }
}
