//! The base corrector: a noisy-channel rule model decoded with beam search,
//! or an external process speaking the line protocol.
//!
//! Edit rules are read off word alignments of the training pairs. Decoding
//! walks the input left to right; every hypothesis either copies the next
//! token or rewrites a matching rule left-hand side. Hypotheses are scored by
//! the summed log-probabilities of the applied rules plus a weighted language
//! model score of the produced prefix.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::external::ExternalCorrector;
use crate::lm::{LmFile, NgramLm, TokenId};
use crate::metrics::{self, AlignOp};
use crate::Tokens;

const FORMAT_VERSION: u32 = 1;
pub const MAX_LHS: usize = 3;
pub const MAX_RHS: usize = 3;

/// Log-probability charged per token edit not covered by a rule when a
/// sentence pair is force-scored.
pub const UNSEEN_EDIT_LOGPROB: f64 = -10.0;

/// Minimal unit-cost alignment of `source` to `target`.
pub fn align(source: &[String], target: &[String]) -> Vec<AlignOp> {
    metrics::levenshtein(source, target).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRule {
    pub lhs: Tokens,
    pub rhs: Tokens,
    pub count: u64,
    pub channel_logprob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelModel {
    /// Rules grouped by left-hand side, each group sorted by right-hand side.
    rules: HashMap<Tokens, Vec<EditRule>>,
    /// How often each left-hand side occurs in the training sources.
    occurrences: HashMap<Tokens, u64>,
    max_lhs: usize,
}

impl ChannelModel {
    pub fn from_rules(rules: Vec<EditRule>, occurrences: HashMap<Tokens, u64>) -> Self {
        let mut grouped: HashMap<Tokens, Vec<EditRule>> = HashMap::new();
        let mut max_lhs = 0;
        for r in rules {
            max_lhs = max_lhs.max(r.lhs.len());
            grouped.entry(r.lhs.clone()).or_default().push(r);
        }
        for group in grouped.values_mut() {
            group.sort_by(|a, b| a.rhs.cmp(&b.rhs));
        }
        ChannelModel {
            rules: grouped,
            occurrences,
            max_lhs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn num_rules(&self) -> usize {
        self.rules.values().map(Vec::len).sum()
    }

    pub fn rules_for(&self, lhs: &[String]) -> &[EditRule] {
        self.rules.get(lhs).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All rules, ordered by left then right-hand side.
    pub fn rules(&self) -> Vec<&EditRule> {
        let mut all: Vec<&EditRule> = self.rules.values().flatten().collect();
        all.sort_by(|a, b| a.lhs.cmp(&b.lhs).then_with(|| a.rhs.cmp(&b.rhs)));
        all
    }

    pub fn lhs_occurrences(&self, lhs: &[String]) -> u64 {
        self.occurrences.get(lhs).copied().unwrap_or(0)
    }

    /// Probability of leaving `lhs` unchanged.
    pub fn identity_mass(&self, lhs: &[String]) -> f64 {
        1.0 - self
            .rules_for(lhs)
            .iter()
            .map(|r| r.channel_logprob.exp())
            .sum::<f64>()
    }

    /// Rules whose left-hand side matches `input` starting at `pos`.
    fn matching<'a>(&'a self, input: &'a [String], pos: usize) -> impl Iterator<Item = &'a EditRule> {
        let longest = self.max_lhs.min(input.len() - pos);
        (1..=longest).flat_map(move |len| self.rules_for(&input[pos..pos + len]).iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_norm: bool,
    pub lm_weight: f64,
    pub max_edits_per_sentence: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_norm: true,
            lm_weight: 1.0,
            max_edits_per_sentence: 5,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be >= 1".into()));
        }
        if !(self.lm_weight.is_finite() && self.lm_weight >= 0.0) {
            return Err(Error::InvalidArgument("lm weight must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleExtraction {
    /// Tokens of unchanged context taken on each side of an edit.
    pub context: usize,
    pub min_count: u64,
}

impl Default for RuleExtraction {
    fn default() -> Self {
        RuleExtraction {
            context: 1,
            min_count: 2,
        }
    }
}

/// Anything that rewrites a tokenized sentence.
pub trait Corrector: Send + Sync {
    fn correct(&self, tokens: &[String]) -> Result<Tokens>;
}

#[derive(Debug, Clone)]
pub struct StatisticalCorrector {
    pub channel: ChannelModel,
    pub lm: NgramLm,
    pub beam: BeamConfig,
}

#[derive(Debug, Clone)]
struct Hypothesis {
    output: Tokens,
    lm_context: Vec<TokenId>,
    channel: f64,
    lm: f64,
    edits: usize,
}

impl Hypothesis {
    fn score(&self, lm_weight: f64) -> f64 {
        self.channel + lm_weight * self.lm
    }
}

/// Higher score first, then lexicographically smaller output.
fn rank(a: (f64, &Tokens), b: (f64, &Tokens)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl StatisticalCorrector {
    pub fn new(channel: ChannelModel, lm: NgramLm, beam: BeamConfig) -> Result<Self> {
        beam.validate()?;
        Ok(StatisticalCorrector { channel, lm, beam })
    }

    fn extend(&self, hyp: &Hypothesis, produced: &[String], channel: f64, edit: bool) -> Hypothesis {
        let mut next = Hypothesis {
            output: hyp.output.clone(),
            lm_context: hyp.lm_context.clone(),
            channel: hyp.channel + channel,
            lm: hyp.lm,
            edits: hyp.edits + usize::from(edit),
        };
        let keep = self.lm.order() - 1;
        for token in produced {
            let id = self.lm.id(token);
            next.lm += self.lm.log_prob(&next.lm_context, id);
            next.output.push(token.clone());
            if keep > 0 {
                next.lm_context.push(id);
                if next.lm_context.len() > keep {
                    next.lm_context.remove(0);
                }
            }
        }
        next
    }

    /// Final ranking score: adds the end-of-sentence event and applies length
    /// normalization.
    fn final_score(&self, hyp: &Hypothesis) -> f64 {
        let mut lm = hyp.lm;
        if self.lm.includes_end() {
            lm += self.lm.log_prob(&hyp.lm_context, crate::lm::EOS);
        }
        let total = hyp.channel + self.beam.lm_weight * lm;
        if self.beam.length_norm {
            total / hyp.output.len().max(1) as f64
        } else {
            total
        }
    }

    fn prune(&self, stack: &mut Vec<Hypothesis>, limit: Option<usize>) {
        let w = self.beam.lm_weight;
        stack.sort_by(|a, b| {
            rank((a.score(w), &a.output), (b.score(w), &b.output)).then_with(|| a.edits.cmp(&b.edits))
        });
        // identical outputs with the same edit budget left are interchangeable
        let mut seen = HashSet::new();
        stack.retain(|h| seen.insert((h.output.clone(), h.edits)));
        if let Some(limit) = limit {
            stack.truncate(limit);
        }
    }

    fn decode(&self, input: &[String]) -> Tokens {
        if self.channel.is_empty() {
            return input.to_vec();
        }
        let n = input.len();
        let mut stacks: Vec<Vec<Hypothesis>> = vec![Vec::new(); n + 1];
        stacks[0].push(Hypothesis {
            output: Vec::new(),
            lm_context: self.lm.start_context(),
            channel: 0.0,
            lm: 0.0,
            edits: 0,
        });
        for pos in 0..n {
            let mut stack = std::mem::take(&mut stacks[pos]);
            self.prune(&mut stack, Some(self.beam.beam_size));
            for hyp in &stack {
                stacks[pos + 1].push(self.extend(hyp, &input[pos..pos + 1], 0.0, false));
                if hyp.edits >= self.beam.max_edits_per_sentence {
                    continue;
                }
                for rule in self.channel.matching(input, pos) {
                    let next = self.extend(hyp, &rule.rhs, rule.channel_logprob, true);
                    stacks[pos + rule.lhs.len()].push(next);
                }
            }
        }
        let mut finals = std::mem::take(&mut stacks[n]);
        self.prune(&mut finals, None);
        finals
            .into_iter()
            .map(|h| (self.final_score(&h), h.output))
            .min_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)))
            .map(|(_, out)| out)
            .unwrap_or_default()
    }

    /// Best channel log-probability of rewriting `source` into exactly
    /// `target`; token edits no rule covers cost [`UNSEEN_EDIT_LOGPROB`] each.
    pub fn forced_channel_logprob(&self, source: &[String], target: &[String]) -> f64 {
        let (n, m) = (source.len(), target.len());
        let width = m + 1;
        let mut best = vec![f64::NEG_INFINITY; (n + 1) * width];
        best[0] = 0.0;
        for i in 0..=n {
            for j in 0..=m {
                let here = best[i * width + j];
                if here == f64::NEG_INFINITY {
                    continue;
                }
                let mut relax = |ni: usize, nj: usize, gain: f64| {
                    let cell = &mut best[ni * width + nj];
                    if here + gain > *cell {
                        *cell = here + gain;
                    }
                };
                if i < n && j < m {
                    let gain = if source[i] == target[j] { 0.0 } else { UNSEEN_EDIT_LOGPROB };
                    relax(i + 1, j + 1, gain);
                }
                if i < n {
                    relax(i + 1, j, UNSEEN_EDIT_LOGPROB);
                }
                if j < m {
                    relax(i, j + 1, UNSEEN_EDIT_LOGPROB);
                }
                if i < n {
                    for rule in self.channel.matching(source, i) {
                        let k = rule.rhs.len();
                        if j + k <= m && target[j..j + k] == rule.rhs[..] {
                            relax(i + rule.lhs.len(), j + k, rule.channel_logprob);
                        }
                    }
                }
            }
        }
        best[n * width + m]
    }

    /// Per-token negative log-likelihood of `target` given `source`: the
    /// forced channel score plus the weighted language model score of
    /// `target`, divided by the target length.
    pub fn conditional_nll(&self, source: &[String], target: &[String]) -> f64 {
        let channel = self.forced_channel_logprob(source, target);
        let (lm, _) = self.lm.sentence_log_prob(target);
        -(channel + self.beam.lm_weight * lm) / target.len().max(1) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CorrectorFile {
            version: FORMAT_VERSION,
            beam: self.beam,
            rules: self.channel.rules().into_iter().cloned().collect(),
            occurrences: self
                .channel
                .occurrences
                .iter()
                .map(|(k, v)| (k.join(" "), *v))
                .collect(),
            lm: self.lm.to_file(),
        };
        fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CorrectorFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported corrector version {}", file.version)));
        }
        let occurrences = file
            .occurrences
            .into_iter()
            .map(|(k, v)| (k.split(' ').map(String::from).collect(), v))
            .collect();
        StatisticalCorrector::new(
            ChannelModel::from_rules(file.rules, occurrences),
            NgramLm::from_file(file.lm)?,
            file.beam,
        )
    }
}

impl Corrector for StatisticalCorrector {
    fn correct(&self, tokens: &[String]) -> Result<Tokens> {
        Ok(self.decode(tokens))
    }
}

#[derive(Serialize, Deserialize)]
struct CorrectorFile {
    version: u32,
    beam: BeamConfig,
    rules: Vec<EditRule>,
    occurrences: BTreeMap<String, u64>,
    lm: LmFile,
}

/// The base model: built-in statistical corrector or external process.
#[derive(Debug)]
pub enum CorrectorHandle {
    Statistical(StatisticalCorrector),
    External(ExternalCorrector),
}

impl CorrectorHandle {
    /// `cmd:<shell command>` selects an external process, anything else is a
    /// saved statistical model.
    pub fn open(spec: &str) -> Result<Self> {
        match spec.strip_prefix("cmd:") {
            Some(command) => Ok(CorrectorHandle::External(ExternalCorrector::new(command))),
            None => Ok(CorrectorHandle::Statistical(StatisticalCorrector::load(spec)?)),
        }
    }

    pub fn as_statistical(&self) -> Option<&StatisticalCorrector> {
        match self {
            CorrectorHandle::Statistical(s) => Some(s),
            CorrectorHandle::External(_) => None,
        }
    }
}

impl Corrector for CorrectorHandle {
    fn correct(&self, tokens: &[String]) -> Result<Tokens> {
        match self {
            CorrectorHandle::Statistical(s) => s.correct(tokens),
            CorrectorHandle::External(e) => e.correct(tokens),
        }
    }
}

/// Extracts edit rules from aligned training pairs and normalizes them into a
/// channel model.
///
/// Every maximal non-equal alignment region yields one rule per context
/// width (0..=`context` unchanged tokens on each side) whose left side has
/// 1 to 3 tokens and right side at most 3. A source window is credited to at
/// most one rule. Rules seen fewer than `min_count` times are dropped; the
/// rest get probability count / occurrences of their left side in the sources.
pub fn extract_channel(corpus: &ParallelCorpus, extraction: RuleExtraction) -> Result<ChannelModel> {
    if corpus.iter().all(|p| p.source == p.target) {
        return Err(Error::NothingToLearn(
            "corpus has no pairs whose source and target differ".into(),
        ));
    }
    let mut counts: HashMap<(Tokens, Tokens), u64> = HashMap::new();
    for pair in corpus.iter() {
        let src = &pair.source;
        let edits = metrics::extract_edits(src, &pair.target);
        let mut claimed: HashSet<(usize, usize)> = HashSet::new();
        for edit in &edits.edits {
            for left in 0..=extraction.context.min(edit.start) {
                for right in 0..=extraction.context.min(src.len() - edit.end) {
                    let (ls, re) = (edit.start - left, edit.end + right);
                    let lhs = &src[ls..re];
                    let rhs_len = left + edit.replacement.len() + right;
                    if lhs.is_empty() || lhs.len() > MAX_LHS || rhs_len > MAX_RHS {
                        continue;
                    }
                    let mut rhs = Vec::with_capacity(rhs_len);
                    rhs.extend_from_slice(&src[ls..edit.start]);
                    rhs.extend(edit.replacement.iter().cloned());
                    rhs.extend_from_slice(&src[edit.end..re]);
                    if lhs == rhs.as_slice() || !claimed.insert((ls, re)) {
                        continue;
                    }
                    *counts.entry((lhs.to_vec(), rhs)).or_default() += 1;
                }
            }
        }
    }
    counts.retain(|_, c| *c >= extraction.min_count);

    let wanted: HashSet<&Tokens> = counts.keys().map(|(l, _)| l).collect();
    let mut occurrences: HashMap<Tokens, u64> = HashMap::new();
    for src in corpus.sources() {
        for len in 1..=MAX_LHS.min(src.len()) {
            for window in src.windows(len) {
                if wanted.contains(&window.to_vec()) {
                    *occurrences.entry(window.to_vec()).or_default() += 1;
                }
            }
        }
    }
    let rules = counts
        .into_iter()
        .map(|((lhs, rhs), count)| {
            let occ = occurrences[&lhs];
            EditRule {
                channel_logprob: (count as f64 / occ as f64).ln(),
                lhs,
                rhs,
                count,
            }
        })
        .collect();
    Ok(ChannelModel::from_rules(rules, occurrences))
}

pub fn train_corrector(
    corpus: &ParallelCorpus,
    lm: NgramLm,
    beam: BeamConfig,
    extraction: RuleExtraction,
) -> Result<StatisticalCorrector> {
    let channel = extract_channel(corpus, extraction)?;
    log::debug!("extracted {} edit rules", channel.num_rules());
    StatisticalCorrector::new(channel, lm, beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use crate::lm::{train_lm, Smoothing};
    use proptest::prelude::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (s, t))| SentencePair::from_tokens(i, toks(s), toks(t)))
                .collect(),
        )
    }

    fn rule(lhs: &str, rhs: &str, logprob: f64) -> EditRule {
        EditRule {
            lhs: toks(lhs),
            rhs: toks(rhs),
            count: 1,
            channel_logprob: logprob,
        }
    }

    #[test]
    fn align_examples() {
        let script = align(&toks("a b c"), &toks("a b c"));
        assert!(script.iter().all(AlignOp::is_equal));
        let script = align(&toks("a b c"), &toks("a x c"));
        assert_eq!(script[1], AlignOp::Substitute { src: 1, tgt: 1 });
        assert_eq!(script.iter().map(AlignOp::cost).sum::<usize>(), 1);
        assert_eq!(align(&[], &toks("a")), vec![AlignOp::Insert { tgt: 0 }]);
    }

    #[test]
    fn extracts_discuss_about_rule() {
        let c = corpus(&[
            ("we discuss about it", "we discuss it"),
            ("they discuss about plans", "they discuss plans"),
            ("I discuss about work", "I discuss work"),
        ]);
        let model = extract_channel(&c, RuleExtraction::default()).unwrap();
        let rules = model.rules_for(&toks("discuss about"));
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].rhs, toks("discuss"));
        assert_eq!(rules[0].count, 3);
        assert_eq!(model.lhs_occurrences(&toks("discuss about")), 3);
        assert!((rules[0].channel_logprob - 0.0).abs() < 1e-12);
        assert!(model.identity_mass(&toks("discuss about")).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_count_consistent() {
        let c = corpus(&[
            ("we discuss about it", "we discuss it"),
            ("they discuss about plans", "they discuss plans"),
            ("I discuss about work", "I discuss about work ."),
            ("you discuss about it", "you discuss about it !"),
        ]);
        let model = extract_channel(&c, RuleExtraction::default()).unwrap();
        let r = &model.rules_for(&toks("discuss about"))[0];
        assert_eq!(r.count, 2);
        assert_eq!(model.lhs_occurrences(&toks("discuss about")), 4);
        assert!((r.channel_logprob - 0.5f64.ln()).abs() < 1e-12);
        assert!((model.identity_mass(&toks("discuss about")) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rules_below_min_count_are_pruned() {
        let c = corpus(&[("he go home", "he goes home"), ("a b", "a c"), ("a b", "a c")]);
        let model = extract_channel(&c, RuleExtraction::default()).unwrap();
        assert!(model.rules_for(&toks("go")).is_empty());
        assert!(!model.rules_for(&toks("b")).is_empty());
        for r in model.rules() {
            assert!(r.count >= 2);
        }
    }

    #[test]
    fn identical_corpus_is_an_error() {
        let c = corpus(&[("a b", "a b"), ("c", "c")]);
        assert!(matches!(
            extract_channel(&c, RuleExtraction::default()),
            Err(Error::NothingToLearn(_))
        ));
    }

    #[test]
    fn insertions_need_context() {
        let c = corpus(&[("I want go", "I want to go"), ("they want go", "they want to go")]);
        let model = extract_channel(&c, RuleExtraction::default()).unwrap();
        assert_eq!(model.rules_for(&toks("want"))[0].rhs, toks("want to"));
        assert_eq!(model.rules_for(&toks("go"))[0].rhs, toks("to go"));
        let none = extract_channel(&c, RuleExtraction { context: 0, min_count: 1 }).unwrap();
        assert!(none.is_empty());
    }

    fn lm_favoring(sentences: &[&str]) -> NgramLm {
        let data: Vec<Tokens> = sentences.iter().map(|s| toks(s)).collect();
        train_lm(&data, 2, Smoothing::AddK { k: 0.1 }).unwrap()
    }

    #[test]
    fn single_rule_beam_trace() {
        let lm = lm_favoring(&["I go .", "I go .", "you go ."]);
        let channel = ChannelModel::from_rules(vec![rule("goes", "go", 0.5f64.ln())], HashMap::new());
        let c = StatisticalCorrector::new(channel, lm, BeamConfig::default()).unwrap();
        assert_eq!(c.correct(&toks("I goes .")).unwrap(), toks("I go ."));
    }

    #[test]
    fn empty_model_is_identity() {
        let lm = lm_favoring(&["I go ."]);
        let c = StatisticalCorrector::new(ChannelModel::default(), lm, BeamConfig::default()).unwrap();
        for s in ["I goes .", "", "x y z"] {
            assert_eq!(c.correct(&toks(s)).unwrap(), toks(s));
        }
    }

    #[test]
    fn edit_cap_limits_rewrites() {
        let lm = lm_favoring(&["a a a a", "a a a a"]);
        let channel = ChannelModel::from_rules(vec![rule("b", "a", -0.01)], HashMap::new());
        let beam = BeamConfig { max_edits_per_sentence: 2, ..Default::default() };
        let c = StatisticalCorrector::new(channel, lm, beam).unwrap();
        let out = c.correct(&toks("b b b b")).unwrap();
        assert_eq!(out.iter().filter(|t| *t == "a").count(), 2);
    }

    #[test]
    fn zero_beam_is_rejected() {
        let lm = lm_favoring(&["a"]);
        let beam = BeamConfig { beam_size: 0, ..Default::default() };
        assert!(StatisticalCorrector::new(ChannelModel::default(), lm, beam).is_err());
    }

    #[test]
    fn forced_score_prefers_rules() {
        let lm = lm_favoring(&["I go ."]);
        let channel = ChannelModel::from_rules(vec![rule("goes", "go", 0.5f64.ln())], HashMap::new());
        let c = StatisticalCorrector::new(channel, lm, BeamConfig::default()).unwrap();
        let src = toks("I goes .");
        assert!((c.forced_channel_logprob(&src, &toks("I go .")) - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(c.forced_channel_logprob(&src, &src), 0.0);
        assert_eq!(c.forced_channel_logprob(&src, &toks("I went .")), UNSEEN_EDIT_LOGPROB);
    }

    #[test]
    fn save_and_load_round_trip() {
        let c = corpus(&[("he go home", "he goes home"), ("she go out", "she goes out")]);
        let lm = lm_favoring(&["he goes home", "she goes out"]);
        let model = train_corrector(&c, lm, BeamConfig::default(), RuleExtraction::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = StatisticalCorrector::load(&path).unwrap();
        assert_eq!(back.channel, model.channel);
        for s in ["he go home", "they go out", "x"] {
            assert_eq!(back.correct(&toks(s)).unwrap(), model.correct(&toks(s)).unwrap());
        }
        assert_eq!(model.correct(&toks("he go home")).unwrap(), toks("he goes home"));
    }

    // --- decoding oracles -------------------------------------------------

    struct Partial {
        out: Tokens,
        ctx: Vec<TokenId>,
        channel: f64,
        lm: f64,
        edits: usize,
    }

    fn step(c: &StatisticalCorrector, h: &Partial, produced: &[String], channel: f64, edit: bool) -> Partial {
        let mut ctx = h.ctx.clone();
        let mut lm = h.lm;
        let mut out = h.out.clone();
        for t in produced {
            let id = c.lm.id(t);
            lm += c.lm.log_prob(&ctx, id);
            ctx.push(id);
            out.push(t.clone());
        }
        Partial { out, ctx, channel: h.channel + channel, lm, edits: h.edits + usize::from(edit) }
    }

    fn finish(c: &StatisticalCorrector, h: &Partial) -> f64 {
        let mut lm = h.lm;
        if c.lm.includes_end() {
            lm += c.lm.log_prob(&h.ctx, crate::lm::EOS);
        }
        let total = h.channel + c.beam.lm_weight * lm;
        if c.beam.length_norm { total / h.out.len().max(1) as f64 } else { total }
    }

    fn expansions<'a>(c: &'a StatisticalCorrector, input: &'a [String], pos: usize) -> Vec<&'a EditRule> {
        let mut v = Vec::new();
        for len in 1..=MAX_LHS.min(input.len() - pos) {
            v.extend(c.channel.rules_for(&input[pos..pos + len]));
        }
        v
    }

    fn better(a: (f64, &Tokens), b: (f64, &Tokens)) -> bool {
        rank(a, b) == Ordering::Less
    }

    /// Enumerates every derivation.
    fn exhaustive(c: &StatisticalCorrector, input: &[String]) -> Tokens {
        fn go(c: &StatisticalCorrector, input: &[String], pos: usize, h: Partial, best: &mut Option<(f64, Tokens)>) {
            if pos == input.len() {
                let s = finish(c, &h);
                if best.as_ref().map_or(true, |(bs, bo)| better((s, &h.out), (*bs, bo))) {
                    *best = Some((s, h.out));
                }
                return;
            }
            go(c, input, pos + 1, step(c, &h, &input[pos..pos + 1], 0.0, false), best);
            if h.edits < c.beam.max_edits_per_sentence {
                for r in expansions(c, input, pos) {
                    go(c, input, pos + r.lhs.len(), step(c, &h, &r.rhs, r.channel_logprob, true), best);
                }
            }
        }
        let mut best = None;
        let start = Partial { out: vec![], ctx: c.lm.start_context(), channel: 0.0, lm: 0.0, edits: 0 };
        go(c, input, 0, start, &mut best);
        best.unwrap().1
    }

    /// Keeps the single best partial hypothesis per number of consumed tokens.
    fn greedy(c: &StatisticalCorrector, input: &[String]) -> Tokens {
        let n = input.len();
        let w = c.beam.lm_weight;
        let mut best: Vec<Option<Partial>> = (0..n).map(|_| None).collect();
        best[0] = Some(Partial { out: vec![], ctx: c.lm.start_context(), channel: 0.0, lm: 0.0, edits: 0 });
        let mut finals: Vec<Partial> = Vec::new();
        for pos in 0..n {
            let Some(h) = best[pos].take() else { continue };
            let mut cands = vec![(pos + 1, step(c, &h, &input[pos..pos + 1], 0.0, false))];
            if h.edits < c.beam.max_edits_per_sentence {
                for r in expansions(c, input, pos) {
                    cands.push((pos + r.lhs.len(), step(c, &h, &r.rhs, r.channel_logprob, true)));
                }
            }
            for (to, cand) in cands {
                if to == n {
                    finals.push(cand);
                    continue;
                }
                let replace = match &best[to] {
                    None => true,
                    Some(cur) => {
                        let (cs, ks) = (cand.channel + w * cand.lm, cur.channel + w * cur.lm);
                        better((cs, &cand.out), (ks, &cur.out)) || (cs == ks && cand.out == cur.out && cand.edits < cur.edits)
                    }
                };
                if replace {
                    best[to] = Some(cand);
                }
            }
        }
        let mut top: Option<(f64, Tokens)> = None;
        for f in finals {
            let s = finish(c, &f);
            if top.as_ref().map_or(true, |(ts, to)| better((s, &f.out), (*ts, to))) {
                top = Some((s, f.out));
            }
        }
        top.map(|t| t.1).unwrap_or_default()
    }

    fn vocab() -> Vec<&'static str> {
        vec!["a", "b", "c", "d"]
    }

    fn random_corrector(rules: Vec<(Vec<&'static str>, Vec<&'static str>, f64)>, beam: BeamConfig) -> StatisticalCorrector {
        let lm = lm_favoring(&["a b c d", "a a b", "c d a", "b b c", "d a"]);
        let rules = rules
            .into_iter()
            .filter(|(l, r, _)| l != r)
            .map(|(l, r, p)| EditRule {
                lhs: l.into_iter().map(String::from).collect(),
                rhs: r.into_iter().map(String::from).collect(),
                count: 2,
                channel_logprob: p,
            })
            .collect::<Vec<_>>();
        let mut dedup: Vec<EditRule> = Vec::new();
        for r in rules {
            if !dedup.iter().any(|d| d.lhs == r.lhs && d.rhs == r.rhs) {
                dedup.push(r);
            }
        }
        StatisticalCorrector::new(ChannelModel::from_rules(dedup, HashMap::new()), lm, beam).unwrap()
    }

    fn rule_strategy() -> impl Strategy<Value = (Vec<&'static str>, Vec<&'static str>, f64)> {
        (
            prop::collection::vec(prop::sample::select(vocab()), 1..=2),
            prop::collection::vec(prop::sample::select(vocab()), 0..=2),
            -3.0f64..-0.01,
        )
    }

    fn sentence() -> impl Strategy<Value = Tokens> {
        prop::collection::vec(prop::sample::select(vocab()), 1..=6)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn wide_beam_matches_exhaustive_search(rules in prop::collection::vec(rule_strategy(), 1..=3), input in sentence(), norm in any::<bool>(), edits in 1usize..4) {
            let beam = BeamConfig { beam_size: 100_000, length_norm: norm, lm_weight: 1.0, max_edits_per_sentence: edits };
            let c = random_corrector(rules, beam);
            prop_assert_eq!(c.correct(&input).unwrap(), exhaustive(&c, &input));
        }

        #[test]
        fn beam_of_one_matches_greedy(rules in prop::collection::vec(rule_strategy(), 1..=4), input in sentence(), norm in any::<bool>()) {
            let beam = BeamConfig { beam_size: 1, length_norm: norm, lm_weight: 0.7, max_edits_per_sentence: 5 };
            let c = random_corrector(rules, beam);
            prop_assert_eq!(c.correct(&input).unwrap(), greedy(&c, &input));
        }

        #[test]
        fn decoding_is_deterministic(rules in prop::collection::vec(rule_strategy(), 1..=4), input in sentence()) {
            let c = random_corrector(rules, BeamConfig::default());
            prop_assert_eq!(c.correct(&input).unwrap(), c.correct(&input).unwrap());
        }

        #[test]
        fn align_cost_is_levenshtein(a in sentence(), b in sentence()) {
            let cost: usize = align(&a, &b).iter().map(AlignOp::cost).sum();
            prop_assert_eq!(cost, metrics::distance(&a, &b));
        }

        #[test]
        fn trained_rules_are_witnessed(pairs in prop::collection::vec((sentence(), sentence()), 1..12)) {
            let c = ParallelCorpus::new(pairs.into_iter().enumerate().map(|(i, (s, t))| SentencePair::from_tokens(i, s, t)).collect());
            if let Ok(model) = extract_channel(&c, RuleExtraction::default()) {
                for r in model.rules() {
                    prop_assert!(r.count >= 2);
                    prop_assert!(r.lhs != r.rhs);
                    prop_assert!(r.count <= model.lhs_occurrences(&r.lhs));
                }
                for r in model.rules() {
                    let mass = model.identity_mass(&r.lhs) + model.rules_for(&r.lhs).iter().map(|x| x.channel_logprob.exp()).sum::<f64>();
                    prop_assert!((mass - 1.0).abs() < 1e-9);
                    prop_assert!(model.identity_mass(&r.lhs) >= -1e-12);
                }
            }
        }
    }
}
