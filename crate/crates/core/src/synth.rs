//! Synthetic parallel corpora with known gold targets.
//!
//! Clean sentences come from a template grammar. Learner errors are injected
//! into a copy to form the source side, and annotation noise is injected into
//! the target side: type 1 replaces a correct edit with a different wrong
//! one, type 2 leaves a learner error uncorrected.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_aligned_sentences, write_sentences, CorpusFormat, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::metrics::{self, AlignOp, EditSet};
use crate::Tokens;

const DEFAULT_GRAMMAR: &str = include_str!("default_grammar.txt");

// ---------------------------------------------------------------------------
// grammar

#[derive(Debug, Clone, PartialEq)]
enum Part {
    Word(String),
    Slot(usize),
}

/// Templates with slot fillers. Realizations are numbered template by
/// template; within a template, the slot choices form a mixed-radix number.
#[derive(Debug, Clone)]
pub struct Grammar {
    templates: Vec<Vec<Part>>,
    fillers: Vec<Vec<Tokens>>,
    sizes: Vec<u64>,
}

impl Grammar {
    pub fn builtin() -> Self {
        Grammar::parse(DEFAULT_GRAMMAR).expect("built-in grammar parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grammar::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut slot_ids: HashMap<String, usize> = HashMap::new();
        let mut fillers: Vec<Vec<Tokens>> = Vec::new();
        let mut raw_templates = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(t) = line.strip_prefix("template:") {
                raw_templates.push((n + 1, t.trim().to_string()));
            } else if let Some((name, alts)) = line.split_once('=') {
                let name = name.trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(Error::Format(format!("line {}: bad slot name `{name}`", n + 1)));
                }
                let alts: Vec<Tokens> = alts
                    .split('|')
                    .map(|a| a.split_whitespace().map(String::from).collect::<Tokens>())
                    .filter(|a| !a.is_empty())
                    .collect();
                if alts.is_empty() {
                    return Err(Error::Format(format!("line {}: slot `{name}` has no fillers", n + 1)));
                }
                let id = *slot_ids.entry(name.to_string()).or_insert_with(|| {
                    fillers.push(Vec::new());
                    fillers.len() - 1
                });
                fillers[id] = alts;
            } else {
                return Err(Error::Format(format!("line {}: expected `template:` or `NAME = ...`", n + 1)));
            }
        }
        if raw_templates.is_empty() {
            return Err(Error::Format("grammar defines no templates".into()));
        }
        let mut templates = Vec::new();
        let mut sizes = Vec::new();
        for (line, t) in raw_templates {
            let mut parts = Vec::new();
            let mut size: u64 = 1;
            for word in t.split_whitespace() {
                match word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                    Some(name) => {
                        let id = *slot_ids
                            .get(name)
                            .ok_or_else(|| Error::Format(format!("line {line}: undefined slot `{name}`")))?;
                        size = size
                            .checked_mul(fillers[id].len() as u64)
                            .ok_or_else(|| Error::Format(format!("line {line}: too many realizations")))?;
                        parts.push(Part::Slot(id));
                    }
                    None => parts.push(Part::Word(word.to_string())),
                }
            }
            if parts.is_empty() {
                return Err(Error::Format(format!("line {line}: empty template")));
            }
            templates.push(parts);
            sizes.push(size);
        }
        sizes
            .iter()
            .try_fold(0u64, |acc, s| acc.checked_add(*s))
            .ok_or_else(|| Error::Format("too many realizations".into()))?;
        Ok(Grammar {
            templates,
            fillers,
            sizes,
        })
    }

    pub fn num_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn num_realizations(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// The realization with the given index, `0 <= index < num_realizations()`.
    pub fn realization(&self, mut index: u64) -> Tokens {
        let mut t = 0;
        while index >= self.sizes[t] {
            index -= self.sizes[t];
            t += 1;
        }
        let mut out = Vec::new();
        for part in &self.templates[t] {
            match part {
                Part::Word(w) => out.push(w.clone()),
                Part::Slot(id) => {
                    let alts = &self.fillers[*id];
                    let k = alts.len() as u64;
                    out.extend(alts[(index % k) as usize].iter().cloned());
                    index /= k;
                }
            }
        }
        out
    }

    /// Whether `tokens` is a realization of some template.
    pub fn generates(&self, tokens: &[String]) -> bool {
        self.templates.iter().any(|t| self.matches(t, tokens))
    }

    fn matches(&self, parts: &[Part], tokens: &[String]) -> bool {
        match parts.split_first() {
            None => tokens.is_empty(),
            Some((Part::Word(w), rest)) => tokens.first() == Some(w) && self.matches(rest, &tokens[1..]),
            Some((Part::Slot(id), rest)) => self.fillers[*id]
                .iter()
                .any(|f| tokens.starts_with(f) && self.matches(rest, &tokens[f.len()..])),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `n` grammatical sentences. Realization `(offset + i * stride) mod R` is
/// emitted at position `i`, with offset and a stride coprime to `R` drawn
/// from `seed`, so the output cycles through every realization before
/// repeating.
pub fn gen_clean(n: usize, grammar: &Grammar, seed: u64) -> Vec<Tokens> {
    let total = grammar.num_realizations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let offset = rng.gen_range(0..total);
    let mut stride = if total > 1 { rng.gen_range(1..total) } else { 1 };
    while gcd(stride, total) != 1 {
        stride += 1;
        if stride >= total {
            stride = 1;
        }
    }
    let (total, offset, stride) = (total as u128, offset as u128, stride as u128);
    (0..n as u128)
        .map(|i| grammar.realization(((offset + (i % total) * stride) % total) as u64))
        .collect()
}

// ---------------------------------------------------------------------------
// noise specification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorOp {
    ArticleDrop,
    PrepositionConfusion,
    AgreementError,
    NounNumber,
    SpellingPerturbation,
}

impl ErrorOp {
    pub const ALL: [ErrorOp; 5] = [
        ErrorOp::ArticleDrop,
        ErrorOp::PrepositionConfusion,
        ErrorOp::AgreementError,
        ErrorOp::NounNumber,
        ErrorOp::SpellingPerturbation,
    ];
}

/// Relative weights of the two annotation-noise types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMix {
    /// Errors inappropriately edited.
    pub inappropriate: f64,
    /// Errors left uncorrected.
    pub uncorrected: f64,
}

impl Default for TypeMix {
    fn default() -> Self {
        TypeMix {
            inappropriate: 0.3,
            uncorrected: 0.7,
        }
    }
}

impl std::str::FromStr for TypeMix {
    type Err = Error;

    /// `w1:w2`, e.g. `0.3:0.7`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("type mix must look like `0.3:0.7`, got `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let mix = TypeMix {
            inappropriate: a.trim().parse().map_err(|_| bad())?,
            uncorrected: b.trim().parse().map_err(|_| bad())?,
        };
        mix.normalized()
    }
}

impl TypeMix {
    pub fn normalized(self) -> Result<Self> {
        let sum = self.inappropriate + self.uncorrected;
        if !(self.inappropriate >= 0.0 && self.uncorrected >= 0.0 && sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "type mix weights must be non-negative with a positive sum, got {}:{}",
                self.inappropriate, self.uncorrected
            )));
        }
        Ok(TypeMix {
            inappropriate: self.inappropriate / sum,
            uncorrected: self.uncorrected / sum,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub annotation_noise_rate: f64,
    pub type_mix: TypeMix,
    pub learner_error_ops: Vec<(ErrorOp, f64)>,
    pub rng_seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            annotation_noise_rate: 0.3,
            type_mix: TypeMix::default(),
            learner_error_ops: ErrorOp::ALL.iter().map(|&op| (op, 1.0)).collect(),
            rng_seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(rate: f64, type_mix: TypeMix, seed: u64) -> Result<Self> {
        NoiseSpec {
            annotation_noise_rate: rate,
            type_mix,
            rng_seed: seed,
            ..Default::default()
        }
        .validated()
    }

    /// Checks ranges and normalizes all weights.
    pub fn validated(mut self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.annotation_noise_rate) {
            return Err(Error::InvalidArgument(format!(
                "noise rate must be in [0, 1], got {}",
                self.annotation_noise_rate
            )));
        }
        self.type_mix = self.type_mix.normalized()?;
        let sum: f64 = self.learner_error_ops.iter().map(|(_, w)| w).sum();
        if self.learner_error_ops.iter().any(|(_, w)| !(*w >= 0.0)) || !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidArgument(
                "learner error weights must be non-negative with a positive sum".into(),
            ));
        }
        for (_, w) in &mut self.learner_error_ops {
            *w /= sum;
        }
        Ok(self)
    }

    fn weight(&self, op: ErrorOp) -> f64 {
        self.learner_error_ops
            .iter()
            .filter(|(o, _)| *o == op)
            .map(|(_, w)| w)
            .sum()
    }
}

// ---------------------------------------------------------------------------
// confusion tables

/// Verbs that learners follow with a superfluous preposition. The first
/// preposition is the learner realization; the others are alternative wrong
/// realizations used for inappropriate edits.
const VERB_PREPOSITIONS: &[(&str, &[&str])] = &[
    ("discuss", &["about", "of", "in"]),
    ("discussed", &["about", "of", "in"]),
    ("enter", &["in", "to"]),
    ("entered", &["in", "to"]),
];

const SWAP_PREPOSITIONS: &[&str] = &["in", "on", "at"];

const ARTICLES: &[&str] = &["the", "a", "an"];

const AGREEMENT: &[(&str, &str)] = &[
    ("goes", "go"),
    ("walks", "walk"),
    ("drives", "drive"),
    ("runs", "run"),
    ("wants", "want"),
    ("needs", "need"),
    ("likes", "like"),
    ("hopes", "hope"),
    ("has", "have"),
    ("is", "are"),
    ("was", "were"),
];

const NOUN_NUMBER: &[(&str, &str)] = &[
    ("plan", "plans"),
    ("problem", "problems"),
    ("idea", "ideas"),
    ("report", "reports"),
    ("project", "projects"),
    ("budget", "budgets"),
    ("schedule", "schedules"),
    ("proposal", "proposals"),
    ("contract", "contracts"),
    ("room", "rooms"),
    ("office", "offices"),
    ("building", "buildings"),
    ("library", "libraries"),
    ("station", "stations"),
    ("museum", "museums"),
    ("meeting", "meetings"),
    ("party", "parties"),
];

fn verb_prepositions(word: &str) -> Option<&'static [&'static str]> {
    VERB_PREPOSITIONS.iter().find(|(v, _)| *v == word).map(|(_, p)| *p)
}

fn flip(table: &'static [(&'static str, &'static str)], word: &str) -> Option<&'static str> {
    table.iter().find_map(|&(a, b)| {
        if a == word {
            Some(b)
        } else if b == word {
            Some(a)
        } else {
            None
        }
    })
}

fn transposable(word: &str) -> Vec<usize> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 4 || !chars.iter().all(|c| c.is_ascii_lowercase()) {
        return Vec::new();
    }
    (0..chars.len() - 1).filter(|&j| chars[j] != chars[j + 1]).collect()
}

// ---------------------------------------------------------------------------
// learner errors

/// A sentence after learner-error injection.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedErrors {
    pub tokens: Tokens,
    pub ops: Vec<ErrorOp>,
}

impl InjectedErrors {
    /// No operation was applicable; the sentence is unchanged.
    pub fn is_flagged(&self) -> bool {
        self.ops.is_empty()
    }
}

struct Draft {
    tokens: Tokens,
    touched: Vec<bool>,
}

impl Draft {
    fn new(tokens: &[String]) -> Self {
        Draft {
            tokens: tokens.to_vec(),
            touched: vec![false; tokens.len()],
        }
    }

    fn free(&self, i: usize) -> bool {
        !self.touched[i]
    }

    /// Positions where `op` can apply.
    fn sites(&self, op: ErrorOp) -> Vec<usize> {
        let t = &self.tokens;
        (0..t.len())
            .filter(|&i| self.free(i))
            .filter(|&i| match op {
                ErrorOp::ArticleDrop => ARTICLES.contains(&t[i].as_str()) && t.len() > 1,
                ErrorOp::PrepositionConfusion => {
                    let next_free = i + 1 >= t.len() || self.free(i + 1);
                    (verb_prepositions(&t[i]).is_some() && next_free)
                        || SWAP_PREPOSITIONS.contains(&t[i].as_str())
                }
                ErrorOp::AgreementError => flip(AGREEMENT, &t[i]).is_some(),
                ErrorOp::NounNumber => flip(NOUN_NUMBER, &t[i]).is_some(),
                ErrorOp::SpellingPerturbation => !transposable(&t[i]).is_empty(),
            })
            .collect()
    }

    fn mark(&mut self, i: usize) {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(self.tokens.len() - 1);
        for j in lo..=hi {
            self.touched[j] = true;
        }
    }

    fn apply(&mut self, op: ErrorOp, i: usize, rng: &mut impl Rng) {
        match op {
            ErrorOp::ArticleDrop => {
                self.tokens.remove(i);
                self.touched.remove(i);
                if i < self.tokens.len() {
                    self.mark(i);
                }
                if i > 0 {
                    self.mark(i - 1);
                }
            }
            ErrorOp::PrepositionConfusion => {
                if let Some(preps) = verb_prepositions(&self.tokens[i]) {
                    self.tokens.insert(i + 1, preps[0].to_string());
                    self.touched.insert(i + 1, true);
                    self.mark(i);
                    if i + 2 < self.tokens.len() {
                        self.mark(i + 2);
                    }
                } else {
                    let others: Vec<&&str> = SWAP_PREPOSITIONS.iter().filter(|p| **p != self.tokens[i]).collect();
                    self.tokens[i] = others.choose(rng).expect("alternatives").to_string();
                    self.mark(i);
                }
            }
            ErrorOp::AgreementError => {
                self.tokens[i] = flip(AGREEMENT, &self.tokens[i]).expect("site").to_string();
                self.mark(i);
            }
            ErrorOp::NounNumber => {
                self.tokens[i] = flip(NOUN_NUMBER, &self.tokens[i]).expect("site").to_string();
                self.mark(i);
            }
            ErrorOp::SpellingPerturbation => {
                let j = *transposable(&self.tokens[i]).choose(rng).expect("site");
                let mut chars: Vec<char> = self.tokens[i].chars().collect();
                chars.swap(j, j + 1);
                self.tokens[i] = chars.into_iter().collect();
                self.mark(i);
            }
        }
    }

    /// Applies one weighted-random applicable operation, if any.
    fn step(&mut self, spec: &NoiseSpec, rng: &mut impl Rng) -> Option<ErrorOp> {
        let candidates: Vec<(ErrorOp, f64, Vec<usize>)> = ErrorOp::ALL
            .iter()
            .map(|&op| (op, spec.weight(op), self.sites(op)))
            .filter(|(_, w, sites)| *w > 0.0 && !sites.is_empty())
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let dist = WeightedIndex::new(candidates.iter().map(|(_, w, _)| *w)).expect("positive weights");
        let (op, _, sites) = &candidates[dist.sample(rng)];
        let site = *sites.choose(rng).expect("non-empty");
        self.apply(*op, site, rng);
        Some(*op)
    }
}

/// Applies one to three learner-error operations at distinct sites.
pub fn inject_learner_errors(sentence: &[String], spec: &NoiseSpec, rng: &mut impl Rng) -> InjectedErrors {
    let wanted = rng.gen_range(1..=3);
    let mut draft = Draft::new(sentence);
    let mut ops = Vec::new();
    for _ in 0..wanted {
        match draft.step(spec, rng) {
            Some(op) => ops.push(op),
            None => break,
        }
    }
    InjectedErrors {
        tokens: draft.tokens,
        ops,
    }
}

// ---------------------------------------------------------------------------
// annotation noise

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLabel {
    Clean,
    /// An error was inappropriately edited.
    Type1,
    /// An error was left uncorrected.
    Type2,
}

impl NoiseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseLabel::Clean => "clean",
            NoiseLabel::Type1 => "type1",
            NoiseLabel::Type2 => "type2",
        }
    }
}

impl std::str::FromStr for NoiseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(NoiseLabel::Clean),
            "type1" => Ok(NoiseLabel::Type1),
            "type2" => Ok(NoiseLabel::Type2),
            other => Err(Error::Format(format!("unknown noise label `{other}`"))),
        }
    }
}

/// Leaves one learner error (source-to-gold edit) uncorrected.
fn leave_uncorrected(gold: &[String], source: &[String], rng: &mut impl Rng) -> Option<Tokens> {
    let edits = metrics::extract_edits(source, gold);
    if edits.is_empty() {
        return None;
    }
    let skip = rng.gen_range(0..edits.len());
    let kept = EditSet {
        edits: edits
            .edits
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, e)| e)
            .collect(),
    };
    Some(metrics::apply_edits(source, &kept))
}

/// Replaces a correct edit with a different wrong realization from the
/// confusion tables, or makes a fresh wrong edit when no site has one.
fn edit_inappropriately(
    gold: &[String],
    source: &[String],
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> Option<Tokens> {
    let (_, script) = metrics::levenshtein(source, gold);
    let mut options: Vec<Tokens> = Vec::new();
    let mut last_tgt: Option<usize> = None;
    for op in &script {
        match *op {
            AlignOp::Equal { tgt, .. } => last_tgt = Some(tgt),
            AlignOp::Delete { src } => {
                // learner wrote `verb prep`; gold dropped the preposition
                if let (Some(t), true) = (last_tgt, src > 0) {
                    if let Some(preps) = verb_prepositions(&gold[t]) {
                        if source[src - 1] == gold[t] && source[src] == preps[0] {
                            for alt in &preps[1..] {
                                let mut out = gold.to_vec();
                                out.insert(t + 1, alt.to_string());
                                options.push(out);
                            }
                        }
                    }
                }
            }
            AlignOp::Substitute { src, tgt } => {
                let (s, g) = (source[src].as_str(), gold[tgt].as_str());
                if SWAP_PREPOSITIONS.contains(&s) && SWAP_PREPOSITIONS.contains(&g) {
                    for alt in SWAP_PREPOSITIONS.iter().filter(|p| **p != s && **p != g) {
                        let mut out = gold.to_vec();
                        out[tgt] = alt.to_string();
                        options.push(out);
                    }
                }
                last_tgt = Some(tgt);
            }
            AlignOp::Insert { tgt } => last_tgt = Some(tgt),
        }
    }
    if let Some(choice) = options.choose(rng) {
        return Some(choice.clone());
    }
    let mut draft = Draft::new(gold);
    draft.step(spec, rng)?;
    (draft.tokens != source).then_some(draft.tokens)
}

/// Draws the target side for one pair. With probability `p` the target is
/// noisy, of the type chosen by the type mix; when that type has no site the
/// other type is tried before falling back to the clean gold target.
pub fn inject_annotation_noise(
    gold: &[String],
    source: &[String],
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> (Tokens, NoiseLabel) {
    if !(rng.gen::<f64>() < spec.annotation_noise_rate) {
        return (gold.to_vec(), NoiseLabel::Clean);
    }
    let type2_first = rng.gen::<f64>() < spec.type_mix.uncorrected;
    let try_type = |label: NoiseLabel, rng: &mut dyn rand::RngCore| -> Option<Tokens> {
        let mut rng = rng;
        match label {
            NoiseLabel::Type2 => leave_uncorrected(gold, source, &mut rng),
            _ => edit_inappropriately(gold, source, spec, &mut rng),
        }
    };
    let order = if type2_first {
        [NoiseLabel::Type2, NoiseLabel::Type1]
    } else {
        [NoiseLabel::Type1, NoiseLabel::Type2]
    };
    for label in order {
        if let Some(t) = try_type(label, rng) {
            if t != gold {
                return (t, label);
            }
        }
    }
    (gold.to_vec(), NoiseLabel::Clean)
}

// ---------------------------------------------------------------------------
// corpus assembly

/// Per-pair generator: the noise seed selects the key, the pair id the stream.
pub fn pair_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub noisy: ParallelCorpus,
    pub gold_targets: Vec<Tokens>,
    pub noise_labels: Vec<NoiseLabel>,
    /// Ids whose source received no learner error.
    pub flagged: Vec<usize>,
}

impl SynthCorpus {
    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }

    pub fn noise_fraction(&self) -> f64 {
        if self.noise_labels.is_empty() {
            return 0.0;
        }
        let noisy = self.noise_labels.iter().filter(|l| **l != NoiseLabel::Clean).count();
        noisy as f64 / self.noise_labels.len() as f64
    }

    /// Writes `noisy.tsv`, `gold.txt` and `labels.tsv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.noisy.write(dir.join("noisy.tsv"), CorpusFormat::Tsv)?;
        write_sentences(dir.join("gold.txt"), self.gold_targets.iter())?;
        let labels: String = self
            .noisy
            .iter()
            .zip(&self.noise_labels)
            .map(|(p, l)| format!("{}\t{}\n", p.id, l.as_str()))
            .collect();
        let path = dir.join("labels.tsv");
        fs::write(&path, labels).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let noisy = ParallelCorpus::load(dir.join("noisy.tsv"), CorpusFormat::Tsv)?;
        let gold_targets = load_aligned_sentences(dir.join("gold.txt"))?;
        let path = dir.join("labels.tsv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let noise_labels = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let label = line
                    .split_once('\t')
                    .map(|(_, l)| l)
                    .ok_or_else(|| Error::parse(&path, i + 1, "expected `id<TAB>label`"))?;
                label.parse().map_err(|e: Error| Error::parse(&path, i + 1, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if gold_targets.len() != noisy.len() || noise_labels.len() != noisy.len() {
            return Err(Error::Format(format!(
                "{}: corpus, gold and labels differ in size ({}, {}, {})",
                dir.display(),
                noisy.len(),
                gold_targets.len(),
                noise_labels.len()
            )));
        }
        Ok(SynthCorpus {
            noisy,
            gold_targets,
            noise_labels,
            flagged: Vec::new(),
        })
    }
}

/// Generates `n` gold sentences, derives a learner source for each and
/// draws its annotated target.
pub fn build_synth_corpus(n: usize, spec: &NoiseSpec, grammar: &Grammar) -> Result<SynthCorpus> {
    let spec = spec.clone().validated()?;
    let gold = gen_clean(n, grammar, spec.rng_seed);
    let built: Vec<(SentencePair, NoiseLabel, bool)> = gold
        .par_iter()
        .enumerate()
        .map(|(id, g)| {
            let mut rng = pair_rng(spec.rng_seed, id);
            let learner = inject_learner_errors(g, &spec, &mut rng);
            let (target, label) = inject_annotation_noise(g, &learner.tokens, &spec, &mut rng);
            let flagged = learner.is_flagged();
            (SentencePair::from_tokens(id, learner.tokens, target), label, flagged)
        })
        .collect();
    let flagged = built.iter().filter(|b| b.2).map(|b| b.0.id).collect();
    let noise_labels = built.iter().map(|b| b.1).collect();
    let mut noisy = ParallelCorpus::new(built.into_iter().map(|b| b.0).collect());
    noisy.provenance.push(format!(
        "synth n={n} seed={} noise_rate={} type_mix={}:{}",
        spec.rng_seed, spec.annotation_noise_rate, spec.type_mix.inappropriate, spec.type_mix.uncorrected
    ));
    Ok(SynthCorpus {
        noisy,
        gold_targets: gold,
        noise_labels,
        flagged,
    })
}
