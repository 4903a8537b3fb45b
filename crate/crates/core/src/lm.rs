//! Count-based n-gram language model and length-normalized perplexity.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tokens;

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    /// Relative frequencies; unseen contexts back off to the longest seen suffix.
    Mle,
    AddK { k: f64 },
    /// Linear interpolation with one weight per order, lowest order first.
    /// The unigram level is interpolated with a uniform distribution.
    Interpolated { lambdas: Vec<f64> },
}

impl std::str::FromStr for Smoothing {
    type Err = Error;

    /// Accepts `mle`, `add_k:0.1`, or `interpolated:0.3,0.5,0.7`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown smoothing `{s}`"));
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "mle" if arg.is_empty() => Ok(Smoothing::Mle),
            "add_k" | "addk" => Ok(Smoothing::AddK {
                k: arg.parse().map_err(|_| bad())?,
            }),
            "interpolated" => Ok(Smoothing::Interpolated {
                lambdas: arg
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Whether the end-of-sentence symbol is a predicted event. `None` picks
    /// the default: included for order >= 2, excluded for unigram models.
    pub include_end: Option<bool>,
    /// Map training tokens seen exactly once to the unknown symbol.
    pub unk_singletons: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 3,
            smoothing: Smoothing::AddK { k: 0.1 },
            include_end: None,
            unk_singletons: false,
        }
    }
}

impl LmConfig {
    pub fn new(order: usize, smoothing: Smoothing) -> Self {
        LmConfig {
            order,
            smoothing,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("lm order must be >= 1".into()));
        }
        match &self.smoothing {
            Smoothing::Mle => {}
            Smoothing::AddK { k } => {
                if !(k.is_finite() && *k > 0.0) {
                    return Err(Error::InvalidArgument(format!("add_k needs k > 0, got {k}")));
                }
            }
            Smoothing::Interpolated { lambdas } => {
                if lambdas.len() != self.order {
                    return Err(Error::InvalidArgument(format!(
                        "interpolated smoothing needs {} weights, got {}",
                        self.order,
                        lambdas.len()
                    )));
                }
                if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) || lambdas[0] >= 1.0 {
                    return Err(Error::InvalidArgument(
                        "interpolation weights must lie in [0,1], the unigram weight below 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Length-normalized perplexity of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityScore {
    pub value: f64,
    /// Number of scored events, including the end symbol when it is predicted.
    pub token_count: usize,
}

/// Anything that can score a tokenized sentence by perplexity.
pub trait PerplexityScorer: Send + Sync {
    fn perplexity(&self, tokens: &[String]) -> Result<PerplexityScore>;
}

#[derive(Debug, Clone)]
pub struct NgramLm {
    config: LmConfig,
    include_end: bool,
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    /// `ngrams[k - 1]` holds counts of k-grams.
    ngrams: Vec<HashMap<Vec<TokenId>, u64>>,
    /// `contexts[k - 1]` holds, per (k-1)-gram context, the summed k-gram counts.
    contexts: Vec<HashMap<Vec<TokenId>, u64>>,
}

impl NgramLm {
    pub fn train(sentences: &[Tokens], config: LmConfig) -> Result<Self> {
        config.validate()?;
        if sentences.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyInput("train_lm".into()));
        }
        let include_end = config.include_end.unwrap_or(config.order >= 2);

        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in sentences.iter().flatten() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
        let mut kept: Vec<&str> = freq
            .iter()
            .filter(|(_, &c)| !(config.unk_singletons && c == 1))
            .map(|(w, _)| *w)
            .filter(|w| !RESERVED.contains(w))
            .collect();
        kept.sort_unstable();

        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        words.extend(kept.into_iter().map(String::from));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();

        let mut lm = NgramLm {
            ngrams: vec![HashMap::new(); config.order],
            contexts: vec![HashMap::new(); config.order],
            include_end,
            words,
            index,
            config,
        };
        let order = lm.config.order;
        for sentence in sentences.iter().filter(|s| !s.is_empty()) {
            let ids = lm.padded_ids(sentence);
            for t in (order - 1)..ids.len() {
                for k in 1..=order {
                    let gram = &ids[t + 1 - k..=t];
                    *lm.ngrams[k - 1].entry(gram.to_vec()).or_default() += 1;
                }
            }
        }
        lm.rebuild_contexts();
        Ok(lm)
    }

    fn rebuild_contexts(&mut self) {
        for k in 0..self.config.order {
            let mut ctx: HashMap<Vec<TokenId>, u64> = HashMap::new();
            for (gram, c) in &self.ngrams[k] {
                *ctx.entry(gram[..gram.len() - 1].to_vec()).or_default() += c;
            }
            self.contexts[k] = ctx;
        }
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn includes_end(&self) -> bool {
        self.include_end
    }

    /// Size of the predicted vocabulary: known words, the unknown symbol,
    /// and the end symbol when it is predicted.
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 2 + usize::from(self.include_end)
    }

    pub fn id(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id > UNK => id,
            _ => UNK,
        }
    }

    pub fn is_known(&self, token: &str) -> bool {
        self.id(token) != UNK
    }

    /// `order - 1` begin symbols, the mapped tokens, and the end symbol if predicted.
    fn padded_ids(&self, tokens: &[String]) -> Vec<TokenId> {
        let mut ids = vec![BOS; self.config.order - 1];
        ids.extend(tokens.iter().map(|t| self.id(t)));
        if self.include_end {
            ids.push(EOS);
        }
        ids
    }

    /// Initial decoding context: `order - 1` begin symbols.
    pub fn start_context(&self) -> Vec<TokenId> {
        vec![BOS; self.config.order - 1]
    }

    fn count(&self, gram: &[TokenId]) -> u64 {
        self.ngrams[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    fn context_count(&self, ctx: &[TokenId]) -> u64 {
        self.contexts[ctx.len()].get(ctx).copied().unwrap_or(0)
    }

    /// Conditional probability of `word` given the preceding ids. Only the
    /// last `order - 1` ids of `context` are used.
    pub fn prob(&self, context: &[TokenId], word: TokenId) -> f64 {
        let n = self.config.order;
        let ctx = &context[context.len().saturating_sub(n - 1)..];
        let mut gram = Vec::with_capacity(n);
        match &self.config.smoothing {
            Smoothing::Mle => {
                // longest context suffix that was observed
                for skip in 0..=ctx.len() {
                    let c = &ctx[skip..];
                    let total = self.context_count(c);
                    if total > 0 {
                        gram.clear();
                        gram.extend_from_slice(c);
                        gram.push(word);
                        return self.count(&gram) as f64 / total as f64;
                    }
                }
                0.0
            }
            Smoothing::AddK { k } => {
                gram.extend_from_slice(ctx);
                gram.push(word);
                let v = self.vocab_size() as f64;
                (self.count(&gram) as f64 + k) / (self.context_count(ctx) as f64 + k * v)
            }
            Smoothing::Interpolated { lambdas } => {
                let mut p = 1.0 / self.vocab_size() as f64;
                for (level, lambda) in lambdas.iter().enumerate() {
                    if level > ctx.len() {
                        break;
                    }
                    let c = &ctx[ctx.len() - level..];
                    let total = self.context_count(c);
                    if total == 0 {
                        continue;
                    }
                    gram.clear();
                    gram.extend_from_slice(c);
                    gram.push(word);
                    let ml = self.count(&gram) as f64 / total as f64;
                    p = lambda * ml + (1.0 - lambda) * p;
                }
                p
            }
        }
    }

    pub fn log_prob(&self, context: &[TokenId], word: TokenId) -> f64 {
        self.prob(context, word).ln()
    }

    /// Total natural-log probability of `tokens` and the number of scored events.
    pub fn sentence_log_prob(&self, tokens: &[String]) -> (f64, usize) {
        let ids = self.padded_ids(tokens);
        let start = self.config.order - 1;
        let mut total = 0.0;
        for t in start..ids.len() {
            total += self.log_prob(&ids[..t], ids[t]);
        }
        (total, ids.len() - start)
    }

    /// Exponentiated mean negative log-probability per scored event.
    pub fn perplexity(&self, tokens: &[String]) -> Result<PerplexityScore> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let (log_prob, count) = self.sentence_log_prob(tokens);
        Ok(PerplexityScore {
            value: (-log_prob / count as f64).exp(),
            token_count: count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LmFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        NgramLm::from_file(file)
    }

    pub(crate) fn to_file(&self) -> LmFile {
        let ngrams = self
            .ngrams
            .iter()
            .map(|table| {
                let mut rows: Vec<(Vec<TokenId>, u64)> =
                    table.iter().map(|(g, c)| (g.clone(), *c)).collect();
                rows.sort_unstable();
                rows
            })
            .collect();
        LmFile {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            include_end: self.include_end,
            words: self.words[RESERVED.len()..].to_vec(),
            ngrams,
        }
    }

    pub(crate) fn from_file(file: LmFile) -> Result<Self> {
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported lm version {}", file.version)));
        }
        file.config.validate()?;
        if file.ngrams.len() != file.config.order {
            return Err(Error::Format("lm count tables do not match the order".into()));
        }
        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        words.extend(file.words);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let mut lm = NgramLm {
            contexts: vec![HashMap::new(); file.config.order],
            ngrams: file
                .ngrams
                .into_iter()
                .map(|rows| rows.into_iter().collect())
                .collect(),
            include_end: file.include_end,
            words,
            index,
            config: file.config,
        };
        lm.rebuild_contexts();
        Ok(lm)
    }
}

impl PerplexityScorer for NgramLm {
    fn perplexity(&self, tokens: &[String]) -> Result<PerplexityScore> {
        NgramLm::perplexity(self, tokens)
    }
}

/// On-disk layout of a trained model.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct LmFile {
    version: u32,
    config: LmConfig,
    include_end: bool,
    words: Vec<String>,
    ngrams: Vec<Vec<(Vec<TokenId>, u64)>>,
}

pub fn train_lm(sentences: &[Tokens], order: usize, smoothing: Smoothing) -> Result<NgramLm> {
    NgramLm::train(sentences, LmConfig::new(order, smoothing))
}
