//! Parallel corpus ingestion, tokenization, preprocessing and persistence.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tokens;

/// Characters split off the edges of whitespace-delimited chunks.
const EDGE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub source_raw: String,
    pub target_raw: String,
    pub source: Tokens,
    pub target: Tokens,
}

impl SentencePair {
    pub fn new(id: usize, source_raw: impl Into<String>, target_raw: impl Into<String>) -> Self {
        let source_raw = source_raw.into();
        let target_raw = target_raw.into();
        SentencePair {
            id,
            source: tokenize(&source_raw),
            target: tokenize(&target_raw),
            source_raw,
            target_raw,
        }
    }

    /// Builds a pair from token sequences; raw texts are the space-joined tokens.
    pub fn from_tokens(id: usize, source: Tokens, target: Tokens) -> Self {
        SentencePair {
            id,
            source_raw: source.join(" "),
            target_raw: target.join(" "),
            source,
            target,
        }
    }

    /// Returns a copy carrying `target` in place of the current target.
    pub fn with_target(&self, target: Tokens) -> Self {
        SentencePair {
            id: self.id,
            source_raw: self.source_raw.clone(),
            source: self.source.clone(),
            target_raw: target.join(" "),
            target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// `.jsonl` / `.json` select jsonl, anything else tsv.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// An ordered collection of sentence pairs with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    /// Free-text notes: where the data came from and which filters ran.
    pub provenance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    source: String,
    target: String,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            pairs,
            provenance: Vec::new(),
        }
    }

    /// Builds a corpus from raw text pairs, assigning ids by position.
    pub fn from_raw<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        ParallelCorpus::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (s, t))| SentencePair::new(i, s, t))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentencePair> {
        self.pairs.iter()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Tokens> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Tokens> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Reassigns ids to match positions.
    pub fn reindex(&mut self) {
        for (i, p) in self.pairs.iter_mut().enumerate() {
            p.id = i;
        }
    }

    pub fn load(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corpus = ParallelCorpus::parse(&text, format, path)?;
        Ok(corpus)
    }

    /// Parses corpus text; `origin` is used in error messages only.
    pub fn parse(text: &str, format: CorpusFormat, origin: &Path) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyInput(origin.display().to_string()));
        }
        let mut pairs = Vec::new();
        // a single trailing newline terminates the last record
        let body = text.strip_suffix('\n').unwrap_or(text);
        for (lineno, line) in body.split('\n').enumerate() {
            let lineno = lineno + 1;
            let (source, target) = match format {
                CorpusFormat::Tsv => {
                    let mut fields = line.split('\t');
                    match (fields.next(), fields.next(), fields.next()) {
                        (Some(s), Some(t), None) => (s.to_string(), t.to_string()),
                        _ => {
                            return Err(Error::parse(
                                origin,
                                lineno,
                                "expected exactly two tab-separated fields",
                            ))
                        }
                    }
                }
                CorpusFormat::Jsonl => {
                    let rec: JsonlRecord = serde_json::from_str(line)
                        .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
                    (rec.source, rec.target)
                }
            };
            pairs.push(SentencePair::new(pairs.len(), source, target));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyInput(origin.display().to_string()));
        }
        let mut corpus = ParallelCorpus::new(pairs);
        corpus
            .provenance
            .push(format!("loaded {} pairs from {}", corpus.len(), origin.display()));
        Ok(corpus)
    }

    pub fn write(&self, path: impl AsRef<Path>, format: CorpusFormat) -> Result<()> {
        let path = path.as_ref();
        let text = self.render(format)?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Serializes to the on-disk representation.
    pub fn render(&self, format: CorpusFormat) -> Result<String> {
        let mut text = String::new();
        for pair in &self.pairs {
            match format {
                CorpusFormat::Tsv => {
                    for raw in [&pair.source_raw, &pair.target_raw] {
                        if raw.contains(['\t', '\n', '\r']) {
                            return Err(Error::Format(format!(
                                "pair {}: text contains a tab or line break and cannot be written as tsv",
                                pair.id
                            )));
                        }
                    }
                    text.push_str(&pair.source_raw);
                    text.push('\t');
                    text.push_str(&pair.target_raw);
                }
                CorpusFormat::Jsonl => {
                    let rec = JsonlRecord {
                        source: pair.source_raw.clone(),
                        target: pair.target_raw.clone(),
                    };
                    text.push_str(&serde_json::to_string(&rec)?);
                }
            }
            text.push('\n');
        }
        Ok(text)
    }
}

/// Rule-based tokenizer: whitespace split, then leading and trailing
/// punctuation peeled off each chunk one character at a time.
pub fn tokenize(text: &str) -> Tokens {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        while start < chars.len() && EDGE_PUNCT.contains(&chars[start]) {
            tokens.push(chars[start].to_string());
            start += 1;
        }
        let mut end = chars.len();
        while end > start && EDGE_PUNCT.contains(&chars[end - 1]) {
            end -= 1;
        }
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessOptions {
    pub max_len: usize,
    pub drop_identical: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            max_len: 80,
            drop_identical: true,
        }
    }
}

/// Drops identical pairs, pairs whose sides BOTH exceed `max_len` tokens,
/// and pairs with an empty side; then reindexes densely.
///
/// Lengths are counted in word tokens, before any subword splitting.
pub fn preprocess(corpus: &ParallelCorpus, options: PreprocessOptions) -> ParallelCorpus {
    let mut identical = 0usize;
    let mut too_long = 0usize;
    let mut empty = 0usize;
    let mut pairs = Vec::with_capacity(corpus.len());
    for pair in &corpus.pairs {
        if pair.source.is_empty() || pair.target.is_empty() {
            empty += 1;
        } else if options.drop_identical && pair.source == pair.target {
            identical += 1;
        } else if pair.source.len() > options.max_len && pair.target.len() > options.max_len {
            too_long += 1;
        } else {
            pairs.push(pair.clone());
        }
    }
    let mut out = ParallelCorpus {
        pairs,
        provenance: corpus.provenance.clone(),
    };
    out.reindex();
    out.provenance.push(format!(
        "preprocess max_len={} drop_identical={}: removed identical={} both_too_long={} empty={}, kept {}",
        options.max_len,
        options.drop_identical,
        identical,
        too_long,
        empty,
        out.len()
    ));
    out
}

/// Reads one raw sentence per line, tokenized. Blank lines are skipped.
pub fn load_sentences(path: impl AsRef<Path>) -> Result<Vec<Tokens>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect())
}

/// Reads one sentence per line keeping blank lines, for files aligned by line number.
pub fn load_aligned_sentences(path: impl AsRef<Path>) -> Result<Vec<Tokens>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn write_sentences<'a>(
    path: impl AsRef<Path>,
    sentences: impl IntoIterator<Item = &'a Tokens>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
