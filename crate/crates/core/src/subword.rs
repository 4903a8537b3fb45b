//! Byte-pair-encoding subword segmentation.
//!
//! Words are split into characters with an end-of-word marker glued to the
//! final character. Learning repeatedly merges the most frequent adjacent
//! symbol pair; application replays the learned merges in order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tokens;

pub const END_OF_WORD: &str = "</w>";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
    pub end_of_word_marker: String,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, m)| (m, i))
            .collect();
        BpeModel {
            merges,
            end_of_word_marker: END_OF_WORD.to_string(),
            ranks,
        }
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Keeps only the first `k` merges.
    pub fn truncated(&self, k: usize) -> Self {
        BpeModel::new(self.merges.iter().take(k).cloned().collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn render(&self) -> Result<String> {
        let mut out = format!("#version: {FORMAT_VERSION} num_merges: {}\n", self.merges.len());
        for (l, r) in &self.merges {
            if l.contains(char::is_whitespace) || r.contains(char::is_whitespace) {
                return Err(Error::Format(format!(
                    "merge ({l:?}, {r:?}) contains whitespace and cannot be saved"
                )));
            }
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::EmptyInput(origin.display().to_string()))?;
        let declared = parse_header(header).ok_or_else(|| {
            Error::parse(origin, 1, format!("bad header `{header}`, expected `#version: {FORMAT_VERSION} num_merges: N`"))
        })?;
        let mut merges = Vec::with_capacity(declared);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::parse(origin, i + 2, "expected `left right`")),
            }
        }
        if merges.len() != declared {
            return Err(Error::parse(
                origin,
                1,
                format!("header declares {declared} merges, found {}", merges.len()),
            ));
        }
        Ok(BpeModel::new(merges))
    }

    /// Splits every token into subwords.
    pub fn apply(&self, tokens: &[String]) -> Tokens {
        let mut out = Vec::new();
        for token in tokens {
            out.extend(self.apply_word(token));
        }
        out
    }

    /// Replays merges in learned order on a single word. Merges whose rank is
    /// below the last applied one are never revisited.
    pub fn apply_word(&self, word: &str) -> Tokens {
        let mut symbols = split_word(word);
        let mut next_rank = 0usize;
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .filter(|&r| r >= next_rank)
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
            next_rank = rank + 1;
        }
        symbols
    }
}

fn parse_header(line: &str) -> Option<usize> {
    let rest = line.strip_prefix("#version: ")?;
    let (version, rest) = rest.split_once(' ')?;
    if version.parse::<u32>().ok()? != FORMAT_VERSION {
        return None;
    }
    rest.strip_prefix("num_merges: ")?.trim().parse().ok()
}

/// Characters of `word`, with the end marker glued to the last one.
/// An empty word becomes the bare marker.
fn split_word(word: &str) -> Tokens {
    let mut symbols: Tokens = word.chars().map(String::from).collect();
    match symbols.last_mut() {
        Some(last) => last.push_str(END_OF_WORD),
        None => symbols.push(END_OF_WORD.to_string()),
    }
    symbols
}

/// Merges non-overlapping occurrences of `(left, right)`, scanning left to right.
fn merge_pair(symbols: &[String], left: &str, right: &str) -> Tokens {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges from the word frequencies of `sentences`.
///
/// Every adjacent position inside a word counts towards its pair. The most
/// frequent pair is merged next, ties going to the lexicographically smallest
/// pair. Learning stops early once no pair occurs at least twice.
pub fn learn_bpe(sentences: &[Tokens], num_merges: usize) -> Result<BpeModel> {
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for token in sentences.iter().flatten() {
        *word_freq.entry(token.as_str()).or_default() += 1;
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyInput("learn_bpe".into()));
    }
    let mut words: Vec<(&str, u64)> = word_freq.into_iter().collect();
    words.sort_unstable();
    let mut vocab: Vec<(Tokens, u64)> = words.into_iter().map(|(w, f)| (split_word(w), f)).collect();

    let mut pair_counts: HashMap<(String, String), i64> = HashMap::new();
    let mut pair_words: HashMap<(String, String), BTreeSet<usize>> = HashMap::new();
    for (idx, (symbols, freq)) in vocab.iter().enumerate() {
        for w in symbols.windows(2) {
            let key = (w[0].clone(), w[1].clone());
            *pair_counts.entry(key.clone()).or_default() += *freq as i64;
            pair_words.entry(key).or_default().insert(idx);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then_with(|| kb.cmp(ka)))
            .map(|(k, _)| k.clone());
        let Some(pair) = best else { break };
        let affected = pair_words.remove(&pair).unwrap_or_default();
        for idx in affected {
            let (symbols, freq) = &mut vocab[idx];
            let freq = *freq as i64;
            for w in symbols.windows(2) {
                let key = (w[0].clone(), w[1].clone());
                if let Some(c) = pair_counts.get_mut(&key) {
                    *c -= freq;
                }
            }
            *symbols = merge_pair(symbols, &pair.0, &pair.1);
            for w in symbols.windows(2) {
                let key = (w[0].clone(), w[1].clone());
                *pair_counts.entry(key.clone()).or_default() += freq;
                if key != pair {
                    pair_words.entry(key).or_default().insert(idx);
                }
            }
        }
        pair_counts.retain(|_, c| *c > 0);
        pair_counts.remove(&pair);
        merges.push(pair);
    }
    Ok(BpeModel::new(merges))
}

/// Inverse of [`BpeModel::apply`]: subwords are concatenated until one ends
/// with the end-of-word marker.
pub fn decode_bpe(subwords: &[String]) -> Result<Tokens> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for (i, piece) in subwords.iter().enumerate() {
        let (body, closes) = match piece.strip_suffix(END_OF_WORD) {
            Some(body) => (body, true),
            None => (piece.as_str(), false),
        };
        if body.contains(END_OF_WORD) {
            return Err(Error::Format(format!(
                "subword {i} `{piece}` has the end-of-word marker in a non-final position"
            )));
        }
        current.push_str(body);
        open = true;
        if closes {
            out.push(std::mem::take(&mut current));
            open = false;
        }
    }
    if open {
        return Err(Error::Format(
            "subword sequence ends without an end-of-word marker".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sents(words: &[&str]) -> Vec<Tokens> {
        vec![words.iter().map(|w| w.to_string()).collect()]
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn first_merge_counts_every_adjacent_position() {
        // "aaab" x3: pairs (a,a),(a,a),(a,b</w>) per word -> (a,a) has count 6
        let model = learn_bpe(&sents(&["aaab", "aaab", "aaab"]), 1).unwrap();
        assert_eq!(model.merges, vec![pair("a", "a")]);
        assert_eq!(model.apply_word("aaab"), vec!["aa", "a", "b</w>"]);
    }

    #[test]
    fn zero_merges_is_character_split() {
        let model = learn_bpe(&sents(&["ab"]), 0).unwrap();
        assert!(model.merges.is_empty());
        assert_eq!(model.apply_word("ab"), vec!["a", "b</w>"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" x2 and "ba" x2: (a,b</w>) and (b,a</w>) both 2; (a,b</w>) < (b,a</w>)
        let model = learn_bpe(&sents(&["ab", "ab", "ba", "ba"]), 1).unwrap();
        assert_eq!(model.merges, vec![pair("a", "b</w>")]);
        // bare pairs: "abx","bax" -> (a,b) and (b,a) tie at 2 each, plus (b,x</w>) / (a,x</w>)
        let model = learn_bpe(&sents(&["abx", "abx", "bax", "bax"]), 1).unwrap();
        assert_eq!(model.merges, vec![pair("a", "b")]);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let model = learn_bpe(&sents(&["xyz"]), 10).unwrap();
        assert!(model.merges.is_empty());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(learn_bpe(&[], 10).is_err());
        assert!(learn_bpe(&[vec![]], 10).is_err());
    }

    #[test]
    fn learning_matches_naive_recount() {
        let corpus = sents(&["lower", "lowest", "newer", "wider", "new", "low", "low", "newest"]);
        let fast = learn_bpe(&corpus, 30).unwrap();
        assert_eq!(fast.merges, naive_learn(&corpus, 30));
    }

    /// Recounts all pairs from scratch every iteration.
    fn naive_learn(sentences: &[Tokens], num_merges: usize) -> Vec<(String, String)> {
        let mut vocab: Vec<(Tokens, u64)> = Vec::new();
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in sentences.iter().flatten() {
            *freq.entry(t).or_default() += 1;
        }
        for (w, f) in freq {
            vocab.push((split_word(w), f));
        }
        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut counts: HashMap<(String, String), u64> = HashMap::new();
            for (s, f) in &vocab {
                for w in s.windows(2) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_default() += f;
                }
            }
            let best = counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then_with(|| kb.cmp(ka)));
            let Some((p, _)) = best else { break };
            for (s, _) in vocab.iter_mut() {
                *s = merge_pair(s, &p.0, &p.1);
            }
            merges.push(p);
        }
        merges
    }

    #[test]
    fn unseen_characters_pass_through() {
        let model = learn_bpe(&sents(&["abab", "abab"]), 5).unwrap();
        assert_eq!(model.apply_word("zé"), vec!["z", "é</w>"]);
    }

    #[test]
    fn decode_examples() {
        assert!(decode_bpe(&[]).unwrap().is_empty());
        assert_eq!(decode_bpe(&["cat</w>".into()]).unwrap(), vec!["cat"]);
        assert!(decode_bpe(&["c</w>at</w>".into()]).is_err());
        assert!(decode_bpe(&["ca".into()]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let model = learn_bpe(&sents(&["lower", "lowest", "newer", "newest"]), 10).unwrap();
        let text = model.render().unwrap();
        assert!(text.starts_with(&format!("#version: 1 num_merges: {}\n", model.num_merges())));
        assert_eq!(BpeModel::parse(&text, Path::new("m")).unwrap(), model);
        assert!(BpeModel::parse("#version: 1 num_merges: 2\na b\n", Path::new("m")).is_err());
        assert!(BpeModel::parse("nonsense\n", Path::new("m")).is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        "[^\\s<]{1,8}"
    }

    proptest! {
        #[test]
        fn decode_inverts_apply(words in prop::collection::vec(word(), 0..6), train in prop::collection::vec(word(), 1..20), k in 0usize..40) {
            let model = learn_bpe(&[train], k).unwrap();
            let pieces = model.apply(&words);
            prop_assert_eq!(decode_bpe(&pieces).unwrap(), words);
        }

        #[test]
        fn learning_is_deterministic_and_prefix_stable(train in prop::collection::vec("[abc]{1,6}", 1..30), k in 1usize..20) {
            let a = learn_bpe(&[train.clone()], k).unwrap();
            let b = learn_bpe(&[train.clone()], k).unwrap();
            prop_assert_eq!(&a, &b);
            let longer = learn_bpe(&[train], k + 1).unwrap();
            prop_assert!(longer.merges.len() <= a.merges.len() + 1);
            prop_assert_eq!(&longer.merges[..a.merges.len()], &a.merges[..]);
        }
    }
}
