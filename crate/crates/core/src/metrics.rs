//! Word-level Levenshtein alignment, corpus word edit rate and edit-level
//! precision / recall / F-beta.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tokens;

/// One step of an alignment between a source and a target sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlignOp {
    Equal { src: usize, tgt: usize },
    Substitute { src: usize, tgt: usize },
    Delete { src: usize },
    Insert { tgt: usize },
}

impl AlignOp {
    pub fn cost(&self) -> usize {
        match self {
            AlignOp::Equal { .. } => 0,
            _ => 1,
        }
    }

    pub fn is_equal(&self) -> bool {
        matches!(self, AlignOp::Equal { .. })
    }
}

/// Unit-cost edit distance with a minimal-cost script.
///
/// The script is traced left to right over a suffix table; at every cell the
/// first optimal option in the order equal, substitute, delete, insert wins.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> (usize, Vec<AlignOp>) {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    // suffix[i * width + j] = distance(a[i..], b[j..])
    let mut suffix = vec![0usize; (n + 1) * width];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            let cell = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = suffix[(i + 1) * width + j + 1] + usize::from(a[i] != b[j]);
                let del = suffix[(i + 1) * width + j] + 1;
                let ins = suffix[i * width + j + 1] + 1;
                diag.min(del).min(ins)
            };
            suffix[i * width + j] = cell;
        }
    }

    let mut script = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = suffix[i * width + j];
        if i < n && j < m {
            let diag = suffix[(i + 1) * width + j + 1];
            if a[i] == b[j] && here == diag {
                script.push(AlignOp::Equal { src: i, tgt: j });
                i += 1;
                j += 1;
                continue;
            }
            if a[i] != b[j] && here == diag + 1 {
                script.push(AlignOp::Substitute { src: i, tgt: j });
                i += 1;
                j += 1;
                continue;
            }
        }
        if i < n && here == suffix[(i + 1) * width + j] + 1 {
            script.push(AlignOp::Delete { src: i });
            i += 1;
        } else {
            script.push(AlignOp::Insert { tgt: j });
            j += 1;
        }
    }
    (suffix[0], script)
}

/// Edit distance only, computed with two rolling rows.
pub fn distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Corpus word edit rate: the summed distances between each original
/// sentence and its counterpart, divided by the summed ORIGINAL lengths.
///
/// Values above 1 are possible when counterparts are much longer.
pub fn wer<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [String], &'a [String])>,
{
    let mut edits = 0usize;
    let mut words = 0usize;
    for (i, (original, other)) in pairs.into_iter().enumerate() {
        if original.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "wer: original sentence {i} is empty"
            )));
        }
        edits += distance(original, other);
        words += original.len();
    }
    if words == 0 {
        return Err(Error::EmptyInput("wer".into()));
    }
    Ok(edits as f64 / words as f64)
}

/// Convenience wrapper over two aligned sentence lists.
pub fn wer_lists(originals: &[Tokens], others: &[Tokens]) -> Result<f64> {
    if originals.len() != others.len() {
        return Err(Error::InvalidArgument(format!(
            "wer: {} originals vs {} counterparts",
            originals.len(),
            others.len()
        )));
    }
    wer(originals
        .iter()
        .zip(others)
        .map(|(a, b)| (a.as_slice(), b.as_slice())))
}

/// A single edit: replace source tokens `[start, end)` with `replacement`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Tokens,
}

/// Sorted, non-overlapping edits against one source sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EditSet {
    pub edits: Vec<Edit>,
}

impl EditSet {
    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.edits.iter()
    }
}

/// Groups each maximal run of non-equal alignment steps into one edit.
pub fn extract_edits(source: &[String], corrected: &[String]) -> EditSet {
    let (_, script) = levenshtein(source, corrected);
    edits_from_script(&script, source.len(), corrected)
}

pub(crate) fn edits_from_script(script: &[AlignOp], src_len: usize, corrected: &[String]) -> EditSet {
    let mut edits = Vec::new();
    let mut open: Option<Edit> = None;
    let mut src_pos = 0usize;
    for op in script {
        match *op {
            AlignOp::Equal { src, .. } => {
                if let Some(e) = open.take() {
                    edits.push(e);
                }
                src_pos = src + 1;
            }
            AlignOp::Substitute { src, tgt } => {
                let e = open.get_or_insert_with(|| Edit {
                    start: src,
                    end: src,
                    replacement: Vec::new(),
                });
                e.end = src + 1;
                e.replacement.push(corrected[tgt].clone());
                src_pos = src + 1;
            }
            AlignOp::Delete { src } => {
                let e = open.get_or_insert_with(|| Edit {
                    start: src,
                    end: src,
                    replacement: Vec::new(),
                });
                e.end = src + 1;
                src_pos = src + 1;
            }
            AlignOp::Insert { tgt } => {
                let e = open.get_or_insert_with(|| Edit {
                    start: src_pos,
                    end: src_pos,
                    replacement: Vec::new(),
                });
                e.replacement.push(corrected[tgt].clone());
            }
        }
    }
    if let Some(e) = open.take() {
        edits.push(e);
    }
    debug_assert!(edits.iter().all(|e| e.end <= src_len));
    EditSet { edits }
}

/// Applies a sorted, non-overlapping edit set to `source`.
pub fn apply_edits(source: &[String], edits: &EditSet) -> Tokens {
    let mut out = Vec::with_capacity(source.len());
    let mut pos = 0;
    for e in &edits.edits {
        out.extend_from_slice(&source[pos..e.start]);
        out.extend(e.replacement.iter().cloned());
        pos = e.end;
    }
    out.extend_from_slice(&source[pos..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
}

impl PrfScore {
    /// Builds a score from edit counts. An empty hypothesis has precision 1,
    /// an empty reference has recall 1.
    pub fn from_counts(matched: usize, hyp: usize, reference: usize, beta: f64) -> Self {
        let precision = if hyp == 0 { 1.0 } else { matched as f64 / hyp as f64 };
        let recall = if reference == 0 {
            1.0
        } else {
            matched as f64 / reference as f64
        };
        PrfScore {
            precision,
            recall,
            f_beta: f_beta(precision, recall, beta),
            beta,
        }
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    if precision + recall <= 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// Sentence-level exact-match precision/recall/F-beta.
pub fn prf(hyp: &EditSet, reference: &EditSet, beta: f64) -> PrfScore {
    let matched = matched_edits(hyp, reference);
    PrfScore::from_counts(matched, hyp.len(), reference.len(), beta)
}

fn matched_edits(hyp: &EditSet, reference: &EditSet) -> usize {
    let refs: HashSet<&Edit> = reference.edits.iter().collect();
    hyp.edits.iter().filter(|e| refs.contains(e)).count()
}

/// Micro-averaged edit counts accumulated over a test set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub matched: usize,
    pub hyp: usize,
    pub reference: usize,
}

impl EditCounts {
    pub fn add(&mut self, hyp: &EditSet, reference: &EditSet) {
        self.matched += matched_edits(hyp, reference);
        self.hyp += hyp.len();
        self.reference += reference.len();
    }

    pub fn score(&self, beta: f64) -> PrfScore {
        PrfScore::from_counts(self.matched, self.hyp, self.reference, beta)
    }
}

/// Corpus-level evaluation of hypotheses and references against shared sources.
pub fn evaluate_corpus(
    sources: &[Tokens],
    hypotheses: &[Tokens],
    references: &[Tokens],
    beta: f64,
) -> Result<EvalReport> {
    if sources.len() != hypotheses.len() || sources.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluate: {} sources, {} hypotheses, {} references",
            sources.len(),
            hypotheses.len(),
            references.len()
        )));
    }
    let mut counts = EditCounts::default();
    for ((src, hyp), reference) in sources.iter().zip(hypotheses).zip(references) {
        counts.add(&extract_edits(src, hyp), &extract_edits(src, reference));
    }
    let score = counts.score(beta);
    Ok(EvalReport {
        pairs: sources.len(),
        wer: wer_lists(hypotheses, references)?,
        precision: score.precision,
        recall: score.recall,
        f05: score.f_beta,
        counts,
    })
}

/// Evaluation report written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub wer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub counts: EditCounts,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    /// Enumerates every edit script (depth-first) and returns the cheapest cost.
    fn brute_force_distance(a: &[String], b: &[String]) -> usize {
        fn go(a: &[String], b: &[String], cost: usize, best: &mut usize) {
            if cost >= *best {
                return;
            }
            match (a.split_first(), b.split_first()) {
                (None, None) => *best = cost,
                (Some((x, ar)), Some((y, br))) => {
                    go(ar, br, cost + usize::from(x != y), best);
                    go(ar, b, cost + 1, best);
                    go(a, br, cost + 1, best);
                }
                (Some((_, ar)), None) => go(ar, b, cost + 1, best),
                (None, Some((_, br))) => go(a, br, cost + 1, best),
            }
        }
        let mut best = usize::MAX;
        go(a, b, 0, &mut best);
        best
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&toks("x"), &toks("x")).0, 0);
        let (d, script) = levenshtein(&toks("a b c"), &toks("a x c d"));
        assert_eq!(d, 2);
        assert_eq!(d, brute_force_distance(&toks("a b c"), &toks("a x c d")));
        assert_eq!(script.iter().map(AlignOp::cost).sum::<usize>(), 2);
        assert_eq!(levenshtein(&[] as &[String], &toks("a b")).0, 2);
    }

    #[test]
    fn substitution_is_preferred_over_delete_insert() {
        let (d, script) = levenshtein(&toks("a b c"), &toks("a x c"));
        assert_eq!(d, 1);
        assert_eq!(
            script,
            vec![
                AlignOp::Equal { src: 0, tgt: 0 },
                AlignOp::Substitute { src: 1, tgt: 1 },
                AlignOp::Equal { src: 2, tgt: 2 },
            ]
        );
    }

    #[test]
    fn wer_examples() {
        let y = toks("the cat sat");
        let y2 = toks("the cats sat down");
        assert!((wer([(y.as_slice(), y2.as_slice())]).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let same = toks("a b");
        assert_eq!(wer([(same.as_slice(), same.as_slice())]).unwrap(), 0.0);

        // (len 4, d=1) and (len 6, d=2)
        let a1 = toks("a b c d");
        let b1 = toks("a b c e");
        let a2 = toks("a b c d e f");
        let b2 = toks("a b c d");
        let w = wer([(a1.as_slice(), b1.as_slice()), (a2.as_slice(), b2.as_slice())]).unwrap();
        assert!((w - 0.3).abs() < 1e-12);
    }

    #[test]
    fn wer_rejects_empty_original() {
        let e: Tokens = vec![];
        let x = toks("a");
        assert!(wer([(e.as_slice(), x.as_slice())]).is_err());
    }

    #[test]
    fn extract_edits_examples() {
        assert!(extract_edits(&toks("a b c"), &toks("a b c")).is_empty());

        let one = extract_edits(&toks("I goes home"), &toks("I go home"));
        assert_eq!(one.edits, vec![Edit { start: 1, end: 2, replacement: toks("go") }]);

        // 5 tokens; delete "about" next to substitution of "a" -> "the"
        let src = toks("we discuss about a plan");
        let cor = toks("we discuss the plan");
        let set = extract_edits(&src, &cor);
        assert_eq!(set.edits, vec![Edit { start: 2, end: 4, replacement: toks("the") }]);
        assert_eq!(apply_edits(&src, &set), cor);
    }

    #[test]
    fn prf_examples() {
        let e = |s: usize, r: &str| Edit { start: s, end: s + 1, replacement: toks(r) };
        let set = EditSet { edits: vec![e(0, "a"), e(2, "b")] };
        let s = prf(&set, &set, 0.5);
        assert_eq!((s.precision, s.recall, s.f_beta), (1.0, 1.0, 1.0));

        let s = prf(&EditSet::default(), &set, 0.5);
        assert_eq!((s.precision, s.recall, s.f_beta), (1.0, 0.0, 0.0));

        // P = 1/2, R = 1/4
        let hyp = EditSet { edits: vec![e(0, "a"), e(1, "z")] };
        let reference = EditSet { edits: vec![e(0, "a"), e(2, "b"), e(3, "c"), e(4, "d")] };
        let s = prf(&hyp, &reference, 0.5);
        assert_eq!((s.precision, s.recall), (0.5, 0.25));
        assert!((s.f_beta - 1.25 * 0.5 * 0.25 / (0.25 * 0.5 + 0.25)).abs() < 1e-12);
        assert!((s.f_beta - 0.416_666_666_666).abs() < 1e-9);
    }

    fn seq() -> impl Strategy<Value = Tokens> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..=8)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn levenshtein_matches_brute_force(a in seq(), b in seq()) {
            let (d, script) = levenshtein(&a, &b);
            prop_assert_eq!(d, brute_force_distance(&a, &b));
            prop_assert_eq!(d, distance(&a, &b));
            prop_assert_eq!(script.iter().map(AlignOp::cost).sum::<usize>(), d);
        }

        #[test]
        fn levenshtein_is_a_metric(a in seq(), b in seq(), c in seq()) {
            prop_assert_eq!(distance(&a, &b), distance(&b, &a));
            prop_assert_eq!(distance(&a, &a), 0);
            prop_assert!(distance(&a, &c) <= distance(&a, &b) + distance(&b, &c));
            prop_assert_eq!(distance(&a, &b) == 0, a == b);
        }

        #[test]
        fn edits_round_trip(a in seq(), b in seq()) {
            let set = extract_edits(&a, &b);
            prop_assert_eq!(apply_edits(&a, &set), b);
            for w in set.edits.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            for e in &set.edits {
                prop_assert!(a[e.start..e.end] != e.replacement[..]);
            }
        }

        #[test]
        fn prf_is_monotone(base in prop::collection::btree_set(0usize..6, 0..4), refs in prop::collection::btree_set(0usize..6, 1..5), extra in 6usize..9) {
            let mk = |i: usize| Edit { start: i, end: i + 1, replacement: vec!["r".into()] };
            let reference = EditSet { edits: refs.iter().copied().map(mk).collect() };
            let hyp = EditSet { edits: base.iter().copied().map(mk).collect() };
            let before = prf(&hyp, &reference, 0.5);
            // adding a matching edit never lowers recall
            if let Some(m) = refs.iter().find(|r| !base.contains(r)) {
                let mut more = hyp.clone();
                more.edits.push(mk(*m));
                more.edits.sort();
                prop_assert!(prf(&more, &reference, 0.5).recall >= before.recall);
            }
            // adding a non-matching edit never raises precision
            let mut more = hyp.clone();
            more.edits.push(mk(extra));
            prop_assert!(prf(&more, &reference, 0.5).precision <= before.precision);
        }
    }
}
