//! Smoothed BLEU-4 and its keyword-weighted recall variant.

use std::collections::HashMap;

const EPSILON: f64 = 0.1;
const ORDERS: usize = 4;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn brevity_penalty(closest_ref_len: usize, hyp_len: usize) -> f64 {
    if hyp_len > closest_ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - closest_ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Geometric mean of the four precisions with method-1 smoothing (zero
/// numerators replaced by 0.1) times the brevity penalty.
fn combine(precisions: &[(f64, f64); ORDERS], bp: f64) -> f64 {
    if precisions[0].0 == 0.0 {
        return 0.0;
    }
    let log_sum: f64 = precisions
        .iter()
        .map(|&(num, den)| {
            let num = if num == 0.0 { num + EPSILON } else { num };
            0.25 * (num / den).ln()
        })
        .sum();
    bp * log_sum.exp()
}

/// Sentence-level BLEU-4 of `hypothesis` against a single reference.
pub fn sentence_bleu(reference: &[&str], hypothesis: &[&str]) -> f64 {
    let mut precisions = [(0.0, 0.0); ORDERS];
    for (i, p) in precisions.iter_mut().enumerate() {
        let n = i + 1;
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let clipped: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total: usize = hyp.values().sum();
        *p = (clipped as f64, total.max(1) as f64);
    }
    combine(&precisions, brevity_penalty(reference.len(), hypothesis.len()))
}

/// Keyword-weighted n-gram match. Unigram recall weights reference tokens by
/// `keyword_weight` when they are keywords and `other_weight` otherwise;
/// higher orders use plain recall.
///
/// The brevity penalty is computed against a reference length of 2. The
/// reference scorer passes `[tokens, weights]` pairs where it means token
/// lists, so the length it sees is the pair's length; this is kept for
/// conformance.
pub fn weighted_ngram_match(
    reference: &[&str],
    hypothesis: &[&str],
    is_keyword: impl Fn(&str) -> bool,
    keyword_weight: f64,
    other_weight: f64,
) -> f64 {
    let weight = |tok: &str| {
        if is_keyword(tok) {
            keyword_weight
        } else {
            other_weight
        }
    };
    let mut precisions = [(0.0, 0.0); ORDERS];
    for (i, p) in precisions.iter_mut().enumerate() {
        let n = i + 1;
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let (num, den) = if n == 1 {
            let num: f64 = refc
                .iter()
                .map(|(g, &c)| c.min(hyp.get(g).copied().unwrap_or(0)) as f64 * weight(g[0]))
                .sum();
            let den: f64 = refc.iter().map(|(g, &c)| c as f64 * weight(g[0])).sum();
            (num, den.max(1.0))
        } else {
            let num: usize = refc
                .iter()
                .map(|(g, &c)| c.min(hyp.get(g).copied().unwrap_or(0)))
                .sum();
            let den: usize = refc.values().sum();
            (num as f64, den.max(1) as f64)
        };
        *p = (num, den);
    }
    combine(&precisions, brevity_penalty(2, hypothesis.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_long_sentence_scores_one() {
        let t = toks("a b c d e f");
        assert!((sentence_bleu(&t, &t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_unigram_overlap_is_zero() {
        assert_eq!(sentence_bleu(&toks("a b c d"), &toks("w x y z")), 0.0);
    }

    #[test]
    fn short_identical_sentence_is_smoothed() {
        // p1 = 1, p2..p4 = 0.1 / 1 after smoothing
        let t = toks("pass");
        let expected = (0.75 * 0.1f64.ln()).exp();
        assert!((sentence_bleu(&t, &t) - expected).abs() < 1e-12);
    }

    #[test]
    fn nltk_documented_value() {
        // corpus value for this pair is documented as 0.4118...
        let hyp = toks("It is a guide to action which ensures that the military always obeys the commands of the party");
        let refr = toks("It is a guide to action that ensures that the military will forever heed Party commands");
        let s = sentence_bleu(&refr, &hyp);
        assert!((s - 0.4118).abs() < 1e-4, "{s}");
    }
}
