//! CodeBLEU for Python source.
//!
//! Four components are combined with [`CodeBleuWeights`]:
//!
//! * smoothed BLEU-4 over whitespace tokens,
//! * keyword-weighted n-gram match,
//! * syntax match over tree-sitter subtrees,
//! * data-flow match over def-use edges.
//!
//! Scores track the reference CodeBLEU scorer (`codebleu` 0.7 on PyPI with
//! tree-sitter-python 0.21). Two behaviours of that scorer are kept on
//! purpose: a data-flow score of exactly zero counts as 1.0 in the weighted
//! sum, and the keyword-weighted component uses a fixed reference length of 2
//! in its brevity penalty.
//!
//! Unlike the reference scorer, a candidate that fails to parse does not get
//! syntax and data-flow credit. Their weight is moved onto the two n-gram
//! components in proportion to the n-gram weights, and the fallback is
//! reported in [`Diagnostics`].

mod bleu;
pub mod dataflow;
mod keywords;
pub mod strip;
pub mod syntax;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::{Parser, Tree};

pub use keywords::PYTHON_KEYWORDS;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("weight {name} is negative or not finite: {value}")]
    Invalid { name: &'static str, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    BadSum(f64),
}

/// Component weights (n-gram, weighted n-gram, syntax, data-flow).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeBleuWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self {
            ngram: 0.25,
            weighted_ngram: 0.25,
            syntax: 0.25,
            dataflow: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn new(
        ngram: f64,
        weighted_ngram: f64,
        syntax: f64,
        dataflow: f64,
    ) -> Result<Self, WeightsError> {
        let w = Self {
            ngram,
            weighted_ngram,
            syntax,
            dataflow,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        for (name, value) in [
            ("ngram", self.ngram),
            ("weighted_ngram", self.weighted_ngram),
            ("syntax", self.syntax),
            ("dataflow", self.dataflow),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(WeightsError::Invalid { name, value });
            }
        }
        let sum = self.ngram + self.weighted_ngram + self.syntax + self.dataflow;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WeightsError::BadSum(sum));
        }
        Ok(())
    }
}

/// Flags describing how a score was obtained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// The candidate parse contains error or missing nodes.
    pub candidate_parse_error: bool,
    /// Syntax and data-flow weight were moved onto the n-gram components.
    pub fallback_applied: bool,
    /// The data-flow match was zero and entered the sum as 1.0.
    pub dataflow_degenerate: bool,
    /// Comment stripping failed for the candidate and the raw text was used.
    pub candidate_unstrippable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub codebleu: f64,
    pub ngram_match: f64,
    pub weighted_ngram_match: f64,
    pub syntax_match: f64,
    pub dataflow_match: f64,
    pub diagnostics: Diagnostics,
}

const KEYWORD_WEIGHT: f64 = 1.0;
const OTHER_WEIGHT: f64 = 0.2;

fn parse(code: &str) -> Tree {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::language())
        .expect("bundled grammar matches the tree-sitter ABI");
    parser
        .parse(code, None)
        .expect("parser has a language and no timeout")
}

/// Scores `candidate` against a single `reference`.
pub fn codebleu(candidate: &str, reference: &str, weights: &CodeBleuWeights) -> CodeBleuScore {
    let hyp = candidate.trim();
    let refr = reference.trim();
    let hyp_tokens: Vec<&str> = hyp.split_whitespace().collect();
    let ref_tokens: Vec<&str> = refr.split_whitespace().collect();

    let ngram_match = bleu::sentence_bleu(&ref_tokens, &hyp_tokens);
    let weighted_ngram_match = bleu::weighted_ngram_match(
        &ref_tokens,
        &hyp_tokens,
        keywords::is_keyword,
        KEYWORD_WEIGHT,
        OTHER_WEIGHT,
    );

    let mut diagnostics = Diagnostics::default();
    let hyp_clean = match strip::remove_comments_and_docstrings(hyp) {
        Ok(s) => s,
        Err(_) => {
            diagnostics.candidate_unstrippable = true;
            hyp.to_string()
        }
    };
    let ref_clean = strip::remove_comments_and_docstrings(refr).unwrap_or_else(|_| refr.to_string());

    let hyp_tree = parse(&hyp_clean);
    let ref_tree = parse(&ref_clean);
    diagnostics.candidate_parse_error = hyp_tree.root_node().has_error();

    let syntax_match = syntax::syntax_match(&hyp_tree, &ref_tree);
    let hyp_flow = dataflow::data_flow(&hyp_clean, &hyp_tree);
    let ref_flow = dataflow::data_flow(&ref_clean, &ref_tree);
    let (matched, total) = dataflow::dataflow_counts(&hyp_flow, &ref_flow);
    let dataflow_match = if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    };

    let combined = if diagnostics.candidate_parse_error {
        diagnostics.fallback_applied = true;
        let moved = weights.syntax + weights.dataflow;
        let base = weights.ngram + weights.weighted_ngram;
        let (a, b) = if base > 0.0 {
            (
                weights.ngram + moved * weights.ngram / base,
                weights.weighted_ngram + moved * weights.weighted_ngram / base,
            )
        } else {
            (moved / 2.0, moved / 2.0)
        };
        a * ngram_match + b * weighted_ngram_match
    } else {
        let flow_term = if dataflow_match == 0.0 {
            diagnostics.dataflow_degenerate = true;
            1.0
        } else {
            dataflow_match
        };
        weights.ngram * ngram_match
            + weights.weighted_ngram * weighted_ngram_match
            + weights.syntax * syntax_match
            + weights.dataflow * flow_term
    };

    CodeBleuScore {
        codebleu: combined,
        ngram_match,
        weighted_ngram_match,
        syntax_match,
        dataflow_match,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_programs_score_one() {
        let code = "def add(a, b):\n    total = a + b\n    return total\n";
        let s = codebleu(code, code, &CodeBleuWeights::default());
        assert!((s.codebleu - 1.0).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn unparseable_candidate_uses_ngram_only() {
        let s = codebleu(
            "def f(:\n  return",
            "def f(x):\n    return x",
            &CodeBleuWeights::default(),
        );
        assert!(s.diagnostics.fallback_applied);
        let expected = 0.5 * s.ngram_match + 0.5 * s.weighted_ngram_match;
        assert!((s.codebleu - expected).abs() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(CodeBleuWeights::new(0.5, 0.5, 0.5, 0.0).is_err());
        assert!(CodeBleuWeights::new(-0.25, 0.75, 0.25, 0.25).is_err());
        assert!(CodeBleuWeights::new(0.1, 0.2, 0.3, 0.4).is_ok());
    }

    #[test]
    fn score_stays_in_unit_interval() {
        let s = codebleu(
            "x = [i for i in range(10)]\nprint(sum(x))",
            "total = 0\nfor i in range(10):\n    total += i\nprint(total)",
            &CodeBleuWeights::default(),
        );
        assert!((0.0..=1.0).contains(&s.codebleu));
    }
}
