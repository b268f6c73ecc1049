use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Attempt, Origin, Trajectory};
use crate::sandbox::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub n_unique: usize,
    pub n_correct: usize,
    pub n_wrong: usize,
    /// Wrong solutions with at least one verified refinement.
    pub n_correct_refinement: usize,
    /// `n_correct_refinement / n_wrong`; null when there are no wrong
    /// solutions.
    pub refinement_rate: Option<f64>,
}

impl CollectionStats {
    pub fn from_counts(n_correct: usize, n_wrong: usize, n_correct_refinement: usize) -> Self {
        Self {
            n_unique: n_correct + n_wrong,
            n_correct,
            n_wrong,
            n_correct_refinement,
            refinement_rate: (n_wrong > 0).then(|| n_correct_refinement as f64 / n_wrong as f64),
        }
    }
}

/// Counts initial attempts by verdict, and wrong solutions that some
/// trajectory refined successfully (in any prompt mode).
pub fn compute_stats(attempts: &[Attempt], trajectories: &[Trajectory]) -> CollectionStats {
    let initial = attempts.iter().filter(|a| a.origin == Origin::Initial);
    let (mut n_correct, mut n_wrong) = (0, 0);
    for a in initial {
        match a.verdict {
            Verdict::Correct => n_correct += 1,
            Verdict::Wrong => n_wrong += 1,
        }
    }
    let refined: HashSet<&str> = trajectories
        .iter()
        .filter(|t| t.has_verified())
        .map(|t| t.wrong.id.as_str())
        .collect();
    CollectionStats::from_counts(n_correct, n_wrong, refined.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_wrong_solutions_gives_null_rate() {
        let s = CollectionStats::from_counts(5, 0, 0);
        assert_eq!(s.refinement_rate, None);
        assert_eq!(serde_json::to_value(&s).unwrap()["refinement_rate"], serde_json::Value::Null);
    }
}
